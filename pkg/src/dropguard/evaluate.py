"""Metrics, the cosine-similarity pruning baseline, and Monte-Carlo
checks of the three statistical properties behind the defense:

1. expectation preservation: under the expectation-preserving degree
   renormalization, the mean perturbed first-layer pre-activation matches
   the unperturbed one;
2. concentration: the deviation of a perturbed neighbor-mean embedding
   from its expectation obeys a Hoeffding-style tail bound driven by the
   realized kept degree, the feature bound and the spectral norm of the
   weight matrix;
3. drop counting: the number of rounds that remove a given attachment
   edge is Binomial(K, drop_prob) with mean K * drop_prob.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .detect import DetectionResult
from .graph import (Graph, WITHOUT_SELF_LOOPS, _graph_from_canonical,
                    edge_keep_mask, sym_normalize)
from .nn import GcnModel, forward, spectral_norm
from .synth import MASK_TEST, PoisonedGraph


class EvalError(ValueError):
    pass


@dataclass
class Metrics:
    """asr: fraction of trigger-attached unseen nodes (true label != the
    target class) predicted as the target class; clean_acc: accuracy on
    untouched unseen nodes; recall/precision: candidate set vs ground
    truth."""

    asr: float | None = None
    clean_acc: float | None = None
    recall: float | None = None
    precision: float | None = None
    timings: dict | None = None

    def as_dict(self) -> dict:
        return {"asr": self.asr, "clean_acc": self.clean_acc,
                "recall": self.recall, "precision": self.precision,
                "timings": self.timings}


def evaluate(model_f: GcnModel, poisoned_unseen: PoisonedGraph,
             target_class: int) -> Metrics:
    """ASR and clean accuracy of a model on a half-poisoned unseen graph.

    Trigger-attached test nodes whose true label already equals the
    target class are excluded from the ASR denominator.
    """
    g = poisoned_unseen.graph
    out = forward(model_f, sym_normalize(g, model_f.norm_mode), g.features)
    pred = out.predictions
    test = g.masks.get(MASK_TEST, np.zeros(0, dtype=np.int64))
    poisoned = poisoned_unseen.poisoned_nodes
    clean = np.setdiff1d(test, poisoned)
    attacked = poisoned[g.labels[poisoned] != target_class]
    if attacked.size == 0:
        raise EvalError("no trigger-attached test nodes with true label "
                        "different from the target class")
    if clean.size == 0:
        raise EvalError("no clean test nodes")
    asr = float((pred[attacked] == target_class).mean())
    acc = float((pred[clean] == g.labels[clean]).mean())
    return Metrics(asr=asr, clean_acc=acc)


def detection_metrics(result: DetectionResult,
                      ground_truth: PoisonedGraph) -> dict:
    """Recall and precision of the candidate set against the true
    poisoned node set. Both default to 1.0 when both sets are empty; an
    empty candidate set against a nonempty truth is flagged degenerate."""
    cands = set(result.candidates.tolist())
    truth = set(ground_truth.poisoned_nodes.tolist())
    hit = len(cands & truth)
    degenerate = False
    if not truth:
        recall = 1.0
    else:
        recall = hit / len(truth)
    if not cands:
        precision = 1.0 if not truth else 0.0
        degenerate = bool(truth)
    else:
        precision = hit / len(cands)
    return {"recall": recall, "precision": precision, "degenerate": degenerate}


def prune_defense(graph: Graph, cosine_threshold: float) -> Graph:
    """Remove every edge whose endpoint feature cosine similarity falls
    below the threshold. A zero-norm feature row gets similarity 0, so
    its edges survive unless the threshold is positive."""
    if not -1.0 <= cosine_threshold <= 1.0:
        raise EvalError("cosine_threshold must be in [-1, 1]")
    if graph.num_edges == 0:
        return graph
    x = graph.features
    norms = np.linalg.norm(x, axis=1)
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    denom = norms[u] * norms[v]
    sims = np.zeros(graph.num_edges)
    ok = denom > 0
    sims[ok] = (x[u[ok]] * x[v[ok]]).sum(axis=1) / denom[ok]
    keep = sims >= cosine_threshold
    return _graph_from_canonical(graph.num_nodes, graph.edges[keep].copy(),
                                 graph.features, graph.labels,
                                 graph.num_classes, graph.masks)


def edge_cosine_similarities(graph: Graph, edges: np.ndarray) -> np.ndarray:
    """Cosine similarity of feature rows across the given edges."""
    x = graph.features
    norms = np.linalg.norm(x, axis=1)
    u, v = edges[:, 0], edges[:, 1]
    denom = norms[u] * norms[v]
    sims = np.zeros(edges.shape[0])
    ok = denom > 0
    sims[ok] = (x[u[ok]] * x[v[ok]]).sum(axis=1) / denom[ok]
    return sims


def check_theorem_1(graph: Graph, model_b: GcnModel, drop_prob: float,
                    replications: int = 5000, seed: int = 0,
                    nodes: np.ndarray | None = None,
                    node_pass_fraction: float = 0.99) -> dict:
    """Expectation preservation of the first-layer pre-activation.

    Perturbed rounds use the expectation-preserving renormalization: the
    unperturbed symmetric coefficients on the kept edges divided by the
    keep probability. The Monte-Carlo mean over R rounds must sit within
    5 standard errors of the unperturbed pre-activation in every
    coordinate, for at least node_pass_fraction of the nodes.
    """
    if model_b.norm_mode != WITHOUT_SELF_LOOPS:
        raise EvalError("expectation check requires a without_self_loops model")
    if not 0.0 <= drop_prob < 1.0:
        raise EvalError("drop_prob must be in [0, 1) for the renormalized check")
    if nodes is None:
        nodes = np.arange(graph.num_nodes)
    norm = sym_normalize(graph, WITHOUT_SELF_LOOPS)
    zx = graph.features @ model_b.layers[0]
    base = norm.matrix @ zx

    mat = norm.matrix.tocoo()
    src, dst, vals = mat.row, mat.col, mat.data
    # map each directed incidence back to its canonical undirected edge
    lo = np.minimum(src, dst).astype(np.int64)
    hi = np.maximum(src, dst).astype(np.int64)
    key = lo * (graph.num_nodes + 1) + hi
    edge_key = (graph.edges[:, 0] * (graph.num_nodes + 1) + graph.edges[:, 1])
    edge_of_incidence = np.searchsorted(edge_key, key)

    total = np.zeros_like(base)
    total_sq = np.zeros_like(base)
    scale = 1.0 / (1.0 - drop_prob)
    for k in range(1, replications + 1):
        keep_edges = edge_keep_mask(graph.num_edges, drop_prob, seed, k)
        keep_inc = keep_edges[edge_of_incidence]
        m = sp.csr_matrix((vals[keep_inc] * scale,
                           (src[keep_inc], dst[keep_inc])),
                          shape=(graph.num_nodes, graph.num_nodes))
        hk = m @ zx
        total += hk
        total_sq += hk * hk
    mean = total / replications
    var = np.maximum(total_sq / replications - mean * mean, 0.0)
    var *= replications / max(replications - 1, 1)
    se = np.sqrt(var / replications)
    dev = np.abs(mean - base)
    # the equality guard absorbs accumulation rounding when every round
    # reproduces the unperturbed value exactly (drop_prob = 0)
    exact = dev <= 1e-9 * (np.abs(base) + 1.0)
    coord_ok = exact | (dev < 5.0 * se)
    node_ok = coord_ok[nodes].all(axis=1)
    frac = float(node_ok.mean()) if nodes.size else 1.0
    return {"passed": bool(frac >= node_pass_fraction),
            "fraction_nodes_ok": frac,
            "max_deviation": float(dev[nodes].max()) if nodes.size else 0.0,
            "replications": replications,
            "drop_prob": drop_prob}


def check_theorem_2(graph: Graph, model_b: GcnModel, drop_prob: float,
                    t_grid: np.ndarray | None = None,
                    replications: int = 2000, seed: int = 0,
                    expected_feature_mean: np.ndarray | None = None) -> dict:
    """Hoeffding-style tail bound on perturbed neighbor-mean embeddings.

    Per round, each node's embedding is its kept neighbors' feature mean
    through the first-layer weights (zero row when everything dropped);
    deviations are measured against the analytic expectation
    expected_feature_mean @ W. For every node and every t, the empirical
    tail frequency must not exceed the per-round average of
    min(1, 2 M exp(-deg_k t^2 / (2 rho^2 B^2 M))). Also reports the
    degree trend: median deviation among high realized degrees vs low.
    """
    w = model_b.layers[0]
    rho = spectral_norm(w)
    m_dim = graph.feature_dim
    bound_b = graph.feature_bound
    if bound_b <= 0 or rho == 0:
        raise EvalError("degenerate feature bound or weight matrix")
    mu = (np.zeros(m_dim) if expected_feature_mean is None
          else np.asarray(expected_feature_mean, dtype=np.float64))
    center = mu @ w
    if t_grid is None:
        deg_ref = max(float(np.median(graph.degrees)), 1.0)
        t_star = rho * bound_b * np.sqrt(m_dim / deg_ref)
        t_grid = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0]) * t_star
    t_grid = np.asarray(t_grid, dtype=np.float64)

    n = graph.num_nodes
    xw = graph.features @ w
    deviations = np.empty((replications, n))
    kept_degrees = np.empty((replications, n), dtype=np.int64)
    for k in range(1, replications + 1):
        keep = edge_keep_mask(graph.num_edges, drop_prob, seed, k)
        kept = graph.edges[keep]
        deg = np.zeros(n)
        if kept.shape[0]:
            np.add.at(deg, kept[:, 0], 1.0)
            np.add.at(deg, kept[:, 1], 1.0)
        inv = np.zeros(n)
        nz = deg > 0
        inv[nz] = 1.0 / deg[nz]
        rows = np.concatenate([kept[:, 0], kept[:, 1]])
        cols = np.concatenate([kept[:, 1], kept[:, 0]])
        mat = sp.csr_matrix((inv[rows], (rows, cols)), shape=(n, n))
        hk = mat @ xw
        hk[~nz] = 0.0
        diff = hk - center[None, :]
        diff[~nz] = 0.0  # fully isolated rounds carry no neighbor evidence
        deviations[k - 1] = np.linalg.norm(diff, axis=1)
        kept_degrees[k - 1] = deg.astype(np.int64)

    denom = 2.0 * rho * rho * bound_b * bound_b * m_dim
    violations = 0
    worst_margin = np.inf
    for t in t_grid:
        freq = (deviations >= t).mean(axis=0) if t > 0 else np.ones(n)
        raw = 2.0 * m_dim * np.exp(-(kept_degrees * t * t) / denom)
        bound = np.minimum(raw, 1.0).mean(axis=0)
        margin = bound - freq
        worst_margin = min(worst_margin, float(margin.min()))
        violations += int((freq > bound + 1e-12).sum())

    med_deg = np.median(kept_degrees)
    high = deviations[kept_degrees > med_deg]
    low = deviations[kept_degrees <= med_deg]
    trend_ok = bool(high.size and low.size
                    and np.median(high) < np.median(low))
    return {"passed": violations == 0,
            "violations": violations,
            "worst_margin": worst_margin,
            "degree_trend_ok": trend_ok,
            "median_deviation_high_degree": float(np.median(high)) if high.size else None,
            "median_deviation_low_degree": float(np.median(low)) if low.size else None,
            "spectral_norm": rho,
            "t_grid": t_grid.tolist(),
            "replications": replications,
            "drop_prob": drop_prob}


def check_theorem_3(iterations: int, drop_prob: float,
                    replications: int = 10_000, seed: int = 0) -> dict:
    """Empirical mean drop count of a single attachment edge over K
    rounds vs the Binomial mean K * drop_prob, within 3 standard errors."""
    if iterations < 1:
        raise EvalError("iterations must be >= 1")
    if replications < 2:
        raise EvalError("replications must be >= 2")
    # exercise the real drop machinery on a small graph; watch edge 0
    edges = np.array([[0, 1], [1, 2], [2, 3], [0, 3]], dtype=np.int64)
    counts = np.empty(replications)
    for r in range(replications):
        dropped = 0
        for k in range(1, iterations + 1):
            keep = edge_keep_mask(edges.shape[0], drop_prob, seed + r, k)
            dropped += int(~keep[0])
        counts[r] = dropped
    expected = iterations * drop_prob
    se = np.sqrt(iterations * drop_prob * (1.0 - drop_prob) / replications)
    mean = float(counts.mean())
    tol = 3.0 * se
    passed = bool(abs(mean - expected) <= tol) if se > 0 else bool(mean == expected)
    return {"passed": passed, "mean": mean, "expected": expected,
            "tolerance": float(tol), "replications": replications,
            "iterations": iterations, "drop_prob": drop_prob}
