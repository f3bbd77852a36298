"""Synthetic graph generation and backdoor trigger injection.

Features follow a label-dependent distribution: every class mean is a
shared base vector plus a class-specific offset, per-dimension noise is
independent, and all values are clipped to [-feature_bound, feature_bound].
Topology is either a homophilous stochastic block model or a random
d-regular graph.

Triggers are small fresh subgraphs (clique or star) wired to chosen
target nodes. class_mimic triggers copy the empirical target-class mean
plus small noise; fixed_random triggers draw i.i.d. bounded noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, build_graph

MASK_LABELED_CLEAN = "labeled_clean"
MASK_LABELED_BACKDOOR = "labeled_backdoor"
MASK_TEST = "test"

TRIGGER_KINDS = ("class_mimic", "fixed_random")
TRIGGER_TOPOLOGIES = ("clique", "star")
TOPOLOGY_KINDS = ("sbm", "regular")


class SynthesisError(ValueError):
    """Invalid synthetic-graph or trigger configuration."""


@dataclass(frozen=True)
class SyntheticConfig:
    num_nodes: int = 2000
    num_classes: int = 7
    feature_dim: int = 64
    class_mean_separation: float = 2.0
    base_mean_norm: float = 3.0       # norm of the mean component shared by all classes
    feature_noise: float = 1.0        # per-dimension noise std before clipping
    feature_bound: float = 5.0
    topology: str = "sbm"             # "sbm" | "regular"
    intra_p: float = 0.0175
    inter_p: float = 0.00058
    regular_degree: int = 4
    labeled_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.topology not in TOPOLOGY_KINDS:
            raise SynthesisError(f"unknown topology {self.topology!r}")
        if self.num_classes < 1 or self.num_nodes < 1 or self.feature_dim < 1:
            raise SynthesisError("num_nodes, num_classes, feature_dim must be >= 1")
        if self.feature_bound <= 0:
            raise SynthesisError("feature_bound must be positive")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise SynthesisError("labeled_fraction must be in (0, 1]")


def class_means(config: SyntheticConfig) -> np.ndarray:
    """Per-class mean vectors (C, M): a shared base component plus a
    class-specific bump on dimension c, sized so that any two class means
    are exactly class_mean_separation apart."""
    c, m = config.num_classes, config.feature_dim
    if c > m:
        raise SynthesisError("feature_dim must be >= num_classes for distinct means")
    means = np.full((c, m), config.base_mean_norm / np.sqrt(m))
    bump = config.class_mean_separation / np.sqrt(2.0)
    means[np.arange(c), np.arange(c)] += bump
    return means


def _sbm_edges(rng: np.random.Generator, labels: np.ndarray,
               intra_p: float, inter_p: float) -> np.ndarray:
    n = labels.size
    # sample over the upper triangle in blocks to keep memory flat
    rows = []
    for u in range(n - 1):
        p = np.where(labels[u + 1:] == labels[u], intra_p, inter_p)
        hits = np.nonzero(rng.uniform(size=n - 1 - u) < p)[0]
        if hits.size:
            rows.append(np.stack([np.full(hits.size, u, dtype=np.int64),
                                  hits + u + 1], axis=1))
    return np.concatenate(rows) if rows else np.zeros((0, 2), dtype=np.int64)


def _regular_edges_on_ring(ring: np.ndarray, n: int, d: int) -> np.ndarray:
    """Simple d-regular circulant over the given ring order (even d uses
    offsets 1..d/2; odd d adds the n/2 chord, which requires even n)."""
    if d >= n:
        raise SynthesisError(f"regular degree {d} must be < num_nodes {n}")
    if (n * d) % 2 != 0:
        raise SynthesisError(f"no {d}-regular graph on {n} nodes (odd stub count)")
    idx = np.arange(n, dtype=np.int64)
    rows = []
    for offset in range(1, d // 2 + 1):
        rows.append(np.stack([ring[idx], ring[(idx + offset) % n]], axis=1))
    if d % 2 == 1:
        half = idx[: n // 2]
        rows.append(np.stack([ring[half], ring[half + n // 2]], axis=1))
    edges = np.concatenate(rows)
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


def gen_synthetic_graph(config: SyntheticConfig) -> Graph:
    """Generate an assumption-conformant attributed graph with
    labeled/test masks split labeled_fraction : rest.

    SBM topology wires nodes by label with intra/inter probabilities.
    Regular topology builds a relabeled circulant lattice and lays the
    classes out in contiguous blocks along the ring, so that a d-regular
    graph is homophilous away from the block boundaries.
    """
    rng = np.random.default_rng(config.seed)
    n, c, m = config.num_nodes, config.num_classes, config.feature_dim
    labels = rng.integers(0, c, size=n)
    if config.topology == "sbm":
        edges = _sbm_edges(rng, labels, config.intra_p, config.inter_p)
    else:
        ring = rng.permutation(n).astype(np.int64)
        labels = labels.copy()
        labels[ring] = np.sort(labels)  # contiguous class blocks along the ring
        edges = _regular_edges_on_ring(ring, n, config.regular_degree)
    means = class_means(config)
    x = means[labels] + rng.normal(0.0, config.feature_noise, size=(n, m))
    np.clip(x, -config.feature_bound, config.feature_bound, out=x)
    perm = rng.permutation(n)
    n_labeled = int(round(config.labeled_fraction * n))
    masks = {MASK_LABELED_CLEAN: np.sort(perm[:n_labeled]),
             MASK_TEST: np.sort(perm[n_labeled:])}
    return build_graph(edges, x, labels, masks, num_classes=c)


def split_graph(graph: Graph) -> tuple[Graph, np.ndarray, Graph, np.ndarray]:
    """Inductive split: the labeled mask becomes the training graph, the
    test mask becomes the disjoint unseen graph (both induced subgraphs).

    Returns (train_graph, train_ids, unseen_graph, unseen_ids) where the
    id arrays map back to the parent graph.
    """
    from .graph import induced_subgraph
    labeled = graph.masks.get(MASK_LABELED_CLEAN, np.zeros(0, dtype=np.int64))
    test = graph.masks.get(MASK_TEST, np.zeros(0, dtype=np.int64))
    if labeled.size == 0 or test.size == 0:
        raise SynthesisError("split requires nonempty labeled_clean and test masks")
    if np.intersect1d(labeled, test).size:
        raise SynthesisError("labeled and test masks overlap")
    train_graph, train_ids = induced_subgraph(graph, labeled,
                                              mask_name=MASK_LABELED_CLEAN)
    unseen_graph, unseen_ids = induced_subgraph(graph, test, mask_name=MASK_TEST)
    return train_graph, train_ids, unseen_graph, unseen_ids


@dataclass(frozen=True)
class TriggerSpec:
    kind: str = "class_mimic"
    trigger_size: int = 3
    attach_edges: int = 1
    internal_topology: str = "clique"
    mimic_noise_scale: float = 0.1    # trigger noise std as a fraction of feature noise
    # per-instance extra noise spread: each injected trigger draws its own
    # scale from [mimic_noise_scale, mimic_noise_scale + mimic_noise_spread],
    # emulating sample-specific trigger generators whose training triggers
    # vary while sharing a common template
    mimic_noise_spread: float = 0.0
    # attacker-side template for mimic features; when None, the empirical
    # target-class mean of the graph being poisoned is used. The attacker
    # estimates this once on the training graph and reuses it everywhere.
    mimic_template: np.ndarray | None = field(default=None, repr=False,
                                              compare=False)

    def __post_init__(self):
        if self.kind not in TRIGGER_KINDS:
            raise SynthesisError(f"unknown trigger kind {self.kind!r}")
        if self.internal_topology not in TRIGGER_TOPOLOGIES:
            raise SynthesisError(f"unknown trigger topology {self.internal_topology!r}")
        if self.trigger_size < 1:
            raise SynthesisError("trigger_size must be >= 1")
        if not 1 <= self.attach_edges <= self.trigger_size:
            raise SynthesisError("attach_edges must be in [1, trigger_size]")


@dataclass(frozen=True)
class PoisonedGraph:
    """A graph with triggers merged in plus the ground-truth backdoor
    bookkeeping needed for evaluation."""

    graph: Graph
    poisoned_nodes: np.ndarray    # targets that received a trigger
    trigger_edges: np.ndarray     # (T, 2) edges linking triggers to targets
    trigger_node_ids: np.ndarray  # fresh nodes appended for the triggers
    target_class: int
    spec: TriggerSpec | None = None
    seed: int = 0


def mimic_template_for(graph: Graph, target_class: int) -> np.ndarray:
    """Empirical target-class feature mean, the attacker's mimic template."""
    cls = np.nonzero(graph.labels == target_class)[0]
    if cls.size == 0:
        raise SynthesisError("no labeled nodes of the target class")
    return graph.features[cls].mean(axis=0)


def _trigger_internal_edges(spec: TriggerSpec, base: int) -> list[tuple[int, int]]:
    size = spec.trigger_size
    if size == 1:
        return []
    if spec.internal_topology == "clique":
        return [(base + i, base + j) for i in range(size) for j in range(i + 1, size)]
    return [(base, base + j) for j in range(1, size)]  # star around the first node


def _trigger_features(rng: np.random.Generator, spec: TriggerSpec,
                      num_triggers: int, feature_dim: int, bound: float,
                      mimic_mean: np.ndarray | None,
                      noise_std: float) -> np.ndarray:
    count = num_triggers * spec.trigger_size
    if spec.kind == "fixed_random":
        feats = rng.uniform(-bound, bound, size=(count, feature_dim))
    else:
        if mimic_mean is None:
            raise SynthesisError("class_mimic needs at least one labeled "
                                 "target-class node to estimate the mean")
        scales = spec.mimic_noise_scale + spec.mimic_noise_spread * \
            rng.uniform(size=num_triggers)
        per_node = np.repeat(scales, spec.trigger_size) * noise_std
        feats = mimic_mean[None, :] + per_node[:, None] * \
            rng.normal(0.0, 1.0, size=(count, feature_dim))
    np.clip(feats, -bound, bound, out=feats)
    return feats


def _attach_triggers(graph: Graph, targets: np.ndarray, spec: TriggerSpec,
                     target_class: int, seed: int, relabel: bool) -> PoisonedGraph:
    """Append one fresh trigger subgraph per target and wire it up."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    n0 = graph.num_nodes
    m = graph.feature_dim
    bound = graph.feature_bound if graph.feature_bound > 0 else 1.0
    mimic_mean = None
    noise_std = 1.0
    if spec.kind == "class_mimic":
        if spec.mimic_template is not None:
            mimic_mean = np.asarray(spec.mimic_template, dtype=np.float64)
            if mimic_mean.shape != (m,):
                raise SynthesisError("mimic_template dimension does not "
                                     "match the graph features")
        else:
            cls = np.nonzero(graph.labels == target_class)[0]
            if cls.size == 0:
                raise SynthesisError("class_mimic needs at least one labeled "
                                     "target-class node to estimate the mean")
            mimic_mean = graph.features[cls].mean(axis=0)
        # feature scale: median per-dimension std, robust to the few
        # class-signal dimensions dominating the global spread
        noise_std = float(np.median(graph.features.std(axis=0)))

    count = targets.size * spec.trigger_size
    new_feats = _trigger_features(rng, spec, targets.size, m, bound,
                                  mimic_mean, noise_std)
    new_edges: list[tuple[int, int]] = []
    trig_edges: list[tuple[int, int]] = []
    for t_idx, target in enumerate(targets):
        base = n0 + t_idx * spec.trigger_size
        new_edges.extend(_trigger_internal_edges(spec, base))
        for a in range(spec.attach_edges):
            e = (int(target), base + a)
            new_edges.append(e)
            trig_edges.append((min(e), max(e)))

    features = np.concatenate([graph.features, new_feats], axis=0)
    labels = np.concatenate([graph.labels,
                             np.full(count, -1, dtype=np.int64)])
    all_edges = np.concatenate(
        [graph.edges,
         np.array(new_edges, dtype=np.int64).reshape(-1, 2)], axis=0) \
        if new_edges else graph.edges.copy()
    masks = {k: v.copy() for k, v in graph.masks.items()}
    if relabel and targets.size:
        labels[targets] = target_class
        clean = masks.get(MASK_LABELED_CLEAN, np.zeros(0, dtype=np.int64))
        masks[MASK_LABELED_CLEAN] = np.setdiff1d(clean, targets)
        prior = masks.get(MASK_LABELED_BACKDOOR, np.zeros(0, dtype=np.int64))
        masks[MASK_LABELED_BACKDOOR] = np.union1d(prior, targets)
    poisoned = build_graph(all_edges, features, labels, masks,
                           num_classes=graph.num_classes)
    trig = (np.array(sorted(trig_edges), dtype=np.int64)
            if trig_edges else np.zeros((0, 2), dtype=np.int64))
    return PoisonedGraph(graph=poisoned,
                         poisoned_nodes=np.sort(targets.astype(np.int64)),
                         trigger_edges=trig,
                         trigger_node_ids=np.arange(n0, n0 + count, dtype=np.int64),
                         target_class=int(target_class),
                         spec=spec, seed=seed)


def inject_backdoor(graph: Graph, spec: TriggerSpec, budget: int,
                    target_class: int, seed: int) -> PoisonedGraph:
    """Poison `budget` labeled non-target-class nodes chosen uniformly at
    random: attach a fresh trigger to each and relabel it target_class."""
    if budget < 0:
        raise SynthesisError("budget must be >= 0")
    if not 0 <= target_class < graph.num_classes:
        raise SynthesisError(f"target_class {target_class} out of range")
    if MASK_LABELED_CLEAN in graph.masks:
        labeled = graph.masks[MASK_LABELED_CLEAN]
    else:
        labeled = graph.labeled_nodes()
    eligible = labeled[graph.labels[labeled] != target_class]
    if budget > eligible.size:
        raise SynthesisError(f"budget {budget} exceeds {eligible.size} "
                             "eligible labeled non-target nodes")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    targets = rng.choice(eligible, size=budget, replace=False) if budget else \
        np.zeros(0, dtype=np.int64)
    return _attach_triggers(graph, targets, spec, target_class, seed,
                            relabel=True)


def poison_unseen(graph_u: Graph, spec: TriggerSpec, fraction: float,
                  target_class: int, seed: int) -> PoisonedGraph:
    """Attach triggers to a fraction of the unseen graph's test nodes.

    Ground-truth labels are retained (no relabeling): attack success is
    judged against them downstream. The untouched test nodes stay clean
    for accuracy measurement.
    """
    if not 0.0 < fraction <= 1.0:
        raise SynthesisError("fraction must be in (0, 1]")
    test = graph_u.masks.get(MASK_TEST, np.zeros(0, dtype=np.int64))
    if test.size == 0:
        raise SynthesisError("unseen graph has an empty test mask")
    count = int(round(fraction * test.size))
    if count == 0:
        raise SynthesisError(f"fraction {fraction} selects zero of "
                             f"{test.size} test nodes")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    targets = rng.choice(test, size=count, replace=False)
    return _attach_triggers(graph_u, targets, spec, target_class, seed,
                            relabel=False)
