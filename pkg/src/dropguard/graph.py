"""Immutable undirected attributed graphs, symmetric normalization, and
edge-dropping perturbations.

Edges are stored canonically as (u, v) pairs with u < v, lexicographically
sorted, with a CSR view over both directed incidences for traversal. All
perturbation draws come from a counter-based Philox stream keyed by
(seed, iteration_index), so the decision for edge e is the e-th draw of
that stream: reproducible and independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

WITH_SELF_LOOPS = "with_self_loops"
WITHOUT_SELF_LOOPS = "without_self_loops"
NORM_MODES = (WITH_SELF_LOOPS, WITHOUT_SELF_LOOPS)


class GraphError(ValueError):
    """Invalid graph construction or graph operation input."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def canonical_edges(edge_list: Iterable[Sequence[int]] | np.ndarray,
                    num_nodes: int) -> np.ndarray:
    """Return a deduplicated (E, 2) int64 array with u < v, lexsorted.

    Self-loops are discarded; (u, v) and (v, u) collapse to one edge.
    Raises GraphError on out-of-range endpoints.
    """
    arr = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray)
                     else edge_list, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if arr.min() < 0 or arr.max() >= num_nodes:
        raise GraphError(
            f"edge endpoint out of range [0, {num_nodes}): "
            f"min={arr.min()}, max={arr.max()}")
    arr = arr[arr[:, 0] != arr[:, 1]]
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    arr = np.stack([lo, hi], axis=1)
    if arr.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.unique(arr, axis=0)
    return arr


def _build_csr(num_nodes: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CSR over both directed incidences, neighbor lists sorted."""
    if edges.shape[0] == 0:
        return np.zeros(num_nodes + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src = src[order]
    dst = dst[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, dst


@dataclass(frozen=True)
class Graph:
    """Undirected attributed graph with node features, labels and masks.

    labels use -1 for unlabeled nodes. masks maps a name (labeled_clean,
    labeled_backdoor, test, ...) to a sorted array of node ids; mask sets
    are disjoint.
    """

    num_nodes: int
    edges: np.ndarray             # (E, 2) canonical
    features: np.ndarray          # (N, M) float64
    labels: np.ndarray            # (N,) int64, -1 = unlabeled
    num_classes: int
    masks: dict[str, np.ndarray]
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    feature_bound: float = 0.0    # observed max |feature|

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def labeled_nodes(self) -> np.ndarray:
        return np.nonzero(self.labels >= 0)[0]

    def edge_index(self, u: int, v: int) -> int:
        """Index of canonical edge (min(u,v), max(u,v)); GraphError if absent."""
        a, b = (u, v) if u < v else (v, u)
        i = np.searchsorted(self.edges[:, 0] * (self.num_nodes + 1) + self.edges[:, 1],
                            a * (self.num_nodes + 1) + b)
        if i >= self.num_edges or self.edges[i, 0] != a or self.edges[i, 1] != b:
            raise GraphError(f"edge ({u}, {v}) not in graph")
        return int(i)

    def has_edge(self, u: int, v: int) -> bool:
        try:
            self.edge_index(u, v)
            return True
        except GraphError:
            return False


def _graph_from_canonical(num_nodes: int, edges: np.ndarray, features: np.ndarray,
                          labels: np.ndarray, num_classes: int,
                          masks: dict[str, np.ndarray]) -> Graph:
    """Fast constructor for edges already canonical; no validation."""
    indptr, indices = _build_csr(num_nodes, edges)
    bound = float(np.abs(features).max()) if features.size else 0.0
    masks = {k: _freeze(np.sort(np.asarray(v, dtype=np.int64)))
             for k, v in masks.items()}
    return Graph(num_nodes=num_nodes, edges=_freeze(edges),
                 features=_freeze(features), labels=_freeze(labels),
                 num_classes=num_classes, masks=masks,
                 indptr=_freeze(indptr), indices=_freeze(indices),
                 feature_bound=bound)


def build_graph(edge_list, features, labels, masks=None,
                num_classes: int | None = None) -> Graph:
    """Construct a canonical Graph.

    Deduplicates edges, strips self-loops, builds the CSR view and checks
    invariants: feature row count equals node count, labels in range, mask
    sets disjoint and in range.
    """
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if features.ndim != 2:
        raise GraphError("features must be a 2-d matrix"
                         f" (got ndim={features.ndim})")
    num_nodes = features.shape[0]
    labels = np.asarray(labels, dtype=np.int64).copy()
    if labels.shape != (num_nodes,):
        raise GraphError(f"labels shape {labels.shape} != ({num_nodes},)")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if (labels >= 0).any() else 0
    if (labels >= num_classes).any():
        raise GraphError("label id exceeds num_classes")
    edges = canonical_edges(edge_list, num_nodes)
    masks = dict(masks or {})
    seen: set[int] = set()
    for name, ids in masks.items():
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= num_nodes):
            raise GraphError(f"mask {name!r} contains out-of-range node id")
        overlap = seen.intersection(ids.tolist())
        if overlap:
            raise GraphError(f"mask {name!r} overlaps another mask: {sorted(overlap)[:5]}")
        seen.update(ids.tolist())
    return _graph_from_canonical(num_nodes, edges, features, labels,
                                 num_classes, masks)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetric-normalized adjacency: coefficients 1/sqrt(deg(i) deg(j)).

    In without_self_loops mode the diagonal is identically zero and an
    isolated node gets an all-zero row. In with_self_loops mode degrees and
    edges include the self-loop.
    """

    mode: str
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]


def _normalized_csr(num_nodes: int, edges: np.ndarray, mode: str) -> sp.csr_matrix:
    if mode not in NORM_MODES:
        raise GraphError(f"unknown normalization mode {mode!r}")
    deg = np.zeros(num_nodes, dtype=np.float64)
    if edges.shape[0]:
        np.add.at(deg, edges[:, 0], 1.0)
        np.add.at(deg, edges[:, 1], 1.0)
    if mode == WITH_SELF_LOOPS:
        deg = deg + 1.0
        inv_sqrt = 1.0 / np.sqrt(deg)
        rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(num_nodes)])
        cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(num_nodes)])
    else:
        inv_sqrt = np.zeros(num_nodes, dtype=np.float64)
        nz = deg > 0
        inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(num_nodes, num_nodes))
    return mat


def sym_normalize(graph: Graph, mode: str) -> NormalizedAdjacency:
    """Symmetric normalization of the graph adjacency in the given mode."""
    return NormalizedAdjacency(mode=mode,
                               matrix=_normalized_csr(graph.num_nodes, graph.edges, mode))


@dataclass(frozen=True)
class DropSpec:
    """Randomized edge-drop noise: each edge dropped independently with
    probability drop_prob, repeated for `iterations` rounds."""

    drop_prob: float
    iterations: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise GraphError(f"drop_prob must be in [0, 1], got {self.drop_prob}")
        if self.iterations < 1:
            raise GraphError(f"iterations must be >= 1, got {self.iterations}")


def edge_keep_mask(num_edges: int, drop_prob: float, seed: int,
                   iteration_index: int) -> np.ndarray:
    """Boolean keep mask over canonical edges for one perturbation round.

    Edge e is dropped iff the e-th uniform draw of the Philox stream keyed
    by (seed, iteration_index) falls below drop_prob, so the same triple
    always yields the same decision.
    """
    if not 0.0 <= drop_prob <= 1.0:
        raise GraphError(f"drop_prob must be in [0, 1], got {drop_prob}")
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(iteration_index & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.uniform(size=num_edges) >= drop_prob


@dataclass(frozen=True)
class PerturbedGraph:
    """A parent graph with a subset of edges kept; degrees recomputed on
    the kept set."""

    parent: Graph
    keep_mask: np.ndarray   # (E,) bool over parent's canonical edges

    @property
    def kept_edges(self) -> np.ndarray:
        return self.parent.edges[self.keep_mask]

    @property
    def dropped_edges(self) -> np.ndarray:
        return self.parent.edges[~self.keep_mask]

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.parent.num_nodes, dtype=np.int64)
        kept = self.kept_edges
        if kept.shape[0]:
            np.add.at(deg, kept[:, 0], 1)
            np.add.at(deg, kept[:, 1], 1)
        return deg

    def as_graph(self) -> Graph:
        p = self.parent
        return _graph_from_canonical(p.num_nodes, self.kept_edges.copy(),
                                     p.features, p.labels, p.num_classes, p.masks)

    def normalized(self, mode: str) -> NormalizedAdjacency:
        return NormalizedAdjacency(
            mode=mode,
            matrix=_normalized_csr(self.parent.num_nodes, self.kept_edges, mode))


def random_edge_drop(graph: Graph, drop_prob: float, seed: int,
                     iteration_index: int) -> PerturbedGraph:
    """Drop each canonical edge independently with probability drop_prob.

    Both directed incidences of an edge fall together. Deterministic for a
    given (seed, iteration_index).
    """
    keep = edge_keep_mask(graph.num_edges, drop_prob, seed, iteration_index)
    return PerturbedGraph(parent=graph, keep_mask=keep)


def drop_single_edge(graph: Graph, edge: Sequence[int]) -> PerturbedGraph:
    """Remove exactly one existing edge; all other edges kept."""
    i = graph.edge_index(int(edge[0]), int(edge[1]))
    keep = np.ones(graph.num_edges, dtype=bool)
    keep[i] = False
    return PerturbedGraph(parent=graph, keep_mask=keep)


def l_hop_subgraph(graph: Graph, center: int, hops: int) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on nodes within `hops` of center.

    Returns (subgraph, node_map) where node_map[local_id] = parent id;
    node_map is sorted so local ids preserve parent order.
    """
    if not 0 <= center < graph.num_nodes:
        raise GraphError(f"center {center} out of range")
    if hops < 1:
        raise GraphError(f"hops must be >= 1, got {hops}")
    reached = np.zeros(graph.num_nodes, dtype=bool)
    reached[center] = True
    frontier = np.array([center], dtype=np.int64)
    for _ in range(hops):
        if frontier.size == 0:
            break
        nbrs = np.concatenate([graph.neighbors(int(u)) for u in frontier]) \
            if frontier.size else np.zeros(0, dtype=np.int64)
        nbrs = np.unique(nbrs)
        new = nbrs[~reached[nbrs]]
        reached[new] = True
        frontier = new
    return induced_subgraph(graph, np.nonzero(reached)[0])


def induced_subgraph(graph: Graph, nodes: np.ndarray,
                     mask_name: str | None = None) -> tuple[Graph, np.ndarray]:
    """Induced subgraph on an arbitrary node set (sorted parent ids).

    If mask_name is given, every subgraph node is placed in that single
    mask (existing masks are discarded); otherwise parent masks are
    filtered. Returns (subgraph, node_map).
    """
    node_map = np.sort(np.asarray(nodes, dtype=np.int64))
    if node_map.size and (node_map.min() < 0 or node_map.max() >= graph.num_nodes):
        raise GraphError("subgraph node id out of range")
    lookup = np.full(graph.num_nodes, -1, dtype=np.int64)
    lookup[node_map] = np.arange(node_map.size)
    keep = (lookup[graph.edges[:, 0]] >= 0) & (lookup[graph.edges[:, 1]] >= 0)
    edges = lookup[graph.edges[keep]]
    if mask_name is not None:
        masks = {mask_name: np.arange(node_map.size, dtype=np.int64)}
    else:
        masks = {name: lookup[ids[lookup[ids] >= 0]]
                 for name, ids in graph.masks.items()}
    sub = _graph_from_canonical(node_map.size, edges,
                                graph.features[node_map].copy(),
                                graph.labels[node_map].copy(),
                                graph.num_classes, masks)
    return sub, node_map
