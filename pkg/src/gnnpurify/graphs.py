"""Undirected attributed graphs and the structural operations built on them.

Graphs are simple (no self-loops, no multi-edges) and immutable after
construction. Dense N x N matrices are fine at this scale; MAX_NODES guards
against accidentally feeding something huge through the dense paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_NODES = 500

Edge = tuple[int, int]


def _normalize_edges(edges: Iterable[Sequence[int]], num_nodes: int) -> frozenset[Edge]:
    out = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise ValueError(f"self-loop ({i},{i}) not allowed")
        if not (0 <= i < num_nodes and 0 <= j < num_nodes):
            raise ValueError(f"edge ({i},{j}) out of range for {num_nodes} nodes")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


@dataclass(frozen=True)
class Graph:
    """One classification unit: node features, undirected edge set, label.

    ``label`` is None for graphs that have not been assigned a class yet
    (e.g. freshly generated triggers).
    """

    num_nodes: int
    features: np.ndarray
    edges: frozenset[Edge] = field(default_factory=frozenset)
    label: int | None = None

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError("graph needs at least one node")
        if self.num_nodes > MAX_NODES:
            raise ValueError(f"graph exceeds MAX_NODES={MAX_NODES}")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise ValueError(f"features must be ({self.num_nodes}, d), got {feats.shape}")
        feats = np.ascontiguousarray(feats)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "edges", _normalize_edges(self.edges, self.num_nodes))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def with_label(self, label: int) -> "Graph":
        return Graph(self.num_nodes, self.features, self.edges, int(label))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.label == other.label
            and self.edges == other.edges
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    def __hash__(self):
        return hash((self.num_nodes, self.label, self.edges))


def degree(graph: Graph) -> np.ndarray:
    """Per-node edge count, self-loops excluded (integer vector of length N)."""
    deg = np.zeros(graph.num_nodes, dtype=np.int64)
    for i, j in graph.edges:
        deg[i] += 1
        deg[j] += 1
    return deg


def normalized_adjacency(graph: Graph) -> np.ndarray:
    """Symmetric propagation matrix with self-loops added before scaling.

    Entry (i, j) is 1/sqrt(d_i * d_j) where d counts neighbours plus the
    added self-loop, so every diagonal entry is positive and the spectral
    radius is at most 1.
    """
    a = graph.adjacency()
    np.fill_diagonal(a, 1.0)
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def er_random_graph(n: int, p_edge: float, seed: int, feature_dim: int = 1) -> Graph:
    """Erdos-Renyi graph: each unordered pair drawn independently.

    Features are a zero vector per node and the label is unset; callers
    attach both afterwards.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p_edge <= 1.0:
        raise ValueError("p_edge must be in [0, 1]")
    rng = np.random.default_rng(seed)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_edge:
                edges.append((i, j))
    return Graph(n, np.zeros((n, feature_dim)), frozenset(edges))


def relabel_nodes(graph: Graph, permutation: Sequence[int]) -> Graph:
    """Apply a node permutation: node i of the input becomes permutation[i]."""
    perm = np.asarray(permutation, dtype=np.int64)
    if perm.shape != (graph.num_nodes,) or sorted(perm.tolist()) != list(range(graph.num_nodes)):
        raise ValueError("permutation must be a bijection on node indices")
    feats = np.empty_like(graph.features)
    feats[perm] = graph.features
    edges = frozenset((int(perm[i]), int(perm[j])) for i, j in graph.edges)
    return Graph(graph.num_nodes, feats, edges, graph.label)
