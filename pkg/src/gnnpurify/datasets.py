"""Graph corpora: TUDataset-format IO, deterministic splits, synthetic data.

The TU text format is reproduced bit-exactly on write so corpora round-trip:
``{name}_A.txt`` lists every edge in both directions as "i, j" (1-based),
``{name}_graph_indicator.txt`` maps node lines to graph ids,
``{name}_graph_labels.txt`` has one integer per graph, and node information
comes from ``{name}_node_labels.txt`` (one-hot encoded on load) or
``{name}_node_attributes.txt`` (comma-separated floats).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graphs import Graph, degree
from .util import rng_from


class DatasetFormatError(ValueError):
    """Raised when a corpus directory does not parse as TUDataset format."""


@dataclass(frozen=True)
class Dataset:
    """An ordered graph corpus with a shared feature space."""

    graphs: tuple[Graph, ...]
    num_classes: int
    feature_dim: int
    name: str = "unnamed"

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for g in self.graphs:
            if g.feature_dim != self.feature_dim:
                raise ValueError(f"graph feature dim {g.feature_dim} != dataset {self.feature_dim}")
            if g.label is None or not 0 <= g.label < self.num_classes:
                raise ValueError(f"graph label {g.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.graphs)

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def avg_nodes(self) -> float:
        return float(np.mean([g.num_nodes for g in self.graphs]))

    def replace_graphs(self, graphs) -> "Dataset":
        return Dataset(tuple(graphs), self.num_classes, self.feature_dim, self.name)


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split plus the defender's clean holdout.

    ``clean_holdout_fraction`` is a fraction of the *full corpus*, but the
    holdout graphs are drawn from the test portion only, so the defender
    never sees training data.
    """

    train_fraction: float = 0.8
    clean_holdout_fraction: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if not 0.0 < self.clean_holdout_fraction < 1.0:
            raise ValueError("clean_holdout_fraction must be in (0, 1)")


def _read_lines(directory: Path, filename: str, required: bool) -> list[str] | None:
    path = directory / filename
    if not path.exists():
        if required:
            raise DatasetFormatError(f"missing required file: {filename}")
        return None
    return path.read_text().splitlines()


def load_tu_dataset(directory: str | os.PathLike, name: str) -> Dataset:
    """Parse a TUDataset-format directory into a Dataset.

    File indices are 1-based and converted to 0-based; duplicate and
    reverse edges collapse into one undirected edge; graph labels are
    remapped onto a contiguous [0, num_classes) range.
    """
    directory = Path(directory)
    indicator = _read_lines(directory, f"{name}_graph_indicator.txt", required=True)
    a_lines = _read_lines(directory, f"{name}_A.txt", required=True)
    label_lines = _read_lines(directory, f"{name}_graph_labels.txt", required=True)
    node_label_lines = _read_lines(directory, f"{name}_node_labels.txt", required=False)
    node_attr_lines = _read_lines(directory, f"{name}_node_attributes.txt", required=False)

    node_graph = np.array([int(s) - 1 for s in indicator if s.strip()], dtype=np.int64)
    num_nodes_total = len(node_graph)
    num_graphs = int(node_graph.max()) + 1 if num_nodes_total else 0
    if num_graphs == 0:
        raise DatasetFormatError(f"{name}_graph_indicator.txt describes no nodes")

    # local index of each node within its graph
    counts = np.zeros(num_graphs, dtype=np.int64)
    local_index = np.zeros(num_nodes_total, dtype=np.int64)
    for v, g in enumerate(node_graph):
        local_index[v] = counts[g]
        counts[g] += 1

    raw_labels = [int(s) for s in label_lines if s.strip()]
    if len(raw_labels) != num_graphs:
        raise DatasetFormatError(
            f"{name}_graph_labels.txt has {len(raw_labels)} entries for {num_graphs} graphs"
        )
    classes = sorted(set(raw_labels))
    label_map = {c: k for k, c in enumerate(classes)}

    if node_attr_lines is not None:
        features = np.array(
            [[float(tok) for tok in line.split(",")] for line in node_attr_lines if line.strip()]
        )
        if features.shape[0] != num_nodes_total:
            raise DatasetFormatError(f"{name}_node_attributes.txt row count mismatch")
    elif node_label_lines is not None:
        raw_node_labels = [int(s) for s in node_label_lines if s.strip()]
        if len(raw_node_labels) != num_nodes_total:
            raise DatasetFormatError(f"{name}_node_labels.txt row count mismatch")
        node_classes = sorted(set(raw_node_labels))
        node_map = {c: k for k, c in enumerate(node_classes)}
        features = np.zeros((num_nodes_total, len(node_classes)))
        for v, c in enumerate(raw_node_labels):
            features[v, node_map[c]] = 1.0
    else:
        features = np.ones((num_nodes_total, 1))

    edge_sets: list[set] = [set() for _ in range(num_graphs)]
    for lineno, line in enumerate(a_lines, start=1):
        if not line.strip():
            continue
        try:
            i_s, j_s = line.split(",")
            i, j = int(i_s) - 1, int(j_s) - 1
        except ValueError as exc:
            raise DatasetFormatError(f"{name}_A.txt line {lineno}: cannot parse '{line}'") from exc
        if not (0 <= i < num_nodes_total and 0 <= j < num_nodes_total):
            raise DatasetFormatError(f"{name}_A.txt line {lineno}: node index out of range")
        gi, gj = node_graph[i], node_graph[j]
        if gi != gj:
            raise DatasetFormatError(f"{name}_A.txt line {lineno}: edge crosses graphs {gi + 1}/{gj + 1}")
        if i == j:
            continue
        a, b = int(local_index[i]), int(local_index[j])
        edge_sets[gi].add((min(a, b), max(a, b)))

    graphs = []
    node_offsets = np.concatenate([[0], np.cumsum(counts)])
    for g in range(num_graphs):
        feats = features[node_offsets[g]:node_offsets[g + 1]]
        graphs.append(Graph(int(counts[g]), feats, frozenset(edge_sets[g]), label_map[raw_labels[g]]))
    return Dataset(tuple(graphs), len(classes), features.shape[1], name)


def _features_are_one_hot(dataset: Dataset) -> bool:
    for g in dataset.graphs:
        f = g.features
        if not np.all((f == 0.0) | (f == 1.0)):
            return False
        if not np.all(f.sum(axis=1) == 1.0):
            return False
    return True


def _format_float(x: float) -> str:
    return repr(float(x))


def write_tu_dataset(dataset: Dataset, directory: str | os.PathLike) -> None:
    """Emit the corpus in the exact format load_tu_dataset consumes.

    One-hot features are written as a node_labels file; anything else goes
    to node_attributes with full-precision floats. Output bytes are
    deterministic for a fixed dataset.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = dataset.name

    indicator_lines: list[str] = []
    a_lines: list[str] = []
    node_lines: list[str] = []
    one_hot = _features_are_one_hot(dataset)

    offset = 0
    for gid, g in enumerate(dataset.graphs, start=1):
        indicator_lines.extend([str(gid)] * g.num_nodes)
        for i, j in sorted(g.edges):
            a_lines.append(f"{offset + i + 1}, {offset + j + 1}")
            a_lines.append(f"{offset + j + 1}, {offset + i + 1}")
        for v in range(g.num_nodes):
            if one_hot:
                node_lines.append(str(int(np.argmax(g.features[v]))))
            else:
                node_lines.append(", ".join(_format_float(x) for x in g.features[v]))
        offset += g.num_nodes

    def _write(filename: str, lines: list[str]) -> None:
        (directory / filename).write_text("\n".join(lines) + "\n" if lines else "")

    _write(f"{name}_A.txt", a_lines)
    _write(f"{name}_graph_indicator.txt", indicator_lines)
    _write(f"{name}_graph_labels.txt", [str(g.label) for g in dataset.graphs])
    if one_hot:
        _write(f"{name}_node_labels.txt", node_lines)
        attr = directory / f"{name}_node_attributes.txt"
        if attr.exists():
            attr.unlink()
    else:
        _write(f"{name}_node_attributes.txt", node_lines)
        lab = directory / f"{name}_node_labels.txt"
        if lab.exists():
            lab.unlink()


def _allocate_counts(class_sizes: np.ndarray, total_target: int) -> np.ndarray:
    """Largest-remainder allocation of total_target across classes."""
    if total_target <= 0:
        raise ValueError("partition would be empty")
    quotas = class_sizes * total_target / class_sizes.sum()
    counts = np.floor(quotas).astype(np.int64)
    remainder = total_target - counts.sum()
    order = np.argsort(-(quotas - counts), kind="stable")
    for k in range(int(remainder)):
        counts[order[k]] += 1
    counts = np.minimum(counts, class_sizes)
    # if capping starved the target, top up from classes with room
    short = total_target - counts.sum()
    k = 0
    while short > 0 and k < len(counts):
        room = class_sizes[k] - counts[k]
        take = min(room, short)
        counts[k] += take
        short -= take
        k += 1
    return counts


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Class-stratified (train, test, clean_holdout) partition.

    Train and test partition the corpus with |train| = round(fraction * N);
    the holdout has round(holdout_fraction * N) graphs sampled from the
    test portion. Deterministic under spec.seed.
    """
    n = len(dataset)
    labels = dataset.labels()
    train_target = int(round(spec.train_fraction * n))
    holdout_target = int(round(spec.clean_holdout_fraction * n))
    if train_target <= 0 or train_target >= n:
        raise ValueError(f"train fraction {spec.train_fraction} leaves an empty partition")
    if holdout_target <= 0:
        raise ValueError(f"holdout fraction {spec.clean_holdout_fraction} rounds to zero graphs")
    if holdout_target > n - train_target:
        raise ValueError("holdout larger than the test portion")

    rng = rng_from(spec.seed, 11)
    class_ids = np.unique(labels)
    class_sizes = np.array([(labels == c).sum() for c in class_ids])
    train_counts = _allocate_counts(class_sizes, train_target)

    train_idx: list[int] = []
    test_idx: list[int] = []
    for c, c_train in zip(class_ids, train_counts):
        members = np.flatnonzero(labels == c)
        perm = rng.permutation(len(members))
        members = members[perm]
        train_idx.extend(members[:c_train].tolist())
        test_idx.extend(members[c_train:].tolist())
    train_idx.sort()
    test_idx.sort()

    test_labels = labels[test_idx]
    test_class_sizes = np.array([(test_labels == c).sum() for c in class_ids])
    keep = test_class_sizes > 0
    holdout_counts = np.zeros_like(test_class_sizes)
    holdout_counts[keep] = _allocate_counts(test_class_sizes[keep], holdout_target)

    holdout_idx: list[int] = []
    for c, c_hold in zip(class_ids, holdout_counts):
        members = np.array([i for i in test_idx if labels[i] == c])
        if c_hold == 0:
            continue
        perm = rng.permutation(len(members))
        holdout_idx.extend(members[perm[:c_hold]].tolist())
    holdout_idx.sort()

    pick = lambda idx: dataset.replace_graphs([dataset.graphs[i] for i in idx])
    return pick(train_idx), pick(test_idx), pick(holdout_idx)


def exclude(dataset: Dataset, removed: Dataset) -> Dataset:
    """Graphs of `dataset` minus those of `removed`, matched by identity."""
    removed_ids = {id(g) for g in removed.graphs}
    return dataset.replace_graphs([g for g in dataset.graphs if id(g) not in removed_ids])


DEGREE_BUCKETS = 8


def _degree_bucket_features(g: Graph) -> np.ndarray:
    deg = degree(g)
    feats = np.zeros((g.num_nodes, DEGREE_BUCKETS))
    for v, d in enumerate(deg):
        feats[v, min(int(d), DEGREE_BUCKETS - 1)] = 1.0
    return feats


def _er_edges(rng: np.random.Generator, n: int, p: float) -> set:
    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.add((i, j))
    return edges


def synth_dataset(num_graphs: int, seed: int) -> Dataset:
    """Two-class synthetic corpus separable by a small GIN.

    Class 0 graphs are sparse ER(p=0.1); class 1 graphs are ER(p=0.3) with
    a planted 4-clique and two planted triangles, so both the degree
    distribution and the local topology carry label signal. Node features
    are one-hot degree buckets (0..6, 7+). Sizes are uniform in [15, 35].
    """
    if num_graphs < 20:
        raise ValueError("num_graphs must be >= 20")
    rng = rng_from(seed, 23)
    graphs = []
    for k in range(num_graphs):
        label = k % 2
        n = int(rng.integers(15, 36))
        if label == 0:
            edges = _er_edges(rng, n, 0.1)
        else:
            edges = _er_edges(rng, n, 0.3)
            clique = rng.choice(n, size=4, replace=False)
            for a in range(4):
                for b in range(a + 1, 4):
                    i, j = int(clique[a]), int(clique[b])
                    edges.add((min(i, j), max(i, j)))
            for _ in range(2):
                tri = rng.choice(n, size=3, replace=False)
                for a in range(3):
                    for b in range(a + 1, 3):
                        i, j = int(tri[a]), int(tri[b])
                        edges.add((min(i, j), max(i, j)))
        bare = Graph(n, np.zeros((n, 1)), frozenset(edges), label)
        graphs.append(Graph(n, _degree_bucket_features(bare), frozenset(edges), label))
    order = rng.permutation(num_graphs)
    return Dataset(tuple(graphs[i] for i in order), 2, DEGREE_BUCKETS, "synthetic")
