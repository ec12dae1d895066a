import numpy as np
import pytest
from pathlib import Path

from gnnpurify.datasets import (
    Dataset,
    DatasetFormatError,
    SplitSpec,
    exclude,
    load_tu_dataset,
    split,
    synth_dataset,
    write_tu_dataset,
)
from gnnpurify.graphs import Graph


def tiny_dataset():
    g0 = Graph(3, np.array([[1.0, 0], [0, 1], [1, 0]]), {(0, 1), (1, 2)}, 0)
    g1 = Graph(2, np.array([[0.0, 1], [0, 1]]), {(0, 1)}, 1)
    return Dataset((g0, g1), 2, 2, "tiny")


class TestTuFormat:
    def test_round_trip_one_hot(self, tmp_path):
        ds = tiny_dataset()
        write_tu_dataset(ds, tmp_path)
        back = load_tu_dataset(tmp_path, "tiny")
        assert back.graphs == ds.graphs
        assert back.num_classes == 2
        assert (tmp_path / "tiny_node_labels.txt").exists()
        assert not (tmp_path / "tiny_node_attributes.txt").exists()

    def test_round_trip_float_attributes(self, tmp_path):
        g0 = Graph(2, np.array([[0.25, -1.5], [3.125, 0.0]]), {(0, 1)}, 0)
        g1 = Graph(1, np.array([[0.1, 0.2]]), frozenset(), 1)
        ds = Dataset((g0, g1), 2, 2, "floats")
        write_tu_dataset(ds, tmp_path)
        back = load_tu_dataset(tmp_path, "floats")
        assert back.graphs == ds.graphs

    def test_byte_deterministic(self, tmp_path):
        ds = synth_dataset(30, seed=5)
        d1, d2 = tmp_path / "a", tmp_path / "b"
        write_tu_dataset(ds, d1)
        write_tu_dataset(ds, d2)
        for f in sorted(p.name for p in d1.iterdir()):
            assert (d1 / f).read_bytes() == (d2 / f).read_bytes(), f

    def test_reload_then_rewrite_bytes_identical(self, tmp_path):
        ds = synth_dataset(30, seed=6)
        d1, d2 = tmp_path / "a", tmp_path / "b"
        write_tu_dataset(ds, d1)
        write_tu_dataset(load_tu_dataset(d1, "synthetic"), d2)
        for f in sorted(p.name for p in d1.iterdir()):
            assert (d1 / f).read_bytes() == (d2 / f).read_bytes(), f

    def test_label_remap_contiguous(self, tmp_path):
        (tmp_path / "x_A.txt").write_text("1, 2\n2, 1\n4, 5\n5, 4\n")
        (tmp_path / "x_graph_indicator.txt").write_text("1\n1\n1\n2\n2\n")
        (tmp_path / "x_graph_labels.txt").write_text("1\n2\n")
        ds = load_tu_dataset(tmp_path, "x")
        assert sorted(g.label for g in ds.graphs) == [0, 1]
        assert ds.feature_dim == 1  # constant features when nothing given

    def test_missing_file_named(self, tmp_path):
        (tmp_path / "x_A.txt").write_text("")
        (tmp_path / "x_graph_indicator.txt").write_text("1\n")
        with pytest.raises(DatasetFormatError, match="x_graph_labels.txt"):
            load_tu_dataset(tmp_path, "x")

    def test_dangling_index_reports_line(self, tmp_path):
        (tmp_path / "x_A.txt").write_text("1, 2\n2, 9\n")
        (tmp_path / "x_graph_indicator.txt").write_text("1\n1\n")
        (tmp_path / "x_graph_labels.txt").write_text("0\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_tu_dataset(tmp_path, "x")

    def test_proteins_statistics_if_available(self):
        # statistics published for the PROTEINS benchmark; runs only when
        # the corpus is on disk
        root = Path("data/PROTEINS")
        if not root.exists():
            pytest.skip("PROTEINS corpus not present")
        ds = load_tu_dataset(root, "PROTEINS")
        assert len(ds) == 1113
        assert ds.avg_nodes() == pytest.approx(39.06, abs=0.01)


class TestSplit:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SplitSpec(train_fraction=1.0)
        with pytest.raises(ValueError):
            SplitSpec(clean_holdout_fraction=0.0)

    def test_sizes_100_graphs(self):
        ds = synth_dataset(100, seed=2)
        tr, te, ho = split(ds, SplitSpec(0.8, 0.03, seed=4))
        assert (len(tr), len(te), len(ho)) == (80, 20, 3)

    def test_deterministic(self):
        ds = synth_dataset(60, seed=2)
        a = split(ds, SplitSpec(0.8, 0.05, seed=9))
        b = split(ds, SplitSpec(0.8, 0.05, seed=9))
        for x, y in zip(a, b):
            assert x.graphs == y.graphs

    def test_holdout_subset_of_test_and_disjoint_from_train(self):
        ds = synth_dataset(50, seed=3)
        for seed in range(50):
            tr, te, ho = split(ds, SplitSpec(0.8, 0.06, seed=seed))
            train_ids = {id(g) for g in tr.graphs}
            test_ids = {id(g) for g in te.graphs}
            hold_ids = {id(g) for g in ho.graphs}
            assert train_ids.isdisjoint(test_ids)
            assert hold_ids <= test_ids
            assert hold_ids.isdisjoint(train_ids)
            assert len(tr) + len(te) == 50

    def test_stratified(self):
        ds = synth_dataset(100, seed=2)
        tr, te, ho = split(ds, SplitSpec(0.8, 0.04, seed=1))
        labels = tr.labels()
        assert abs((labels == 0).sum() - (labels == 1).sum()) <= 1

    def test_empty_partition_rejected(self):
        ds = synth_dataset(20, seed=2)
        with pytest.raises(ValueError):
            split(ds, SplitSpec(0.8, 0.01, seed=0))  # holdout rounds to 0

    def test_exclude_removes_by_identity(self):
        ds = synth_dataset(40, seed=2)
        tr, te, ho = split(ds, SplitSpec(0.8, 0.05, seed=0))
        ev = exclude(te, ho)
        assert len(ev) == len(te) - len(ho)
        assert {id(g) for g in ev.graphs}.isdisjoint({id(g) for g in ho.graphs})


class TestSynthDataset:
    def test_class_balance(self):
        ds = synth_dataset(400, seed=1)
        counts = np.bincount(ds.labels())
        assert counts.tolist() == [200, 200]

    def test_deterministic(self):
        assert synth_dataset(30, seed=8).graphs == synth_dataset(30, seed=8).graphs

    def test_sizes_and_features(self):
        ds = synth_dataset(50, seed=4)
        for g in ds.graphs:
            assert 15 <= g.num_nodes <= 35
            assert g.features.shape == (g.num_nodes, 8)
            # one-hot rows
            assert np.all(g.features.sum(axis=1) == 1.0)

    def test_minimum_size_enforced(self):
        with pytest.raises(ValueError):
            synth_dataset(10, seed=0)
