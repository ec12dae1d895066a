import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnnpurify.attention import (
    attention_distill_loss,
    attention_map,
    normalize_attention,
    relation_congruence_loss,
    relation_samples,
    resolve_pairs,
    sliced_w2,
)


def exact_w2_1d(a, b):
    """Independent sorting oracle for the 1D squared-W2 distance."""
    a, b = np.sort(np.asarray(a, float)), np.sort(np.asarray(b, float))
    assert a.shape == b.shape
    return float(np.sqrt(np.mean((a - b) ** 2)))


class TestAttentionMap:
    def test_hand_values(self):
        f = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = attention_map(f, np.array([1, 1]), p=2)
        np.testing.assert_allclose(out, [5.0, 25.0])

    def test_degree_weighting(self):
        f = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = attention_map(f, np.array([1, 2]), p=2)
        np.testing.assert_allclose(out, [2.5, 25.0])

    def test_zero_activations(self):
        for p in (1, 2, 3, 4):
            out = attention_map(np.zeros((3, 4)), np.array([1, 2, 3]), p=p)
            np.testing.assert_allclose(out, 0.0)

    def test_edgeless_degree_factor_is_one(self):
        out = attention_map(np.array([[2.0]]), np.array([0]), p=2)
        np.testing.assert_allclose(out, [4.0])

    def test_homogeneity(self):
        rng = np.random.default_rng(0)
        f = rng.normal(size=(6, 5))
        deg = rng.integers(0, 4, size=6)
        for p in (1.0, 2.0, 3.0):
            for c in (0.5, 2.0, 7.0):
                np.testing.assert_allclose(
                    attention_map(c * f, deg, p), c**p * attention_map(f, deg, p),
                    rtol=1e-10)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=(5, 3))
        deg = rng.integers(0, 5, size=5)
        perm = rng.permutation(5)
        base = attention_map(f, deg, p=2)
        permuted = attention_map(f[perm], deg[perm], p=2)
        np.testing.assert_allclose(permuted, base[perm], atol=1e-12)


class TestNormalizeAttention:
    def test_pythagorean(self):
        np.testing.assert_allclose(normalize_attention(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_zero_passthrough(self):
        np.testing.assert_allclose(normalize_attention(np.zeros(3)), np.zeros(3))

    def test_unit_norm(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            v = rng.normal(size=rng.integers(1, 9))
            assert np.linalg.norm(normalize_attention(v)) == pytest.approx(1.0, abs=1e-12)


class TestAttentionDistillLoss:
    def test_identical_traces_zero(self):
        f = [np.random.default_rng(3).normal(size=(4, 3)) for _ in range(2)]
        assert attention_distill_loss(f, [x.copy() for x in f], np.array([1, 1, 2, 0]), 2) == 0.0

    def test_orthogonal_unit_maps(self):
        # maps [1,0] vs [0,1] after normalization differ by sqrt(2)
        ft = [np.array([[1.0], [0.0]])]
        fs = [np.array([[0.0], [1.0]])]
        loss = attention_distill_loss(ft, fs, np.array([1, 1]), p=2)
        assert loss == pytest.approx(np.sqrt(2.0), abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        ft = [rng.normal(size=(5, 4)) for _ in range(3)]
        fs = [rng.normal(size=(5, 4)) for _ in range(3)]
        deg = rng.integers(0, 4, size=5)
        base = attention_distill_loss(ft, fs, deg, 2)
        for c in (0.1, 3.0, 40.0):
            scaled_s = attention_distill_loss(ft, [c * x for x in fs], deg, 2)
            scaled_t = attention_distill_loss([c * x for x in ft], fs, deg, 2)
            assert scaled_s == pytest.approx(base, rel=1e-10)
            assert scaled_t == pytest.approx(base, rel=1e-10)

    def test_layer_count_mismatch(self):
        with pytest.raises(ValueError, match="layer counts"):
            attention_distill_loss([np.ones((2, 2))], [np.ones((2, 2))] * 2, np.array([1, 1]), 2)


class TestRelationSamples:
    def test_identical_layers_zero(self):
        f = np.random.default_rng(5).normal(size=(4, 3))
        np.testing.assert_allclose(relation_samples(f, f.copy()), np.zeros((4, 3)))

    def test_single_node_pythagorean(self):
        out = relation_samples(np.array([[3.0, 4.0]]), np.array([[0.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.6, 0.8]])

    def test_rows_unit_or_zero(self):
        rng = np.random.default_rng(6)
        out = relation_samples(rng.normal(size=(10, 4)), rng.normal(size=(10, 4)))
        norms = np.linalg.norm(out, axis=1)
        assert np.all((np.abs(norms - 1) < 1e-12) | (norms == 0.0))


class TestSlicedW2:
    def test_identical_sets_zero(self):
        x = np.random.default_rng(7).normal(size=(12, 3))
        for num_slices in (1, 4, 16):
            assert sliced_w2(x, x.copy(), num_slices, seed=0) == 0.0

    def test_1d_point_masses(self):
        assert sliced_w2(np.array([[0.0]]), np.array([[1.0]]), 8, seed=1) == pytest.approx(1.0, abs=1e-12)

    def test_1d_sorted_matching(self):
        t = np.array([[0.0], [2.0]])
        s = np.array([[1.0], [3.0]])
        assert sliced_w2(t, s, 8, seed=2) == pytest.approx(1.0, abs=1e-12)

    def test_1d_equals_sorting_oracle(self):
        rng = np.random.default_rng(8)
        for k in range(200):
            n = int(rng.integers(1, 20))
            a = rng.normal(size=(n, 1)) * rng.uniform(0.1, 5)
            b = rng.normal(size=(n, 1)) * rng.uniform(0.1, 5)
            got = sliced_w2(a, b, num_slices=int(rng.integers(1, 10)), seed=k)
            want = exact_w2_1d(a[:, 0], b[:, 0])
            assert got == pytest.approx(want, abs=1e-12)

    def test_pseudometric_properties(self):
        rng = np.random.default_rng(9)
        for k in range(200):
            c = int(rng.integers(1, 9))
            n = int(rng.integers(1, 12))
            m = int(rng.integers(1, 12))
            a = rng.normal(size=(n, c))
            b = rng.normal(size=(m, c))
            d_ab = sliced_w2(a, b, 6, seed=k)
            d_ba = sliced_w2(b, a, 6, seed=k)
            assert d_ab >= 0.0
            assert d_ab == pytest.approx(d_ba, abs=1e-12)
        perm = np.random.default_rng(1).permutation(8)
        x = np.random.default_rng(2).normal(size=(8, 3))
        assert sliced_w2(x, x[perm], 5, seed=3) == pytest.approx(0.0, abs=1e-12)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(10)
        a, b = rng.normal(size=(9, 4)), rng.normal(size=(7, 4))
        assert sliced_w2(a, b, 8, seed=5) == sliced_w2(a, b, 8, seed=5)

    def test_input_validation(self):
        with pytest.raises(ValueError, match="dimension"):
            sliced_w2(np.ones((2, 2)), np.ones((2, 3)), 4, seed=0)
        with pytest.raises(ValueError, match="non-empty"):
            sliced_w2(np.ones((0, 2)), np.ones((2, 2)), 4, seed=0)


class TestResolvePairs:
    def test_full_three_layers(self):
        assert resolve_pairs("full", 3) == ((0, 1), (0, 2), (1, 2))

    def test_offset_one_four_layers(self):
        assert resolve_pairs("offset:1", 4) == ((0, 1), (1, 2), (2, 3))

    def test_offset_out_of_range(self):
        with pytest.raises(ValueError):
            resolve_pairs("offset:3", 3)


class TestRelationCongruence:
    def _traces(self, rng, graphs=3, layers=3, n=5, c=4):
        return [[rng.normal(size=(n, c)) for _ in range(layers)] for _ in range(graphs)]

    def test_identical_traces_zero(self):
        rng = np.random.default_rng(11)
        tr = self._traces(rng)
        copy = [[x.copy() for x in layers] for layers in tr]
        loss = relation_congruence_loss(tr, copy, resolve_pairs("full", 3), 8, seed=0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_pair_count_full(self):
        assert len(resolve_pairs("full", 3)) == 3
        assert len(resolve_pairs("full", 4)) == 6

    def test_positive_on_different_traces(self):
        rng = np.random.default_rng(12)
        loss = relation_congruence_loss(
            self._traces(rng), self._traces(rng), resolve_pairs("full", 3), 8, seed=1)
        assert loss > 0.0

    def test_invalid_pair_rejected(self):
        rng = np.random.default_rng(13)
        with pytest.raises(ValueError, match="pair"):
            relation_congruence_loss(self._traces(rng), self._traces(rng), [(0, 5)], 4, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.2, 4.0), st.integers(2, 8))
def test_attention_scale_invariance_property(seed, c, n):
    rng = np.random.default_rng(seed)
    ft = [rng.normal(size=(n, 3))]
    fs = [rng.normal(size=(n, 3))]
    deg = rng.integers(0, 3, size=n)
    base = attention_distill_loss(ft, fs, deg, 2)
    scaled = attention_distill_loss(ft, [c * fs[0]], deg, 2)
    assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)
