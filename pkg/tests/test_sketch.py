"""Sketch generation: determinism, unbiasedness, and the slot covariance law."""

import numpy as np
import pytest

from sketchcv.sketch import (
    FEATURE_HASH,
    RANDOM_PROJECTION,
    HashPair,
    InvalidAngle,
    SeededRng,
    SketchPair,
    draw_sketch_pair,
    feature_hash,
    generate_vector_pair,
    hash64,
    random_projection,
    suff_stats,
)


class TableHash:
    """Explicit lookup tables standing in for a HashPair in examples."""

    def __init__(self, buckets, signs):
        self._buckets = np.asarray(buckets)
        self._signs = np.asarray(signs, dtype=float)

    def bucket(self, idx):
        return self._buckets[idx]

    def sign(self, idx):
        return self._signs[idx]


class TestSeededRng:
    def test_same_stream_reproduces_bytes(self):
        a = SeededRng(123, 456).generator().standard_normal(16)
        b = SeededRng(123, 456).generator().standard_normal(16)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = SeededRng(123, 456).generator().standard_normal(16)
        b = SeededRng(123, 457).generator().standard_normal(16)
        assert not np.array_equal(a, b)

    def test_derive_is_deterministic_and_order_sensitive(self):
        base = SeededRng(1)
        assert base.derive(2, 3) == base.derive(2, 3)
        assert base.derive(2, 3) != base.derive(3, 2)

    def test_hash64_stability(self):
        # Frozen value: the mixing function is part of the replay contract.
        assert hash64(0) == hash64(0)
        assert hash64(1, 2) != hash64(1, 3)
        assert 0 <= hash64(2**64 - 1, 17) < 2**64


class TestHashPair:
    def test_ranges(self):
        hp = HashPair.draw(SeededRng(5).generator(), k=7)
        idx = np.arange(10_000)
        buckets = hp.bucket(idx)
        signs = hp.sign(idx)
        assert buckets.min() >= 0 and buckets.max() < 7
        assert set(np.unique(signs)) <= {-1.0, 1.0}

    def test_deterministic_given_seed(self):
        hp1 = HashPair.draw(SeededRng(5).generator(), k=7)
        hp2 = HashPair.draw(SeededRng(5).generator(), k=7)
        idx = np.arange(100)
        np.testing.assert_array_equal(hp1.bucket(idx), hp2.bucket(idx))
        np.testing.assert_array_equal(hp1.sign(idx), hp2.sign(idx))

    def test_buckets_roughly_uniform(self):
        hp = HashPair.draw(SeededRng(6).generator(), k=4)
        counts = np.bincount(hp.bucket(np.arange(40_000)), minlength=4)
        assert counts.min() > 9_000


class TestFeatureHash:
    def test_defining_sum(self):
        # Buckets (0, 1, 0) and signs (+, -, +): slot 0 gets 1 + 3, slot 1 gets -2.
        table = TableHash([0, 1, 0], [1.0, -1.0, 1.0])
        v = feature_hash(np.array([1.0, 2.0, 3.0]), 2, table)
        np.testing.assert_array_equal(v, [4.0, -2.0])

    def test_identity_hashing(self):
        x = np.array([3.0, -1.0, 2.0, 5.0])
        table = TableHash(np.arange(4), np.ones(4))
        np.testing.assert_array_equal(feature_hash(x, 4, table), x)

    def test_inner_product_unbiased(self):
        rng = np.random.default_rng(20)
        d, k = 64, 8
        x1 = rng.standard_normal(d)
        x2 = rng.standard_normal(d)
        draws = 100_000
        vals = np.empty(draws)
        for i in range(draws):
            pair = draw_sketch_pair(x1, x2, k, FEATURE_HASH, SeededRng(99, i))
            vals[i] = pair.vi @ pair.vj
        se = vals.std(ddof=1) / np.sqrt(draws)
        assert abs(vals.mean() - x1 @ x2) <= 3 * se


class TestRandomProjection:
    def test_basis_vector(self):
        r_cols = np.arange(12.0).reshape(3, 4)
        e1 = np.array([1.0, 0.0, 0.0])
        np.testing.assert_array_equal(random_projection(e1, r_cols), r_cols[0])

    def test_identity_projection(self):
        x = np.array([2.0, -1.0, 0.5])
        np.testing.assert_array_equal(random_projection(x, np.eye(3)), x)

    def test_inner_product_unbiased(self):
        rng = np.random.default_rng(21)
        d, k = 32, 4
        x1 = rng.standard_normal(d)
        x2 = rng.standard_normal(d)
        draws = 100_000
        vals = np.empty(draws)
        for i in range(draws):
            pair = draw_sketch_pair(x1, x2, k, RANDOM_PROJECTION, SeededRng(98, i))
            vals[i] = suff_stats(pair).w3
        se = vals.std(ddof=1) / np.sqrt(draws)
        assert abs(vals.mean() - x1 @ x2) <= 3 * se


class TestSuffStats:
    def test_feature_hash_raw_sums(self):
        pair = SketchPair(
            vi=np.array([1.0, 1.0]),
            vj=np.array([1.0, 1.0]),
            norm_i_sq=2.0,
            norm_j_sq=2.0,
            scheme=FEATURE_HASH,
        )
        s = suff_stats(pair)
        assert (s.w1, s.w2, s.w3) == (2.0, 2.0, 2.0)

    def test_random_projection_means(self):
        pair = SketchPair(
            vi=np.array([2.0, 0.0]),
            vj=np.array([0.0, 2.0]),
            norm_i_sq=2.0,
            norm_j_sq=2.0,
            scheme=RANDOM_PROJECTION,
        )
        s = suff_stats(pair)
        assert (s.w1, s.w2, s.w3) == (2.0, 2.0, 0.0)

    def test_w3_unbiased_over_hash_draws(self):
        rng = np.random.default_rng(22)
        d, k = 64, 8
        x1 = rng.standard_normal(d)
        x2 = rng.standard_normal(d)
        draws = 100_000
        vals = np.empty(draws)
        for i in range(draws):
            pair = draw_sketch_pair(x1, x2, k, FEATURE_HASH, SeededRng(97, i))
            vals[i] = suff_stats(pair).w3
        se = vals.std(ddof=1) / np.sqrt(draws)
        assert abs(vals.mean() - x1 @ x2) <= 3 * se

    def test_cauchy_schwarz_on_generated_sketches(self):
        x1, x2 = generate_vector_pair(100, 1.5, 0.7, SeededRng(30))
        for i in range(200):
            for scheme in (FEATURE_HASH, RANDOM_PROJECTION):
                pair = draw_sketch_pair(x1, x2, 10, scheme, SeededRng(31, i))
                s = suff_stats(pair)
                assert s.w1 >= 0 and s.w2 >= 0
                assert abs(s.w3) <= np.sqrt(s.w1 * s.w2) * (1 + 1e-12)

    def test_slot_covariance_structure(self):
        # Over hash draws, a slot pair (vi_s, vj_s) has covariance
        # [[n1, ip], [ip, n2]] / k.
        rng = np.random.default_rng(23)
        d, k = 128, 4
        x1 = rng.standard_normal(d)
        x2 = rng.standard_normal(d)
        n1, n2, ip = x1 @ x1, x2 @ x2, x1 @ x2
        draws = 50_000
        slots = np.empty((draws * k, 2))
        for i in range(draws):
            pair = draw_sketch_pair(x1, x2, k, FEATURE_HASH, SeededRng(96, i))
            slots[i * k : (i + 1) * k, 0] = pair.vi
            slots[i * k : (i + 1) * k, 1] = pair.vj
        expected = np.array([[n1, ip], [ip, n2]]) / k
        prods = np.column_stack(
            [slots[:, 0] ** 2, slots[:, 0] * slots[:, 1], slots[:, 1] ** 2]
        )
        means = prods.mean(axis=0)
        ses = prods.std(axis=0, ddof=1) / np.sqrt(len(prods))
        targets = [expected[0, 0], expected[0, 1], expected[1, 1]]
        for mean, se, target in zip(means, ses, targets):
            assert abs(mean - target) <= 3 * se


class TestGenerateVectorPair:
    def test_zero_angle_gives_equal_vectors(self):
        x1, x2 = generate_vector_pair(50, 1.0, 0.0, SeededRng(40))
        np.testing.assert_allclose(x1, x2, atol=1e-12)

    def test_orthogonal_pair(self):
        x1, x2 = generate_vector_pair(50, 1.0, np.pi / 2, SeededRng(41))
        assert abs(x1 @ x2) <= 1e-10 * np.linalg.norm(x1) * np.linalg.norm(x2)

    def test_ratio_angle_and_scale(self):
        d, r, theta = 100, 2.0, np.pi / 4
        x1, x2 = generate_vector_pair(d, r, theta, SeededRng(42))
        n1, n2 = x1 @ x1, x2 @ x2
        assert n2 == pytest.approx(d, rel=1e-12)
        assert n1 == pytest.approx(r * n2, rel=1e-12)
        cos = (x1 @ x2) / np.sqrt(n1 * n2)
        assert cos == pytest.approx(np.cos(theta), abs=1e-10)

    def test_determinism(self):
        a = generate_vector_pair(64, 0.5, 1.0, SeededRng(43, 7))
        b = generate_vector_pair(64, 0.5, 1.0, SeededRng(43, 7))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_invalid_angle(self):
        with pytest.raises(InvalidAngle):
            generate_vector_pair(10, 1.0, -0.1, SeededRng(44))
        with pytest.raises(InvalidAngle):
            generate_vector_pair(10, 1.0, 3.5, SeededRng(44))


class TestSketchDeterminism:
    @pytest.mark.parametrize("scheme", [FEATURE_HASH, RANDOM_PROJECTION])
    def test_bit_identical_sketches(self, scheme):
        x1, x2 = generate_vector_pair(80, 1.0, 0.3, SeededRng(50))
        p1 = draw_sketch_pair(x1, x2, 16, scheme, SeededRng(51, 9))
        p2 = draw_sketch_pair(x1, x2, 16, scheme, SeededRng(51, 9))
        np.testing.assert_array_equal(p1.vi, p2.vi)
        np.testing.assert_array_equal(p1.vj, p2.vj)
