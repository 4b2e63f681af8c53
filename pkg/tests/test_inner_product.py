"""Estimators of the sketched inner product and their solver mechanics."""

import numpy as np
import pytest

from sketchcv.inner_product import (
    CV_EM,
    CV_EMP,
    CV_INIT,
    CubicPoly,
    DerivativeVanished,
    KTooSmall,
    NotConverged,
    SecantStall,
    SolverConfig,
    baseline,
    classify_roots,
    cv_em,
    cv_emp,
    cv_init,
    mle_cubic,
    mle_newton,
    mle_secant,
)
from sketchcv.sketch import (
    FEATURE_HASH,
    SeededRng,
    SketchPair,
    SuffStats,
    draw_sketch_pair,
    generate_vector_pair,
    suff_stats,
)


def real_roots(cubic):
    """Companion-matrix root oracle."""
    roots = np.roots([1.0, cubic.c2, cubic.c1, cubic.c0])
    scale = max(1.0, np.abs(roots).max())
    return np.sort(roots[np.abs(roots.imag) <= 1e-9 * scale].real)


def random_stats(rng, k=30, d=400):
    """Sufficient statistics from an actual sketch draw."""
    theta = rng.uniform(0.1, np.pi - 0.1)
    ratio = rng.uniform(0.3, 3.0)
    x1, x2 = generate_vector_pair(d, ratio, theta, SeededRng(int(rng.integers(2**32))))
    pair = draw_sketch_pair(
        x1, x2, k, FEATURE_HASH, SeededRng(int(rng.integers(2**32)))
    )
    return suff_stats(pair), pair.norm_i_sq, pair.norm_j_sq


class TestMleCubic:
    def test_exact_norm_statistics_factorize(self):
        stats = SuffStats(w1=1.0, w2=1.0, w3=0.3, k=10)
        cubic = mle_cubic(stats, 1.0, 1.0)
        # (x - 0.3)(x^2 + 1): coefficients (-0.3, 1, -0.3).
        assert (cubic.c2, cubic.c1, cubic.c0) == (-0.3, 1.0, -0.3)

    def test_direct_substitution(self):
        stats = SuffStats(w1=1.2, w2=0.9, w3=0.5, k=10)
        cubic = mle_cubic(stats, 1.0, 1.0)
        assert (cubic.c2, cubic.c1, cubic.c0) == (-0.5, 1.1, -0.5)

    def test_oracle_roots_are_roots(self):
        rng = np.random.default_rng(60)
        for _ in range(50):
            stats, n1, n2 = random_stats(rng)
            cubic = mle_cubic(stats, n1, n2)
            scale = max(abs(cubic.c0), 1.0)
            for root in real_roots(cubic):
                assert abs(cubic(root)) <= 1e-8 * scale


class TestClassifyRoots:
    def test_complex_pair(self):
        cubic = CubicPoly(c2=-0.3, c1=1.0, c0=-0.3)
        cls = classify_roots(cubic)
        assert cls.count == 1 and not cls.repeated_root

    def test_three_distinct_roots(self):
        # x(x - 1)(x + 1) = x^3 - x
        cls = classify_roots(CubicPoly(c2=0.0, c1=-1.0, c0=0.0))
        assert cls.count == 3 and not cls.repeated_root
        assert cls.discriminant > 0

    def test_repeated_root_boundary(self):
        # x^2 (x - 1): zero discriminant.
        cls = classify_roots(CubicPoly(c2=-1.0, c1=0.0, c0=0.0))
        assert cls.count == 3 and cls.repeated_root


class TestBaseline:
    def test_returns_w3(self):
        res = baseline(SuffStats(w1=1.0, w2=1.0, w3=0.3, k=4))
        assert res.estimate == 0.3
        assert res.iterations == 0 and res.converged

    def test_exact_on_injective_sketch(self):
        # A feature hash that lands injectively is a signed permutation, so
        # every statistic is exact.
        x1, x2 = generate_vector_pair(8, 1.0, 0.5, SeededRng(61))
        for i in range(50):
            pair = draw_sketch_pair(x1, x2, 4096, FEATURE_HASH, SeededRng(62, i))
            if np.count_nonzero(pair.vi) == 8:  # injective draw
                s = suff_stats(pair)
                assert baseline(s).estimate == pytest.approx(x1 @ x2, rel=1e-12)
                break
        else:
            pytest.fail("no injective hash draw found")


class TestCvEm:
    def test_exact_norms_converge_in_one_update(self):
        stats = SuffStats(w1=1.0, w2=1.0, w3=0.3, k=10)
        res = cv_em(stats, 1.0, 1.0, SolverConfig(eps=1e-9))
        assert res.iterations == 1 and res.converged
        assert res.estimate == 0.3

    def test_converges_to_companion_root(self):
        stats = SuffStats(w1=1.2, w2=0.9, w3=0.5, k=10)
        cfg = SolverConfig(eps=1e-12)
        res = cv_em(stats, 1.0, 1.0, cfg)
        roots = real_roots(mle_cubic(stats, 1.0, 1.0))
        assert len(roots) == 1
        assert res.estimate == pytest.approx(roots[0], abs=1e-9)

    def test_fixed_point_satisfies_cubic(self):
        rng = np.random.default_rng(63)
        for _ in range(100):
            stats, n1, n2 = random_stats(rng)
            cfg = SolverConfig.for_norms(n1, n2)
            res = cv_em(stats, n1, n2, cfg)
            cubic = mle_cubic(stats, n1, n2)
            bound = 10 * cfg.eps * (res.estimate**2 + n1 * n2)
            assert abs(cubic(res.estimate)) <= bound

    def test_cv_init_equals_first_update(self):
        rng = np.random.default_rng(64)
        for _ in range(100):
            stats, n1, n2 = random_stats(rng)
            init = cv_init(stats, n1, n2)
            em = cv_em(stats, n1, n2, SolverConfig.for_norms(n1, n2))
            assert init.estimate == em.trace[1]

    def test_iterates_bounded(self):
        # |f_next| <= |w3| + sqrt(n1 n2)/2 (|w1-n1|/n1 + |w2-n2|/n2)
        rng = np.random.default_rng(65)
        for _ in range(100):
            stats, n1, n2 = random_stats(rng, k=5)
            bound = abs(stats.w3) + np.sqrt(n1 * n2) / 2 * (
                abs(stats.w1 - n1) / n1 + abs(stats.w2 - n2) / n2
            )
            try:
                res = cv_em(stats, n1, n2, SolverConfig.for_norms(n1, n2))
                trace = res.trace
            except NotConverged as exc:
                trace = exc.result.trace
            for value in trace[1:]:
                assert abs(value) <= bound * (1 + 1e-12)

    def test_not_converged_carries_trace(self):
        # Gross norm deviations make the fixed-point map expansive.
        stats = SuffStats(w1=5.0, w2=5.0, w3=0.1, k=4)
        with pytest.raises(NotConverged) as info:
            cv_em(stats, 1.0, 1.0, SolverConfig(eps=1e-12, max_iter=20))
        res = info.value.result
        assert not res.converged
        assert res.iterations == 20
        assert len(res.trace) == 21


class TestMleNewton:
    def test_starts_at_root(self):
        cubic = CubicPoly(c2=-0.3, c1=1.0, c0=-0.3)
        res = mle_newton(cubic, 0.3, SolverConfig(eps=1e-12))
        assert res.iterations == 1 and res.converged
        assert res.estimate == 0.3

    def test_matches_oracle(self):
        stats = SuffStats(w1=1.2, w2=0.9, w3=0.5, k=10)
        cubic = mle_cubic(stats, 1.0, 1.0)
        res = mle_newton(cubic, 0.5, SolverConfig(eps=1e-12))
        assert res.estimate == pytest.approx(real_roots(cubic)[0], abs=1e-9)

    def test_derivative_vanished(self):
        # f(x) = x^3 - 3x + 5 has f'(1) = 0 and f(1) != 0.
        with pytest.raises(DerivativeVanished):
            mle_newton(CubicPoly(c2=0.0, c1=-3.0, c0=5.0), 1.0, SolverConfig(eps=1e-9))


class TestMleSecant:
    def test_bracketing_the_root(self):
        cubic = CubicPoly(c2=-0.3, c1=1.0, c0=-0.3)
        res = mle_secant(cubic, 0.29, 0.31, SolverConfig(eps=1e-12))
        assert res.converged
        assert res.estimate == pytest.approx(0.3, abs=1e-10)

    def test_matches_oracle_on_random_stats(self):
        rng = np.random.default_rng(66)
        for _ in range(50):
            stats, n1, n2 = random_stats(rng)
            cubic = mle_cubic(stats, n1, n2)
            roots = real_roots(cubic)
            if len(roots) != 1:
                continue
            cfg = SolverConfig.for_norms(n1, n2, eps_rel=1e-9)
            res = mle_secant(
                cubic, stats.w3 + cfg.secant_offsets[0], stats.w3 + cfg.secant_offsets[1], cfg
            )
            assert res.estimate == pytest.approx(roots[0], abs=100 * cfg.eps)

    def test_equal_starting_points_rejected(self):
        cubic = CubicPoly(c2=0.0, c1=-1.0, c0=0.5)
        with pytest.raises(ValueError):
            mle_secant(cubic, 0.2, 0.2, SolverConfig(eps=1e-9))

    def test_stall_on_equal_function_values(self):
        # x^3 - 4x + 7 takes the same value at -2 and 2.
        cubic = CubicPoly(c2=0.0, c1=-4.0, c0=7.0)
        with pytest.raises(SecantStall):
            mle_secant(cubic, -2.0, 2.0, SolverConfig(eps=1e-12))


class TestRootAgreement:
    def test_all_solvers_agree_on_single_root_cubics(self):
        rng = np.random.default_rng(67)
        checked = 0
        for _ in range(100):
            stats, n1, n2 = random_stats(rng)
            cubic = mle_cubic(stats, n1, n2)
            if classify_roots(cubic).count != 1:
                continue
            cfg = SolverConfig.for_norms(n1, n2)
            try:
                em = cv_em(stats, n1, n2, cfg)
                nr = mle_newton(cubic, stats.w3, cfg)
                sec = mle_secant(
                    cubic,
                    stats.w3 + cfg.secant_offsets[0],
                    stats.w3 + cfg.secant_offsets[1],
                    cfg,
                )
            except NotConverged:
                continue
            tol = 100 * cfg.eps
            assert abs(em.estimate - nr.estimate) <= tol
            assert abs(em.estimate - sec.estimate) <= tol
            checked += 1
        assert checked >= 90


class TestCvInit:
    def test_exact_norms_return_baseline(self):
        stats = SuffStats(w1=1.0, w2=1.0, w3=0.3, k=10)
        assert cv_init(stats, 1.0, 1.0).estimate == 0.3

    def test_hand_evaluated_weights(self):
        # c1 = c2 = -0.5/(0.25 + 1) = -0.4, so the estimate is
        # 0.5 - 0.4*0.2 + 0.4*0.1 = 0.46.
        stats = SuffStats(w1=1.2, w2=0.9, w3=0.5, k=10)
        res = cv_init(stats, 1.0, 1.0)
        assert res.estimate == pytest.approx(0.46, rel=1e-12)
        assert res.iterations == 1 and res.converged


class TestCvEmp:
    def test_constant_slots_fall_back_to_baseline(self):
        pair = SketchPair(
            vi=np.ones(5),
            vj=np.ones(5),
            norm_i_sq=5.0,
            norm_j_sq=5.0,
            scheme=FEATURE_HASH,
        )
        res = cv_emp(pair)
        assert res.fallback
        assert res.estimate == suff_stats(pair).w3

    def test_k_too_small(self):
        pair = SketchPair(
            vi=np.array([1.0, 2.0]),
            vj=np.array([0.5, 1.0]),
            norm_i_sq=4.0,
            norm_j_sq=2.0,
            scheme=FEATURE_HASH,
        )
        with pytest.raises(KTooSmall):
            cv_emp(pair)

    def test_hand_computed_five_slot_case(self):
        vi = np.array([1.0, -2.0, 0.5, 1.5, -1.0])
        vj = np.array([0.5, 1.0, -1.0, 2.0, 0.0])
        n1, n2 = 7.0, 6.0
        pair = SketchPair(vi=vi, vj=vj, norm_i_sq=n1, norm_j_sq=n2, scheme=FEATURE_HASH)
        # Independent spreadsheet-style evaluation of the same definition.
        a, b, g = vi**2, vj**2, vi * vj
        cov = lambda u, v: np.sum((u - u.mean()) * (v - v.mean())) / (len(u) - 1)
        w_hat = np.array([[cov(a, a), cov(a, b)], [cov(a, b), cov(b, b)]])
        d_hat = np.array([cov(g, a), cov(g, b)])
        c = np.linalg.solve(w_hat, -d_hat)
        expected = g.sum() + c[0] * (a.sum() - n1) + c[1] * (b.sum() - n2)
        res = cv_emp(pair)
        assert not res.fallback
        assert res.estimate == pytest.approx(expected, rel=1e-12)
