"""Inner-product estimators from a sketch pair with known vector norms.

Six estimators of the same quantity, all functions of the sufficient
statistics ``(w1, w2, w3)`` and the known squared norms ``(n1, n2)``:

* ``baseline``   -- the raw cross-moment ``w3``.
* ``mle_newton`` -- Newton-Raphson on the likelihood cubic.
* ``mle_secant`` -- secant iteration on the same cubic.
* ``cv_init``    -- one control-variate correction with weights evaluated at
  the baseline estimate.
* ``cv_emp``     -- one correction with weights from empirical slot
  covariances.
* ``cv_em``      -- fixed-point iteration that re-evaluates the optimal
  weights at the current estimate; its fixed points are exactly the roots of
  the likelihood cubic, so it converges to the maximum-likelihood estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .sketch import SketchPair, SuffStats

BASELINE = "baseline"
MLE_NR = "mle-nr"
MLE_SECANT = "mle-secant"
CV_INIT = "cv-init"
CV_EMP = "cv-emp"
CV_EM = "cv-em"

METHODS = (BASELINE, MLE_NR, MLE_SECANT, CV_INIT, CV_EMP, CV_EM)

#: Iterative methods that report a meaningful convergence trace.
ITERATIVE_METHODS = (MLE_NR, MLE_SECANT, CV_EM)

#: Derivatives smaller than this abort a Newton step.
DERIVATIVE_FLOOR = 1e-300

#: Relative tolerance for the boundary (repeated-root) discriminant case.
DISCRIMINANT_RTOL = 1e-12


class NotConverged(RuntimeError):
    """Iteration budget exhausted; ``result`` carries the last iterate and
    the full trace so the caller can decide policy."""

    def __init__(self, message: str, result: "EstimatorResult"):
        super().__init__(message)
        self.result = result


class DerivativeVanished(NotConverged):
    """Newton step aborted on a numerically zero derivative."""


class SecantStall(NotConverged):
    """Secant step aborted on equal successive function values."""


class KTooSmall(ValueError):
    """Empirical covariances need at least 3 sketch slots."""


@dataclass(frozen=True)
class CubicPoly:
    """Monic cubic ``x^3 + c2 x^2 + c1 x + c0``."""

    c2: float
    c1: float
    c0: float

    def __post_init__(self):
        if not all(np.isfinite(c) for c in (self.c2, self.c1, self.c0)):
            raise ValueError("cubic coefficients must be finite")

    def __call__(self, x: float) -> float:
        return ((x + self.c2) * x + self.c1) * x + self.c0

    def deriv(self, x: float) -> float:
        return (3.0 * x + 2.0 * self.c2) * x + self.c1


class RootClassification(NamedTuple):
    count: int
    discriminant: float
    repeated_root: bool


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule shared by the iterative solvers.

    ``eps`` is an absolute tolerance in the units of the inner product;
    iteration stops once successive iterates differ by at most ``eps``.
    ``secant_offsets`` are the absolute displacements of the two secant
    starting points from the baseline estimate.
    """

    eps: float
    max_iter: int = 100
    secant_offsets: tuple[float, float] = (-1e-2, 1e-2)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @classmethod
    def for_norms(
        cls,
        n1: float,
        n2: float,
        eps_rel: float = 1e-6,
        offset_rel: float = 0.05,
        max_iter: int = 100,
    ) -> "SolverConfig":
        """Scale-aware config: tolerances relative to ``sqrt(n1 * n2)``,
        the natural magnitude of the inner product."""
        scale = float(np.sqrt(n1 * n2))
        return cls(
            eps=eps_rel * scale,
            max_iter=max_iter,
            secant_offsets=(-offset_rel * scale, offset_rel * scale),
        )


@dataclass(frozen=True)
class EstimatorResult:
    """Outcome of one estimator run.

    ``trace`` holds the successive iterates (a single value for the one-shot
    methods); on convergence its final two entries differ by at most the
    configured tolerance.  ``fallback`` marks an empirical-weight run that
    degraded to the baseline because its covariance system was singular.
    """

    estimate: float
    iterations: int
    converged: bool
    trace: tuple[float, ...]
    method: str
    fallback: bool = field(default=False)


def mle_cubic(stats: SuffStats, n1: float, n2: float) -> CubicPoly:
    """Likelihood cubic whose real root is the maximum-likelihood estimate.

    ``x^3 - w3 x^2 + (n1 w2 + n2 w1 - n1 n2) x - n1 n2 w3``, valid for both
    sketch schemes once the statistics are normalized (``E[w1] = n1`` etc.).
    """
    return CubicPoly(
        c2=-stats.w3,
        c1=n1 * stats.w2 + n2 * stats.w1 - n1 * n2,
        c0=-n1 * n2 * stats.w3,
    )


def classify_roots(cubic: CubicPoly) -> RootClassification:
    """Number of real roots via the cubic discriminant.

    Positive discriminant means three distinct real roots, negative means
    one.  Values within ``1e-12`` of zero (relative to a degree-6 homogeneous
    coefficient scale) are classified as the boundary case: three real roots
    with a repeat flag.
    """
    c2, c1, c0 = cubic.c2, cubic.c1, cubic.c0
    disc = (
        18.0 * c2 * c1 * c0
        - 4.0 * c2 ** 3 * c0
        + c2 ** 2 * c1 ** 2
        - 4.0 * c1 ** 3
        - 27.0 * c0 ** 2
    )
    scale = 1.0 + abs(c2) ** 6 + abs(c1) ** 3 + c0 ** 2
    if abs(disc) <= DISCRIMINANT_RTOL * scale:
        return RootClassification(count=3, discriminant=disc, repeated_root=True)
    if disc > 0:
        return RootClassification(count=3, discriminant=disc, repeated_root=False)
    return RootClassification(count=1, discriminant=disc, repeated_root=False)


def baseline(stats: SuffStats) -> EstimatorResult:
    """The uncorrected sketch estimate ``w3``."""
    return EstimatorResult(
        estimate=stats.w3, iterations=0, converged=True, trace=(stats.w3,), method=BASELINE
    )


def _cv_weights_at(f: float, n1: float, n2: float) -> tuple[float, float]:
    """Optimal correction weights when the inner product equals ``f``."""
    denom = f * f + n1 * n2
    return -f * n2 / denom, -f * n1 / denom


def _corrected_estimate(f: float, stats: SuffStats, n1: float, n2: float) -> float:
    """Control-variate estimate with weights evaluated at ``f``.

    Equivalent to ``w3 + c1 (w1 - n1) + c2 (w2 - n2)`` with the weights of
    :func:`_cv_weights_at`; written as a single expression so that ``cv_init``
    and the first ``cv_em`` update are bit-identical.
    """
    correction = n2 * (stats.w1 - n1) + n1 * (stats.w2 - n2)
    return stats.w3 - f * correction / (f * f + n1 * n2)


def cv_init(stats: SuffStats, n1: float, n2: float) -> EstimatorResult:
    """One-shot control variate with weights evaluated at the baseline.

    Identical to the first ``cv_em`` update.
    """
    est = _corrected_estimate(stats.w3, stats, n1, n2)
    return EstimatorResult(
        estimate=est, iterations=1, converged=True, trace=(est,), method=CV_INIT
    )


def cv_emp(pair: SketchPair) -> EstimatorResult:
    """One-shot control variate with empirically estimated weights.

    Per-slot samples ``(vi_s^2, vj_s^2, vi_s vj_s)`` provide sample
    covariances for the 2x2 weight system.  A singular system (e.g. constant
    slots) falls back to the baseline estimate, flagged on the result.
    """
    from .sketch import suff_stats

    if pair.k < 3:
        raise KTooSmall("empirical covariances need k >= 3 slots")
    stats = suff_stats(pair)
    a = pair.vi ** 2
    b = pair.vj ** 2
    g = pair.vi * pair.vj
    da, db, dg = a - a.mean(), b - b.mean(), g - g.mean()
    m = pair.k - 1
    w_hat = np.array(
        [[da @ da, da @ db], [da @ db, db @ db]]
    ) / m
    d_hat = np.array([dg @ da, dg @ db]) / m
    try:
        c = np.linalg.solve(w_hat, -d_hat)
    except np.linalg.LinAlgError:
        c = None
    if c is None or not np.all(np.isfinite(c)):
        return EstimatorResult(
            estimate=stats.w3,
            iterations=1,
            converged=True,
            trace=(stats.w3,),
            method=CV_EMP,
            fallback=True,
        )
    est = stats.w3 + c[0] * (stats.w1 - pair.norm_i_sq) + c[1] * (stats.w2 - pair.norm_j_sq)
    return EstimatorResult(
        estimate=float(est), iterations=1, converged=True, trace=(float(est),), method=CV_EMP
    )


def cv_em(stats: SuffStats, n1: float, n2: float, cfg: SolverConfig) -> EstimatorResult:
    """Fixed-point iteration of the control variate with self-consistent weights.

    Starting from ``f_1 = w3``, each update re-evaluates the optimal weights
    at the current estimate:

    ``f_{n+1} = w3 - f_n (n2 (w1 - n1) + n1 (w2 - n2)) / (f_n^2 + n1 n2)``

    Rearranging the fixed-point condition reproduces the likelihood cubic,
    so a converged iterate is a root of :func:`mle_cubic`.  Raises
    :class:`NotConverged` (carrying the partial result) when the iteration
    budget runs out.
    """
    f = stats.w3
    trace = [f]
    for it in range(1, cfg.max_iter + 1):
        f_next = _corrected_estimate(f, stats, n1, n2)
        trace.append(f_next)
        if abs(f_next - f) <= cfg.eps:
            return EstimatorResult(
                estimate=f_next,
                iterations=it,
                converged=True,
                trace=tuple(trace),
                method=CV_EM,
            )
        f = f_next
    result = EstimatorResult(
        estimate=f, iterations=cfg.max_iter, converged=False, trace=tuple(trace), method=CV_EM
    )
    raise NotConverged(f"no fixed point within {cfg.max_iter} updates", result)


def mle_newton(cubic: CubicPoly, x0: float, cfg: SolverConfig) -> EstimatorResult:
    """Newton-Raphson on the likelihood cubic with the analytic derivative.

    Stops when an update moves less than ``cfg.eps``.  Raises
    :class:`DerivativeVanished` on a numerically zero derivative and
    :class:`NotConverged` when the budget runs out; both carry the partial
    result.
    """
    x = float(x0)
    trace = [x]
    for it in range(1, cfg.max_iter + 1):
        dfx = cubic.deriv(x)
        if abs(dfx) < DERIVATIVE_FLOOR:
            result = EstimatorResult(
                estimate=x, iterations=it - 1, converged=False, trace=tuple(trace), method=MLE_NR
            )
            raise DerivativeVanished("derivative vanished at iterate", result)
        x_next = x - cubic(x) / dfx
        trace.append(x_next)
        if abs(x_next - x) <= cfg.eps:
            return EstimatorResult(
                estimate=x_next, iterations=it, converged=True, trace=tuple(trace), method=MLE_NR
            )
        x = x_next
    result = EstimatorResult(
        estimate=x, iterations=cfg.max_iter, converged=False, trace=tuple(trace), method=MLE_NR
    )
    raise NotConverged(f"no root within {cfg.max_iter} Newton updates", result)


def mle_secant(cubic: CubicPoly, x0: float, x1: float, cfg: SolverConfig) -> EstimatorResult:
    """Secant iteration on the likelihood cubic from two starting points.

    Error semantics mirror :func:`mle_newton`; equal successive function
    values raise :class:`SecantStall`.
    """
    if x0 == x1:
        raise ValueError("secant starting points must differ")
    xa, xb = float(x0), float(x1)
    fa, fb = cubic(xa), cubic(xb)
    trace = [xa, xb]
    for it in range(1, cfg.max_iter + 1):
        if fb == fa:
            result = EstimatorResult(
                estimate=xb,
                iterations=it - 1,
                converged=False,
                trace=tuple(trace),
                method=MLE_SECANT,
            )
            raise SecantStall("equal function values at successive iterates", result)
        x_next = xb - fb * (xb - xa) / (fb - fa)
        trace.append(x_next)
        if abs(x_next - xb) <= cfg.eps:
            return EstimatorResult(
                estimate=x_next,
                iterations=it,
                converged=True,
                trace=tuple(trace),
                method=MLE_SECANT,
            )
        xa, fa = xb, fb
        xb, fb = x_next, cubic(x_next)
    result = EstimatorResult(
        estimate=xb, iterations=cfg.max_iter, converged=False, trace=tuple(trace), method=MLE_SECANT
    )
    raise NotConverged(f"no root within {cfg.max_iter} secant updates", result)
