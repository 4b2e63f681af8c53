"""Covariance-model algebra behind variance-optimal estimation.

A :class:`CovarianceModel` holds the covariance matrix of a set of
sufficient statistics together with a partition index ``t``: the first ``t``
statistics belong to parameters being estimated, the remaining ``p - t`` to
parameters that are known and therefore usable as control variates.

Two variance computations live here and must agree:

* :func:`mle_variance` inverts the full covariance matrix, extracts the
  leading ``t x t`` block, and inverts that block (the Fisher-information
  route).
* :func:`cve_variance` forms the Schur complement ``A - B D^{-1} B^T`` of the
  known-parameter block (the optimal control-variate route).

Their equality on every valid model is the central identity this library
exists to exercise; the test suite checks it over thousands of random
positive-definite models.

All solves go through symmetric positive-definite (Cholesky) factorizations;
explicit inverses appear only in test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

#: Relative tolerance for the symmetry check on covariance matrices.
SYMMETRY_RTOL = 1e-12

#: Condition-number ceiling for reparametrization matrices.
COND_LIMIT = 1e12


class SingularSystem(ValueError):
    """A positive-definite factorization failed; the input violates its
    invariants (not positive definite, or numerically degenerate)."""


class SingularMatrix(ValueError):
    """A transformation matrix is numerically singular."""


class InvalidParams(ValueError):
    """Distribution parameters violate their positivity constraints."""


@dataclass(frozen=True)
class CovarianceModel:
    """Covariance of sufficient statistics with an estimated/known partition.

    Parameters
    ----------
    v : ndarray
        ``p x p`` symmetric positive-definite covariance matrix of the
        per-observation sufficient statistics.  Statistics of estimated
        parameters come first (indices ``0..t-1``), known ones after.
    t : int
        Partition index, ``1 <= t < p``.  Both sides must be nonempty: with
        no known statistics there is nothing to use as a control variate,
        and with nothing estimated there is no target.
    n : int
        Observation count; variances scale as ``1/n``.
    """

    v: np.ndarray
    t: int
    n: int

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "v", v)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("v must be a square matrix")
        p = v.shape[0]
        scale = np.abs(v).max()
        if scale == 0 or not np.isfinite(scale):
            raise ValueError("v must be finite and nonzero")
        if np.abs(v - v.T).max() > SYMMETRY_RTOL * scale:
            raise ValueError("v is not symmetric within tolerance")
        if not 1 <= self.t < p:
            raise ValueError(f"partition index t must satisfy 1 <= t < p, got t={self.t}, p={p}")
        if self.n < 1:
            raise ValueError("observation count n must be >= 1")
        try:
            cho_factor(v, lower=True)
        except LinAlgError as exc:
            raise ValueError("v is not positive definite") from exc

    @property
    def p(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True)
class CvWeights:
    """Optimal control-variate corrections ``c`` and the cross-covariance
    vector ``d`` they were solved against (``D c = -d``)."""

    c: np.ndarray
    d: np.ndarray


@dataclass(frozen=True)
class BivariateNormalParams:
    """Covariance parameters of a zero-mean bivariate normal."""

    sigma11: float
    sigma22: float
    sigma12: float

    def __post_init__(self):
        if not (self.sigma11 > 0 and self.sigma22 > 0):
            raise InvalidParams("variances must be positive")
        if self.sigma11 * self.sigma22 - self.sigma12 ** 2 <= 0:
            raise InvalidParams("covariance matrix must be positive definite")


def partition(model: CovarianceModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split ``v`` into blocks ``(A, B, D)`` at the partition index.

    ``A`` is the ``t x t`` covariance of the estimated-parameter statistics,
    ``D`` the ``(p-t) x (p-t)`` covariance of the known ones, and ``B`` the
    cross block, so that ``v = [[A, B], [B^T, D]]`` exactly.
    """
    t = model.t
    v = model.v
    return v[:t, :t].copy(), v[:t, t:].copy(), v[t:, t:].copy()


def cv_weights(model: CovarianceModel, alpha: np.ndarray) -> CvWeights:
    """Optimal control-variate corrections for the target ``alpha . y_E``.

    Solves ``D c = -B^T alpha``: the right-hand side is the cross-covariance
    of the target combination with each known statistic (by linearity of
    covariance), and the solution minimizes the corrected estimator's
    variance.
    """
    alpha = _check_alpha(model, alpha)
    _, b, dm = partition(model)
    d = b.T @ alpha
    try:
        cf = cho_factor(dm, lower=True)
    except LinAlgError as exc:
        raise SingularSystem("known-statistics covariance block is not PD") from exc
    return CvWeights(c=cho_solve(cf, -d), d=d)


def cve_variance(model: CovarianceModel, alpha: np.ndarray) -> float:
    """Variance of the optimally corrected estimator of ``alpha . y_E``.

    Equals ``alpha^T (A - B D^{-1} B^T) alpha / n``.  Never exceeds the
    uncorrected variance ``alpha^T A alpha / n``, with equality exactly when
    the target is uncorrelated with every known statistic.
    """
    alpha = _check_alpha(model, alpha)
    a, b, dm = partition(model)
    u = b.T @ alpha
    try:
        cf = cho_factor(dm, lower=True)
    except LinAlgError as exc:
        raise SingularSystem("known-statistics covariance block is not PD") from exc
    return float(alpha @ (a @ alpha) - u @ cho_solve(cf, u)) / model.n


def mle_variance(model: CovarianceModel, alpha: np.ndarray) -> float:
    """Asymptotic maximum-likelihood variance of ``alpha . y_E``.

    Computed along the Fisher-information route: invert the full covariance,
    take its leading ``t x t`` block, invert that block.  Both inversions are
    performed as Cholesky solves rather than explicit inverses.  Agrees with
    :func:`cve_variance` on every valid model.
    """
    alpha = _check_alpha(model, alpha)
    t = model.t
    try:
        cf_v = cho_factor(model.v, lower=True)
        # Leading t x t block of v^{-1}: solve against the first t unit vectors.
        w = cho_solve(cf_v, np.eye(model.p)[:, :t])[:t, :]
        w = (w + w.T) / 2.0
        cf_w = cho_factor(w, lower=True)
    except LinAlgError as exc:
        raise SingularSystem("covariance model is numerically degenerate") from exc
    return float(alpha @ cho_solve(cf_w, alpha)) / model.n


def reparametrize(model: CovarianceModel, a: np.ndarray) -> CovarianceModel:
    """Covariance model of the transformed statistics ``y~ = a^{-1} y``.

    The new covariance is ``a^{-1} v a^{-T}``; partition and observation
    count are unchanged.  When ``a`` is block diagonal with respect to the
    partition, variances of the transformed target ``a^T alpha`` computed on
    the new model reproduce the originals.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != model.v.shape:
        raise ValueError("transformation must match the covariance dimensions")
    if not np.all(np.isfinite(a)) or np.linalg.cond(a) >= COND_LIMIT:
        raise SingularMatrix("transformation matrix is numerically singular")
    x = np.linalg.solve(a, model.v)
    new_v = np.linalg.solve(a, x.T).T
    new_v = (new_v + new_v.T) / 2.0
    return CovarianceModel(v=new_v, t=model.t, n=model.n)


def bivariate_normal_cov(
    params: BivariateNormalParams, n: int, t: int = 2
) -> CovarianceModel:
    """Covariance of the bivariate-normal sufficient statistics.

    The statistics are, in order, the sample means of ``x1^2``, ``x2^2`` and
    ``x1 x2`` over ``n`` independent draws; the matrix below is their
    per-observation covariance:

    ``[[2 s11^2,   2 s12^2,   2 s11 s12],
      [2 s12^2,   2 s22^2,   2 s22 s12],
      [2 s11 s12, 2 s22 s12, s11 s22 + s12^2]]``

    The caller chooses the partition ``t`` for this ordering; to estimate the
    cross-covariance with both variances known, use :func:`sigma12_model`,
    which reorders the statistics so the estimated one comes first.
    """
    s11, s22, s12 = params.sigma11, params.sigma22, params.sigma12
    v = np.array(
        [
            [2 * s11 ** 2, 2 * s12 ** 2, 2 * s11 * s12],
            [2 * s12 ** 2, 2 * s22 ** 2, 2 * s22 * s12],
            [2 * s11 * s12, 2 * s22 * s12, s11 * s22 + s12 ** 2],
        ]
    )
    return CovarianceModel(v=v, t=t, n=n)


def sigma12_model(params: BivariateNormalParams, n: int) -> CovarianceModel:
    """Model for estimating the cross-covariance with both variances known.

    Permutes the statistics of :func:`bivariate_normal_cov` to
    ``(x1 x2, x1^2, x2^2)`` so the estimated statistic leads, and sets
    ``t = 1``.
    """
    base = bivariate_normal_cov(params, n).v
    order = [2, 0, 1]
    return CovarianceModel(v=base[np.ix_(order, order)], t=1, n=n)


def _check_alpha(model: CovarianceModel, alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (model.t,):
        raise ValueError(f"alpha must have length t={model.t}")
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha must be finite")
    return alpha
