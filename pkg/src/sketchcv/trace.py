"""Stochastic trace estimators with control-variate corrections.

Given a symmetric matrix ``M`` probed with random vectors ``r_i``, the
quadratic forms ``r_i^T M r_i`` average to ``tr(M)``.  With a known diagonal
matrix ``B`` available, the same probes supply control variates at two
granularities:

* one scalar control ``r^T B r`` with a single weight (``adams_cv``);
* one control per matrix slot, ``r_s (B r)_s``, with per-slot weights
  (``diag_cv``), whose fixed-point closed form is the per-slot ratio
  estimator (``bekas``), exact on diagonal matrices.

Closed-form variances and covariance identities for all of these live in
:func:`trace_variance_oracles`; they depend on whether probes are Gaussian or
Rademacher.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sketch import SeededRng

HUTCHINSON = "hutchinson"
ADAMS_CV = "adams-cv"
ADAMS_CV_EMP = "adams-cv-emp"
DIAG_CV = "diag-cv"
BEKAS = "bekas"

TRACE_METHODS = (HUTCHINSON, ADAMS_CV, ADAMS_CV_EMP, DIAG_CV, BEKAS)

GAUSSIAN = "gaussian"
RADEMACHER = "rademacher"

#: Denominators/variances below this are treated as exact zeros.
ZERO_FLOOR = 1e-300

_SYMMETRY_RTOL = 1e-12


class DimensionMismatch(ValueError):
    """Probe batch and trace problem disagree on dimensions."""


class ZeroDenominator(ArithmeticError):
    """A per-slot ratio denominator vanished; the run must be rejected."""

    def __init__(self, slot: int):
        super().__init__(f"ratio denominator vanished at slot {slot}")
        self.slot = slot


@dataclass(frozen=True)
class TraceProblem:
    """Symmetric target matrix, known diagonal matrix, and probe count."""

    m: np.ndarray
    b: np.ndarray
    k: int

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "b", b)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("m must be square")
        scale = max(np.abs(m).max(), 1e-30)
        if np.abs(m - m.T).max() > _SYMMETRY_RTOL * scale:
            raise ValueError("m must be symmetric")
        if b.shape != m.shape:
            raise ValueError("b must match m in shape")
        if np.abs(b - np.diag(np.diag(b))).max() != 0:
            raise ValueError("b must be diagonal")
        if np.abs(np.diag(b)).min() <= 0:
            raise ValueError("b must have nonzero diagonal entries")
        if self.k < 1:
            raise ValueError("probe count k must be >= 1")

    @property
    def d(self) -> int:
        return self.m.shape[0]

    @property
    def b_diag(self) -> np.ndarray:
        return np.diag(self.b)


@dataclass(frozen=True)
class ProbeBatch:
    """``k`` probe vectors of length ``d``, Gaussian or Rademacher."""

    r: np.ndarray
    kind: str

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        object.__setattr__(self, "r", r)
        if r.ndim != 2:
            raise ValueError("probes must form a k x d array")
        if self.kind not in (GAUSSIAN, RADEMACHER):
            raise ValueError(f"unknown probe kind {self.kind!r}")

    @property
    def k(self) -> int:
        return self.r.shape[0]

    @classmethod
    def draw(cls, d: int, k: int, kind: str, rng: SeededRng) -> "ProbeBatch":
        g = rng.generator()
        if kind == GAUSSIAN:
            r = g.standard_normal((k, d))
        elif kind == RADEMACHER:
            r = np.where(g.integers(0, 2, size=(k, d)) == 1, 1.0, -1.0)
        else:
            raise ValueError(f"unknown probe kind {kind!r}")
        return cls(r=r, kind=kind)


@dataclass(frozen=True)
class TraceEstimate:
    """Estimator value plus the per-probe (or per-slot) contributions whose
    aggregation reproduces it; ``fallback`` marks an empirical-weight run
    that degraded to the plain probe average."""

    value: float
    per_probe: np.ndarray
    method: str
    fallback: bool = field(default=False)


def _check(problem: TraceProblem, probes: ProbeBatch) -> None:
    if probes.r.shape[1] != problem.d:
        raise DimensionMismatch("probe length does not match matrix dimension")
    if probes.k != problem.k:
        raise DimensionMismatch("probe count does not match problem.k")


def _quad_forms(mat: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Per-probe quadratic forms ``r_i^T mat r_i``."""
    return np.einsum("ij,ij->i", r @ mat, r)


def hutchinson(problem: TraceProblem, probes: ProbeBatch) -> TraceEstimate:
    """Average of the per-probe quadratic forms; unbiased for ``tr(M)``."""
    _check(problem, probes)
    y = _quad_forms(problem.m, probes.r)
    return TraceEstimate(value=float(y.mean()), per_probe=y, method=HUTCHINSON)


def adams_cv(
    problem: TraceProblem, probes: ProbeBatch, tr_mb: float | None = None
) -> TraceEstimate:
    """Probe average corrected by the scalar control ``r^T B r - tr(B)``.

    With ``tr_mb`` supplied, the theoretically optimal weight
    ``-tr(MB) / tr(B^2)`` is used.  Otherwise the weight is the ratio of the
    sample covariance of the two quadratic forms to the sample variance of
    the control (needs ``k >= 2``); a degenerate control falls back to the
    plain average, flagged on the result.
    """
    _check(problem, probes)
    y = _quad_forms(problem.m, probes.r)
    z = _quad_forms(problem.b, probes.r)
    tr_b = float(np.trace(problem.b))
    if tr_mb is not None:
        c = -tr_mb / float(np.trace(problem.b @ problem.b))
        per = y + c * (z - tr_b)
        return TraceEstimate(value=float(per.mean()), per_probe=per, method=ADAMS_CV)
    if probes.k < 2:
        raise ValueError("empirical weight needs k >= 2 probes")
    dz = z - z.mean()
    var_z = float(dz @ dz) / (probes.k - 1)
    if var_z < ZERO_FLOOR:
        return TraceEstimate(
            value=float(y.mean()), per_probe=y, method=ADAMS_CV_EMP, fallback=True
        )
    cov_yz = float((y - y.mean()) @ dz) / (probes.k - 1)
    c = -cov_yz / var_z
    per = y + c * (z - tr_b)
    return TraceEstimate(value=float(per.mean()), per_probe=per, method=ADAMS_CV_EMP)


def diag_cv(
    problem: TraceProblem, probes: ProbeBatch, m_diag_known: np.ndarray
) -> TraceEstimate:
    """Per-slot controls ``r_s (B r)_s - b_ss`` with weights ``-m_ss / b_ss``.

    The theoretically optimal per-slot weights require the diagonal of ``M``;
    this variant exists to validate those weights and their variance
    reduction.
    """
    _check(problem, probes)
    m_diag = np.asarray(m_diag_known, dtype=float)
    if m_diag.shape != (problem.d,):
        raise DimensionMismatch("m_diag_known must have one entry per slot")
    b_diag = problem.b_diag
    c = -m_diag / b_diag
    y = _quad_forms(problem.m, probes.r)
    # slot_controls[i, s] = r_is * (B r_i)_s
    slot_controls = probes.r * (probes.r @ problem.b.T)
    per = y + (slot_controls - b_diag) @ c
    return TraceEstimate(value=float(per.mean()), per_probe=per, method=DIAG_CV)


def bekas_diag(problem: TraceProblem, probes: ProbeBatch) -> np.ndarray:
    """Per-slot ratio estimates of ``diag(M)``.

    Slot ``s`` estimates ``m_ss`` as
    ``b_ss * sum_i r_is (M r_i)_s / sum_i r_is (B r_i)_s``; the estimate is
    exact whenever ``M`` is diagonal.  Raises :class:`ZeroDenominator` if any
    slot's denominator vanishes (possible only for Rademacher cancellations).
    """
    _check(problem, probes)
    num = np.einsum("is,is->s", probes.r, probes.r @ problem.m.T)
    den = np.einsum("is,is->s", probes.r, probes.r @ problem.b.T)
    small = np.abs(den) <= ZERO_FLOOR
    if np.any(small):
        raise ZeroDenominator(int(np.argmax(small)))
    return problem.b_diag * num / den


def bekas(problem: TraceProblem, probes: ProbeBatch) -> TraceEstimate:
    """Sum of the per-slot ratio estimates; a (possibly biased) trace estimate.

    ``per_probe`` holds the per-slot contributions, so their sum reproduces
    ``value`` bit-exactly.
    """
    diag_est = bekas_diag(problem, probes)
    return TraceEstimate(value=float(diag_est.sum()), per_probe=diag_est, method=BEKAS)


@dataclass(frozen=True)
class TraceVarianceOracles:
    """Closed-form per-probe variances and slot covariance identities.

    ``hutchinson_per_probe`` is the variance of one quadratic form
    (``2 ||M||_F^2`` Gaussian, ``2 (||M||_F^2 - sum m_ss^2)`` Rademacher);
    divide by the probe count for a batch.  ``adams_reduction_per_probe`` and
    ``bekas_per_probe`` scale the same way.  ``diag_cv_reduction_nominal``
    reproduces the published expression ``2 sum m_ss^2`` verbatim; its probe
    scaling is inconsistent with the other reductions, so tests compare the
    realized reduction against Monte-Carlo measurements instead.

    The slot arrays cover the second-moment identities of the per-slot
    statistics ``u_s = r_s (M r)_s`` and ``w_s = r_s (B r)_s``:
    ``var_slot_b[s] = Var(w_s)``, ``cov_slot_bb[s, t] = Cov(w_s, w_t)``
    (off-diagonal), ``cov_slot_mb_same[s] = Cov(u_s, w_s)`` and
    ``cov_slot_mb_cross[s, t] = Cov(u_s, w_t)`` (off-diagonal).
    """

    kind: str
    hutchinson_per_probe: float
    adams_reduction_per_probe: float
    diag_cv_reduction_nominal: float
    bekas_per_probe: float
    var_slot_b: np.ndarray
    cov_slot_bb: np.ndarray
    cov_slot_mb_same: np.ndarray
    cov_slot_mb_cross: np.ndarray


def trace_variance_oracles(m: np.ndarray, b: np.ndarray, kind: str) -> TraceVarianceOracles:
    """Analytic variance/covariance record for the given probe kind.

    For Rademacher probes with a diagonal ``B``, the control ``r^T B r`` is
    constant, so every control-variate covariance and reduction is zero and
    only the probe-average variance survives.
    """
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    d = m.shape[0]
    frob2 = float(np.sum(m * m))
    sum_diag2 = float(np.sum(np.diag(m) ** 2))
    tr_mb = float(np.trace(m @ b))
    tr_b2 = float(np.trace(b @ b))
    b_diag = np.diag(b)
    m_diag = np.diag(m)

    if kind == GAUSSIAN:
        hutch = 2.0 * frob2
        adams_red = 2.0 * tr_mb ** 2 / tr_b2
        # Var(r_s (B r)_s) = ||b_s||^2 + b_ss^2; for diagonal B this is 2 b_ss^2.
        var_slot_b = np.sum(b * b, axis=1) + b_diag ** 2
        cov_slot_bb = b * b.T
        np.fill_diagonal(cov_slot_bb, var_slot_b)
        cov_slot_mb_same = np.sum(m * b, axis=1) + m_diag * b_diag
        cov_slot_mb_cross = m * b.T
        np.fill_diagonal(cov_slot_mb_cross, cov_slot_mb_same)
    elif kind == RADEMACHER:
        hutch = 2.0 * (frob2 - sum_diag2)
        adams_red = 0.0
        var_slot_b = np.zeros(d)
        cov_slot_bb = np.zeros((d, d))
        cov_slot_mb_same = np.zeros(d)
        cov_slot_mb_cross = np.zeros((d, d))
    else:
        raise ValueError(f"unknown probe kind {kind!r}")

    return TraceVarianceOracles(
        kind=kind,
        hutchinson_per_probe=hutch,
        adams_reduction_per_probe=adams_red,
        diag_cv_reduction_nominal=2.0 * sum_diag2,
        bekas_per_probe=2.0 * (frob2 - sum_diag2),
        var_slot_b=var_slot_b,
        cov_slot_bb=cov_slot_bb,
        cov_slot_mb_same=cov_slot_mb_same,
        cov_slot_mb_cross=cov_slot_mb_cross,
    )


def load_matrix(path) -> np.ndarray:
    """Read a symmetric matrix from the plain-text exchange format.

    First line holds the dimension ``d``; each of the next ``d`` lines holds
    ``d`` space-separated decimals.  Symmetry is validated on load and a
    violation reports the offending indices.
    """
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split("\n")
    header = tokens[0].strip()
    try:
        d = int(header)
    except ValueError as exc:
        raise ValueError(f"first line must be the dimension, got {header!r}") from exc
    rows = []
    for line_no, line in enumerate(tokens[1 : d + 1], start=2):
        values = line.split()
        if len(values) != d:
            raise ValueError(f"line {line_no}: expected {d} values, got {len(values)}")
        rows.append([float(v) for v in values])
    if len(rows) != d:
        raise ValueError(f"expected {d} matrix rows, got {len(rows)}")
    m = np.array(rows)
    scale = max(np.abs(m).max(), 1e-30)
    asym = np.abs(m - m.T)
    if asym.max() > _SYMMETRY_RTOL * scale:
        i, j = np.unravel_index(int(np.argmax(asym)), m.shape)
        raise ValueError(
            f"matrix is not symmetric: entries ({i}, {j}) and ({j}, {i}) differ "
            f"({m[i, j]!r} vs {m[j, i]!r})"
        )
    return m
