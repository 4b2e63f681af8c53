"""Reproducible Monte-Carlo harness for the estimator benchmarks.

Every random quantity is drawn from a stream derived by hashing structured
coordinates (cell index, trial index, sketch-size index) into the base seed,
so results are bit-identical across reruns and thread counts: a trial owns
its stream no matter which worker executes it, and aggregation always reduces
per-trial records in trial order.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import inner_product as ip
from . import trace as tr
from .sketch import (
    FEATURE_HASH,
    RANDOM_PROJECTION,
    SeededRng,
    draw_sketch_pair,
    generate_vector_pair,
    suff_stats,
)

_NS_PAIR = 1
_NS_SKETCH = 2
_NS_PROBE = 3
_NS_TIMING = 4

DEFAULT_K_VALUES = tuple(range(10, 101, 10))
DEFAULT_ANGLE = float(np.pi / 12)


class TooFewSamples(ValueError):
    """Boxplot statistics need at least 4 samples."""


class InsufficientPoints(ValueError):
    """A convergence fit needs at least 3 pooled error pairs."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Inner-product experiment grid.

    One cell per ``(ratio, angle)`` pair, enumerated ratio-major.  Within a
    cell, each trial draws a fresh sketch at every sketch size and runs the
    selected methods on it.  Solver tolerances are relative to the natural
    scale ``sqrt(n1 * n2)`` of each cell.
    """

    d: int = 1000
    ratios: tuple[float, ...] = (1.0,)
    angles: tuple[float, ...] = (DEFAULT_ANGLE,)
    k_values: tuple[int, ...] = DEFAULT_K_VALUES
    trials: int = 2000
    base_seed: int = 42
    scheme: str = FEATURE_HASH
    methods: tuple[str, ...] = ip.METHODS
    solver_eps_rel: float = 1e-6
    solver_max_iter: int = 100
    secant_offset_rel: float = 0.05

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be ≥ 1")
        if self.d < 2:
            raise ValueError("dimension d must be >= 2")
        if any(k < 1 for k in self.k_values) or not self.k_values:
            raise ValueError("all sketch sizes must be >= 1")
        if any(not 0 <= a <= np.pi for a in self.angles) or not self.angles:
            raise ValueError("angles must lie in [0, pi]")
        if any(r <= 0 for r in self.ratios) or not self.ratios:
            raise ValueError("ratios must be positive")
        if self.scheme not in (FEATURE_HASH, RANDOM_PROJECTION):
            raise ValueError(f"unknown sketch scheme {self.scheme!r}")
        unknown = set(self.methods) - set(ip.METHODS)
        if unknown or not self.methods:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    def cells(self) -> list[tuple[float, float]]:
        return list(product(self.ratios, self.angles))


@dataclass(frozen=True)
class SummaryStats:
    """Per ``(method, k, ratio, angle)`` aggregation of one experiment cell."""

    scheme: str
    method: str
    k: int
    r: float
    theta: float
    mse: float
    mean: float
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outlier_fraction: float
    mean_iterations: float
    nonconverged_fraction: float
    three_root_fraction: float


class BoxplotStats(NamedTuple):
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outlier_fraction: float


@dataclass(frozen=True)
class ConvergenceFit:
    """Least-squares estimate of the empirical convergence order.

    Fitted over pooled pairs of consecutive absolute errors, keeping only
    pairs where both errors exceed ``10 * eps`` (past that the iteration sits
    at its tolerance floor and carries no rate information).
    """

    alpha: float
    log_c: float
    r_squared: float
    points_used: int


@dataclass(frozen=True)
class ConvergenceSummary:
    """Distribution of per-cell convergence fits for one method."""

    method: str
    k: int
    cells: int
    alpha_median: float
    alpha_q1: float
    alpha_q3: float
    c_median: float
    log_c_median: float
    points_total: int


@dataclass(frozen=True)
class TraceConfig:
    """Trace-estimation experiment: repeated probe batches on one problem."""

    methods: tuple[str, ...] = tr.TRACE_METHODS
    k: int = 100
    trials: int = 1000
    kind: str = tr.GAUSSIAN
    base_seed: int = 42

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be ≥ 1")
        if self.k < 1:
            raise ValueError("probe count k must be >= 1")
        unknown = set(self.methods) - set(tr.TRACE_METHODS)
        if unknown or not self.methods:
            raise ValueError(f"unknown trace methods: {sorted(unknown)}")
        if self.kind not in (tr.GAUSSIAN, tr.RADEMACHER):
            raise ValueError(f"unknown probe kind {self.kind!r}")


@dataclass(frozen=True)
class TraceSummary:
    method: str
    kind: str
    k: int
    trials: int
    true_trace: float
    mean: float
    variance: float
    mse: float
    rejected_fraction: float


class TimingRow(NamedTuple):
    k: int
    em_nr_ratio: float
    em_nr_2sd: float
    em_sec_ratio: float
    em_sec_2sd: float
    trials: int


def resolve_threads(threads: int) -> int:
    """0 means auto (one worker per CPU); results never depend on the value."""
    if threads < 0:
        raise ValueError("threads must be >= 0")
    return threads if threads > 0 else (os.cpu_count() or 1)


def _map_trials(trials: int, threads: int, worker: Callable[[int, int], None]) -> None:
    """Run ``worker(lo, hi)`` over a partition of ``range(trials)``.

    Workers write to disjoint trial indices of preallocated arrays, so the
    schedule cannot affect results.
    """
    threads = resolve_threads(threads)
    if threads == 1 or trials < 2:
        worker(0, trials)
        return
    chunk = max(1, -(-trials // (threads * 4)))
    bounds = [(lo, min(lo + chunk, trials)) for lo in range(0, trials, chunk)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, lo, hi) for lo, hi in bounds]
        for fut in futures:
            fut.result()


def oracle_roots(cubic: ip.CubicPoly) -> np.ndarray:
    """Real roots of the cubic via the companion-matrix eigenvalues.

    Harness-side oracle: used to classify which root an iteration converged
    to, never as a production estimator.
    """
    roots = np.roots([1.0, cubic.c2, cubic.c1, cubic.c0])
    scale = max(1.0, float(np.abs(roots).max()))
    return np.sort(roots[np.abs(roots.imag) <= 1e-9 * scale].real)


def _run_method(method, stats, pair, cubic, cfg):
    """Run one estimator, treating solver failures as data (last iterate)."""
    try:
        if method == ip.BASELINE:
            return ip.baseline(stats)
        if method == ip.CV_INIT:
            return ip.cv_init(stats, pair.norm_i_sq, pair.norm_j_sq)
        if method == ip.CV_EMP:
            return ip.cv_emp(pair)
        if method == ip.CV_EM:
            return ip.cv_em(stats, pair.norm_i_sq, pair.norm_j_sq, cfg)
        if method == ip.MLE_NR:
            return ip.mle_newton(cubic, stats.w3, cfg)
        if method == ip.MLE_SECANT:
            return ip.mle_secant(
                cubic,
                stats.w3 + cfg.secant_offsets[0],
                stats.w3 + cfg.secant_offsets[1],
                cfg,
            )
        raise ValueError(f"unknown method {method!r}")
    except ip.NotConverged as exc:
        return exc.result


def run_inner_product(
    config: ExperimentConfig,
    threads: int = 1,
    progress: Callable[[str], None] | None = None,
) -> list[SummaryStats]:
    """Run the full experiment grid and aggregate per (method, k, cell).

    Deterministic for a fixed config, including ``base_seed``, regardless of
    ``threads``.  ``progress`` receives one line per finished cell.
    """
    results: list[SummaryStats] = []
    base = SeededRng(config.base_seed)
    methods = list(config.methods)
    k_values = list(config.k_values)

    for cell_index, (ratio, theta) in enumerate(config.cells()):
        x1, x2 = generate_vector_pair(
            config.d, ratio, theta, base.derive(_NS_PAIR, cell_index)
        )
        n1, n2 = float(x1 @ x1), float(x2 @ x2)
        true_ip = float(x1 @ x2)
        cfg = ip.SolverConfig.for_norms(
            n1,
            n2,
            eps_rel=config.solver_eps_rel,
            offset_rel=config.secant_offset_rel,
            max_iter=config.solver_max_iter,
        )

        shape = (len(methods), len(k_values), config.trials)
        estimates = np.empty(shape)
        iterations = np.empty(shape, dtype=np.int64)
        converged = np.empty(shape, dtype=bool)
        three_root = np.empty((len(k_values), config.trials), dtype=bool)

        def worker(lo: int, hi: int) -> None:
            for trial in range(lo, hi):
                for ki, k in enumerate(k_values):
                    rng = base.derive(_NS_SKETCH, cell_index, trial, ki)
                    pair = draw_sketch_pair(x1, x2, k, config.scheme, rng)
                    stats = suff_stats(pair)
                    cubic = ip.mle_cubic(stats, n1, n2)
                    three_root[ki, trial] = ip.classify_roots(cubic).count == 3
                    for mi, method in enumerate(methods):
                        res = _run_method(method, stats, pair, cubic, cfg)
                        estimates[mi, ki, trial] = res.estimate
                        iterations[mi, ki, trial] = res.iterations
                        converged[mi, ki, trial] = res.converged

        _map_trials(config.trials, threads, worker)

        for mi, method in enumerate(methods):
            for ki, k in enumerate(k_values):
                results.append(
                    _cell_summary(
                        config.scheme,
                        method,
                        k,
                        ratio,
                        theta,
                        true_ip,
                        estimates[mi, ki],
                        iterations[mi, ki],
                        converged[mi, ki],
                        float(three_root[ki].mean()),
                    )
                )
        if progress is not None:
            progress(f"cell {cell_index + 1}/{len(config.cells())}: r={ratio:g} theta={theta:g}")
    return results


def _cell_summary(
    scheme, method, k, ratio, theta, truth, estimates, iterations, converged, three_frac
) -> SummaryStats:
    if estimates.size >= 4:
        box = boxplot_stats(estimates)
    else:
        # Too few trials for Tukey fences; quantiles degenerate, no outliers.
        q1, med, q3 = np.quantile(estimates, [0.25, 0.5, 0.75])
        box = BoxplotStats(float(med), float(q1), float(q3),
                           float(estimates.min()), float(estimates.max()), 0.0)
    return SummaryStats(
        scheme=scheme,
        method=method,
        k=k,
        r=ratio,
        theta=theta,
        mse=float(np.mean((estimates - truth) ** 2)),
        mean=float(estimates.mean()),
        median=box.median,
        q1=box.q1,
        q3=box.q3,
        whisker_lo=box.whisker_lo,
        whisker_hi=box.whisker_hi,
        outlier_fraction=box.outlier_fraction,
        mean_iterations=float(iterations.mean()),
        nonconverged_fraction=float(np.mean(~converged)),
        three_root_fraction=three_frac,
    )


def boxplot_stats(samples: Sequence[float]) -> BoxplotStats:
    """Tukey boxplot statistics with linear-interpolation quantiles.

    Whiskers sit at the most extreme data within 1.5 IQR of the quartiles;
    everything outside counts as an outlier.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 4:
        raise TooFewSamples("boxplot statistics need at least 4 samples")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    return BoxplotStats(
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_lo=float(inside.min()),
        whisker_hi=float(inside.max()),
        outlier_fraction=float(np.mean((x < lo_fence) | (x > hi_fence))),
    )


def convergence_fit(
    traces: Sequence[Sequence[float]], truth: float, eps: float
) -> ConvergenceFit:
    """Fit ``log e_{n+1} = log C + alpha log e_n`` over pooled trace errors.

    Only pairs with both errors above ``10 * eps`` enter the fit.  Raises
    :class:`InsufficientPoints` with fewer than 3 usable pairs.
    """
    xs: list[float] = []
    ys: list[float] = []
    floor = 10.0 * eps
    for trace in traces:
        err = np.abs(np.asarray(trace, dtype=float) - truth)
        ok = err > floor
        for j in range(len(err) - 1):
            if ok[j] and ok[j + 1]:
                xs.append(np.log(err[j]))
                ys.append(np.log(err[j + 1]))
    if len(xs) < 3:
        raise InsufficientPoints(f"need >= 3 error pairs above 10*eps, got {len(xs)}")
    x = np.asarray(xs)
    y = np.asarray(ys)
    design = np.column_stack([x, np.ones_like(x)])
    (alpha, log_c), residual, *_ = np.linalg.lstsq(design, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(residual[0]) if residual.size else float(np.sum((y - design @ [alpha, log_c]) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return ConvergenceFit(
        alpha=float(alpha), log_c=float(log_c), r_squared=r_squared, points_used=len(x)
    )


def run_convergence(
    config: ExperimentConfig, k: int = 100, threads: int = 1
) -> tuple[list[ConvergenceSummary], list[tuple[str, float, float, ConvergenceFit]]]:
    """Pooled convergence fits for the iterative solvers at one sketch size.

    Per cell, converged traces are rescaled by ``sqrt(n1 * n2)`` (errors
    become scale-free, so fitted constants are comparable across cells and
    dimensions), measured against the companion root nearest each trace's
    limit, and pooled into one fit per method.  Returns per-method summaries
    over cells plus the individual cell fits.
    """
    methods = [m for m in config.methods if m in ip.ITERATIVE_METHODS]
    cell_fits: list[tuple[str, float, float, ConvergenceFit]] = []
    base = SeededRng(config.base_seed)

    for cell_index, (ratio, theta) in enumerate(config.cells()):
        x1, x2 = generate_vector_pair(
            config.d, ratio, theta, base.derive(_NS_PAIR, cell_index)
        )
        n1, n2 = float(x1 @ x1), float(x2 @ x2)
        scale = float(np.sqrt(n1 * n2))
        cfg = ip.SolverConfig.for_norms(
            n1,
            n2,
            eps_rel=config.solver_eps_rel,
            offset_rel=config.secant_offset_rel,
            max_iter=config.solver_max_iter,
        )
        data: dict[str, list[tuple[list[float], float]]] = {m: [] for m in methods}

        traces_buf: list[list] = [None] * config.trials

        def worker(lo: int, hi: int) -> None:
            for trial in range(lo, hi):
                rng = base.derive(_NS_SKETCH, cell_index, trial, 0)
                pair = draw_sketch_pair(x1, x2, k, config.scheme, rng)
                stats = suff_stats(pair)
                cubic = ip.mle_cubic(stats, n1, n2)
                roots = oracle_roots(cubic)
                row = []
                for method in methods:
                    res = _run_method(method, stats, pair, cubic, cfg)
                    if not res.converged or roots.size == 0:
                        row.append(None)
                        continue
                    truth = roots[np.argmin(np.abs(roots - res.trace[-1]))]
                    row.append(([v / scale for v in res.trace], truth / scale))
                traces_buf[trial] = row

        _map_trials(config.trials, threads, worker)
        for row in traces_buf:
            for method, entry in zip(methods, row):
                if entry is not None:
                    data[method].append(entry)

        for method in methods:
            traces = [t for t, _ in data[method]]
            if not traces:
                continue
            # Shift each trace so its own oracle root sits at the shared origin.
            shifted = [
                [v - truth for v in trace] for (trace, truth) in data[method]
            ]
            try:
                fit = convergence_fit(shifted, 0.0, config.solver_eps_rel)
            except InsufficientPoints:
                continue
            cell_fits.append((method, ratio, theta, fit))

    summaries = []
    for method in methods:
        fits = [f for m, _, _, f in cell_fits if m == method]
        if not fits:
            continue
        alphas = np.array([f.alpha for f in fits])
        log_cs = np.array([f.log_c for f in fits])
        summaries.append(
            ConvergenceSummary(
                method=method,
                k=k,
                cells=len(fits),
                alpha_median=float(np.median(alphas)),
                alpha_q1=float(np.quantile(alphas, 0.25)),
                alpha_q3=float(np.quantile(alphas, 0.75)),
                c_median=float(np.median(np.exp(log_cs))),
                log_c_median=float(np.median(log_cs)),
                points_total=int(sum(f.points_used for f in fits)),
            )
        )
    return summaries, cell_fits


def run_trace(
    m: np.ndarray, b: np.ndarray, config: TraceConfig, threads: int = 1
) -> list[TraceSummary]:
    """Repeated probe batches on one trace problem, one summary per method.

    All methods see the same probe batch within a trial, so variance
    comparisons are paired.  Trials rejected by a vanishing ratio denominator
    are excluded from that method's summary and reported as a fraction.
    """
    problem = tr.TraceProblem(m=m, b=b, k=config.k)
    true_trace = float(np.trace(problem.m))
    tr_mb = float(np.trace(problem.m @ problem.b))
    m_diag = np.diag(problem.m).copy()
    methods = list(config.methods)
    base = SeededRng(config.base_seed)

    values = np.full((len(methods), config.trials), np.nan)

    def worker(lo: int, hi: int) -> None:
        for trial in range(lo, hi):
            probes = tr.ProbeBatch.draw(
                problem.d, config.k, config.kind, base.derive(_NS_PROBE, trial)
            )
            for mi, method in enumerate(methods):
                try:
                    if method == tr.HUTCHINSON:
                        est = tr.hutchinson(problem, probes)
                    elif method == tr.ADAMS_CV:
                        est = tr.adams_cv(problem, probes, tr_mb=tr_mb)
                    elif method == tr.ADAMS_CV_EMP:
                        est = tr.adams_cv(problem, probes)
                    elif method == tr.DIAG_CV:
                        est = tr.diag_cv(problem, probes, m_diag)
                    elif method == tr.BEKAS:
                        est = tr.bekas(problem, probes)
                    else:
                        raise ValueError(f"unknown trace method {method!r}")
                except tr.ZeroDenominator:
                    continue
                values[mi, trial] = est.value

    _map_trials(config.trials, threads, worker)

    summaries = []
    for mi, method in enumerate(methods):
        col = values[mi]
        accepted = col[np.isfinite(col)]
        rejected_fraction = 1.0 - len(accepted) / config.trials
        if len(accepted) == 0:
            raise ArithmeticError(f"all {config.trials} trials rejected for {method}")
        variance = float(accepted.var(ddof=1)) if len(accepted) > 1 else 0.0
        summaries.append(
            TraceSummary(
                method=method,
                kind=config.kind,
                k=config.k,
                trials=config.trials,
                true_trace=true_trace,
                mean=float(accepted.mean()),
                variance=variance,
                mse=float(np.mean((accepted - true_trace) ** 2)),
                rejected_fraction=rejected_fraction,
            )
        )
    return summaries


def timing_ratios(config: ExperimentConfig, threads: int = 1) -> list[TimingRow]:
    """Wall-clock ratio of one fixed-point estimate to one root-finder run.

    Per trial, each solver is timed on the same sketch; ratios are averaged
    with a two-standard-deviation band.  Informational only: absolute values
    are machine-dependent.
    """
    del threads  # timing is inherently serial; accepted for API symmetry
    ratio, theta = config.cells()[0]
    base = SeededRng(config.base_seed)
    x1, x2 = generate_vector_pair(config.d, ratio, theta, base.derive(_NS_PAIR, 0))
    n1, n2 = float(x1 @ x1), float(x2 @ x2)
    cfg = ip.SolverConfig.for_norms(
        n1,
        n2,
        eps_rel=config.solver_eps_rel,
        offset_rel=config.secant_offset_rel,
        max_iter=config.solver_max_iter,
    )
    rows = []
    for ki, k in enumerate(config.k_values):
        nr_ratios = np.empty(config.trials)
        sec_ratios = np.empty(config.trials)
        for trial in range(config.trials):
            rng = base.derive(_NS_TIMING, trial, ki)
            pair = draw_sketch_pair(x1, x2, k, config.scheme, rng)
            stats = suff_stats(pair)
            cubic = ip.mle_cubic(stats, n1, n2)
            t_em = _time_call(lambda: _run_method(ip.CV_EM, stats, pair, cubic, cfg))
            t_nr = _time_call(lambda: _run_method(ip.MLE_NR, stats, pair, cubic, cfg))
            t_sec = _time_call(lambda: _run_method(ip.MLE_SECANT, stats, pair, cubic, cfg))
            nr_ratios[trial] = t_em / t_nr
            sec_ratios[trial] = t_em / t_sec
        rows.append(
            TimingRow(
                k=k,
                em_nr_ratio=float(nr_ratios.mean()),
                em_nr_2sd=2.0 * float(nr_ratios.std(ddof=1)),
                em_sec_ratio=float(sec_ratios.mean()),
                em_sec_2sd=2.0 * float(sec_ratios.std(ddof=1)),
                trials=config.trials,
            )
        )
    return rows


def _time_call(fn: Callable[[], object]) -> float:
    start = time.perf_counter_ns()
    fn()
    return max(time.perf_counter_ns() - start, 1)


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Config copy with the given fields replaced (None values ignored)."""
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **clean)
