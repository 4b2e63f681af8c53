"""Command-line front end: run benchmarks, write CSV/JSON, check identities.

Subcommands
-----------
``inner-product``  sketch-based inner-product benchmark grid
``trace``          stochastic trace estimators on a matrix file
``equivalence``    maximum-likelihood vs control-variate variance identity
``convergence``    empirical convergence-order fits for the iterative solvers

Exit codes: 0 success, 1 identity-check failure, 2 usage/config error,
3 I/O error.  All floating-point output is rendered with 17 significant
digits, and JSON files carry exactly the same numeric tokens as the CSVs, so
reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, efamily
from . import inner_product as ip
from . import trace as tr
from .sketch import SeededRng

EXIT_OK = 0
EXIT_IDENTITY = 1
EXIT_USAGE = 2
EXIT_IO = 3

INNER_PRODUCT_COLUMNS = [
    "scheme", "method", "k", "r", "theta", "mse", "mean", "median", "q1", "q3",
    "outlier_fraction", "mean_iterations", "nonconverged_fraction", "three_root_fraction",
]

TRACE_COLUMNS = [
    "method", "kind", "k", "trials", "true_trace", "mean", "variance", "mse",
    "rejected_fraction",
]

CONVERGENCE_COLUMNS = [
    "method", "k", "cells", "points", "alpha_median", "alpha_q1", "alpha_q3",
    "c_median", "log_c_median",
]

CONVERGENCE_SAMPLE_COLUMNS = ["method", "k", "r", "theta", "alpha", "log_c", "r_squared", "points"]

_CONVERGENCE_ANGLES = (
    float(np.pi / 12),
    float(np.pi / 4),
    float(np.pi / 2),
    float(3 * np.pi / 4),
    float(11 * np.pi / 12),
)


def _fmt(value) -> str:
    """Render one cell; floats get 17 significant digits (round-trip exact)."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_records(records, columns, out_dir: Path, stem: str, fmt: str) -> None:
    """Write records as CSV and/or JSON with identical numeric tokens."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt in ("csv", "both"):
        lines = [",".join(columns)]
        for rec in records:
            lines.append(",".join(_fmt(rec[c]) for c in columns))
        (out_dir / f"{stem}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if fmt in ("json", "both"):
        rows = []
        for rec in records:
            fields = []
            for c in columns:
                v = rec[c]
                token = json.dumps(v) if isinstance(v, str) else _fmt(v)
                fields.append(f'"{c}": {token}')
            rows.append("  {" + ", ".join(fields) + "}")
        text = "[\n" + ",\n".join(rows) + "\n]\n"
        (out_dir / f"{stem}.json").write_text(text, encoding="utf-8")


def _parse_list(text: str, kind):
    return tuple(kind(part) for part in text.split(",") if part != "")


def _parse_span(text: str) -> tuple[int, int]:
    """Parse ``"3"`` or ``"2-8"`` into an inclusive integer span."""
    if "-" in text:
        lo, hi = text.split("-", 1)
        return int(lo), int(hi)
    v = int(text)
    return v, v


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int, help="base seed (64-bit)")
    parser.add_argument("--out-dir", type=Path, default=Path("out"))
    parser.add_argument("--format", choices=("csv", "json", "both"), default="both")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads; 0 = auto; results do not depend on this "
        "(SKETCHCV_THREADS is the fallback)",
    )


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SKETCHCV_THREADS", "")
    return int(env) if env else 0


def _load_config(args) -> bench.ExperimentConfig:
    """Config file first, then flag overrides."""
    values = {}
    if args.config is not None:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        valid = set(bench.ExperimentConfig.__dataclass_fields__)
        unknown = set(raw) - valid
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, val in raw.items():
            values[key] = tuple(val) if isinstance(val, list) else val
    overrides = dict(
        d=getattr(args, "d", None),
        ratios=getattr(args, "ratios", None),
        angles=getattr(args, "angles", None),
        k_values=getattr(args, "k_values", None),
        trials=getattr(args, "trials", None),
        base_seed=args.seed,
        scheme=getattr(args, "scheme", None),
        methods=getattr(args, "methods", None),
    )
    values.update({k: v for k, v in overrides.items() if v is not None})
    return bench.ExperimentConfig(**values)


def cmd_inner_product(args) -> int:
    config = _load_config(args)
    threads = _resolve_threads(args)
    results = bench.run_inner_product(
        config, threads=threads, progress=lambda line: print(line, file=sys.stderr)
    )
    records = [
        {
            "scheme": s.scheme, "method": s.method, "k": s.k, "r": s.r, "theta": s.theta,
            "mse": s.mse, "mean": s.mean, "median": s.median, "q1": s.q1, "q3": s.q3,
            "outlier_fraction": s.outlier_fraction, "mean_iterations": s.mean_iterations,
            "nonconverged_fraction": s.nonconverged_fraction,
            "three_root_fraction": s.three_root_fraction,
        }
        for s in results
    ]
    _write_records(records, INNER_PRODUCT_COLUMNS, args.out_dir, "inner_product", args.format)
    return EXIT_OK


def cmd_trace(args) -> int:
    m = tr.load_matrix(args.matrix)
    if args.b_diag is not None:
        diag = np.asarray(args.b_diag, dtype=float)
        if diag.shape != (m.shape[0],):
            raise ValueError("--b-diag length must match the matrix dimension")
        b = np.diag(diag)
    else:
        b = np.eye(m.shape[0])
    config = bench.TraceConfig(
        methods=args.methods if args.methods is not None else tr.TRACE_METHODS,
        k=args.k,
        trials=args.trials,
        kind=args.probe_kind,
        base_seed=args.seed if args.seed is not None else 42,
    )
    summaries = bench.run_trace(m, b, config, threads=_resolve_threads(args))
    records = [
        {
            "method": s.method, "kind": s.kind, "k": s.k, "trials": s.trials,
            "true_trace": s.true_trace, "mean": s.mean, "variance": s.variance,
            "mse": s.mse, "rejected_fraction": s.rejected_fraction,
        }
        for s in summaries
    ]
    _write_records(records, TRACE_COLUMNS, args.out_dir, "trace", args.format)
    return EXIT_OK


def cmd_equivalence(args) -> int:
    p_lo, p_hi = _parse_span(args.p)
    t_lo, t_hi = _parse_span(args.t) if args.t is not None else (1, max(p_hi - 1, 1))
    if t_lo < 1 or t_lo >= p_hi:
        print(f"error: t must satisfy 1 <= t < p (got t={t_lo}, p={p_hi})", file=sys.stderr)
        return EXIT_USAGE
    if args.sigma is not None and len(args.sigma) != 3:
        print("error: --sigma needs exactly three values s11,s22,s12", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else 42
    rng = SeededRng(seed).generator()

    worst = 0.0
    worst_model = None
    for _ in range(args.trials):
        p = int(rng.integers(p_lo, p_hi + 1))
        lo, hi = max(t_lo, 1), min(t_hi, p - 1)
        if lo > hi:
            continue
        t = int(rng.integers(lo, hi + 1))
        g = rng.standard_normal((p, 2 * p))
        v = g @ g.T / (2 * p)
        model = efamily.CovarianceModel(v=v, t=t, n=int(rng.integers(1, 50)))
        alpha = rng.standard_normal(t)
        mle = efamily.mle_variance(model, alpha)
        cve = efamily.cve_variance(model, alpha)
        dev = abs(mle - cve) / max(abs(cve), 1e-300)
        if dev > worst:
            worst, worst_model = dev, model

    if args.sigma is not None:
        params = efamily.BivariateNormalParams(*args.sigma)
        model = efamily.sigma12_model(params, n=1)
        alpha = np.ones(1)
        cve = efamily.cve_variance(model, alpha)
        mle = efamily.mle_variance(model, alpha)
        print(f"CVE variance {_fmt(cve)}")
        print(f"MLE variance {_fmt(mle)}")
        dev = abs(mle - cve) / max(abs(cve), 1e-300)
        if dev > worst:
            worst, worst_model = dev, model

    print(f"max relative deviation {_fmt(worst)} over {args.trials} models")
    if worst > 1e-9:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        dump = args.out_dir / "equivalence_violation.txt"
        if worst_model is not None:
            with open(dump, "w", encoding="utf-8") as fh:
                fh.write(f"relative deviation {_fmt(worst)}\n")
                fh.write(f"t {worst_model.t}\nn {worst_model.n}\n")
                for row in worst_model.v:
                    fh.write(" ".join(_fmt(float(x)) for x in row) + "\n")
        print(f"identity violated; offending model dumped to {dump}", file=sys.stderr)
        return EXIT_IDENTITY
    return EXIT_OK


def cmd_convergence(args) -> int:
    records = []
    samples = []
    if args.self_test:
        # Constructed sequences with known order: quadratic halving and a
        # plain linear contraction.
        for name, seq_alpha, c in (("synthetic-quadratic", 2.0, 0.5), ("synthetic-linear", 1.0, 0.3)):
            errors = [0.4]
            for _ in range(12):
                errors.append(c * errors[-1] ** seq_alpha)
            trace = [e for e in errors]  # trace around truth 0
            fit = bench.convergence_fit([trace], 0.0, 1e-14)
            records.append(
                {
                    "method": name, "k": 0, "cells": 1, "points": fit.points_used,
                    "alpha_median": fit.alpha, "alpha_q1": fit.alpha, "alpha_q3": fit.alpha,
                    "c_median": float(np.exp(fit.log_c)), "log_c_median": fit.log_c,
                }
            )
            samples.append(
                {
                    "method": name, "k": 0, "r": 0.0, "theta": 0.0, "alpha": fit.alpha,
                    "log_c": fit.log_c, "r_squared": fit.r_squared, "points": fit.points_used,
                }
            )
    else:
        base = _load_config(args)
        config = bench.with_overrides(
            base,
            angles=base.angles if getattr(args, "angles", None) else _CONVERGENCE_ANGLES,
            k_values=(args.k,),
        )
        summaries, cell_fits = bench.run_convergence(
            config, k=args.k, threads=_resolve_threads(args)
        )
        for s in summaries:
            records.append(
                {
                    "method": s.method, "k": s.k, "cells": s.cells, "points": s.points_total,
                    "alpha_median": s.alpha_median, "alpha_q1": s.alpha_q1,
                    "alpha_q3": s.alpha_q3, "c_median": s.c_median,
                    "log_c_median": s.log_c_median,
                }
            )
        for method, r, theta, fit in cell_fits:
            samples.append(
                {
                    "method": method, "k": args.k, "r": r, "theta": theta, "alpha": fit.alpha,
                    "log_c": fit.log_c, "r_squared": fit.r_squared, "points": fit.points_used,
                }
            )
    _write_records(records, CONVERGENCE_COLUMNS, args.out_dir, "convergence", args.format)
    _write_records(
        samples, CONVERGENCE_SAMPLE_COLUMNS, args.out_dir, "convergence_samples", args.format
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchcv")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ip = sub.add_parser("inner-product", help="run the inner-product benchmark grid")
    _add_common(p_ip)
    p_ip.add_argument("--scheme", choices=("fh", "rp"))
    p_ip.add_argument("--d", type=int)
    p_ip.add_argument(
        "--k", dest="k_values", type=lambda s: _parse_list(s, int), metavar="K1,K2,..."
    )
    p_ip.add_argument("--ratios", type=lambda s: _parse_list(s, float), metavar="R1,R2,...")
    p_ip.add_argument("--angles", type=lambda s: _parse_list(s, float), metavar="A1,A2,...")
    p_ip.add_argument("--trials", type=int)
    p_ip.add_argument("--methods", type=lambda s: _parse_list(s, str), metavar="M1,M2,...")
    p_ip.set_defaults(func=cmd_inner_product)

    p_tr = sub.add_parser("trace", help="run trace estimators on a matrix file")
    _add_common(p_tr)
    p_tr.add_argument("--matrix", type=Path, required=True)
    p_tr.add_argument("--methods", type=lambda s: _parse_list(s, str), metavar="M1,M2,...")
    p_tr.add_argument("--k", type=int, default=100, help="probes per batch")
    p_tr.add_argument("--trials", type=int, default=1000)
    p_tr.add_argument("--probe-kind", choices=(tr.GAUSSIAN, tr.RADEMACHER), default=tr.GAUSSIAN)
    p_tr.add_argument("--b-diag", type=lambda s: _parse_list(s, float), metavar="B1,B2,...")
    p_tr.set_defaults(func=cmd_trace)

    p_eq = sub.add_parser("equivalence", help="check the variance-equivalence identity")
    _add_common(p_eq)
    p_eq.add_argument("--p", default="2-8", help="matrix size or inclusive range, e.g. 3 or 2-8")
    p_eq.add_argument("--t", default=None, help="partition index or range (default: random)")
    p_eq.add_argument("--trials", type=int, default=1000)
    p_eq.add_argument(
        "--sigma",
        type=lambda s: _parse_list(s, float),
        metavar="S11,S22,S12",
        help="also evaluate the bivariate-normal closed forms",
    )
    p_eq.set_defaults(func=cmd_equivalence)

    p_cv = sub.add_parser("convergence", help="fit empirical convergence orders")
    _add_common(p_cv)
    p_cv.add_argument("--k", type=int, default=100)
    p_cv.add_argument("--d", type=int)
    p_cv.add_argument("--trials", type=int)
    p_cv.add_argument("--scheme", choices=("fh", "rp"))
    p_cv.add_argument("--ratios", type=lambda s: _parse_list(s, float), metavar="R1,R2,...")
    p_cv.add_argument("--angles", type=lambda s: _parse_list(s, float), metavar="A1,A2,...")
    p_cv.add_argument("--self-test", action="store_true")
    p_cv.set_defaults(func=cmd_convergence)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, efamily.InvalidParams) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
