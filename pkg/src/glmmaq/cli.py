"""Command-line interface.

One executable with six subcommands: ``fit``, ``recommend-k``,
``simulate``, ``rate-check``, ``gq-demo`` and ``rule``. Results go to
standard output as JSON (tables as CSV for the rule/lab subcommands);
``--pretty`` switches standard output to a human-readable rendering,
and ``--out`` always receives the machine form. Errors are printed as
single-line JSON on the error stream; exit codes are 0 on success, 1
for usage problems, 2 for runtime or model errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .data import CsvSchema, GroupedDataset, read_csv, summary
from .families import ModelSpec, RaneffFamily, ResponseFamily
from .fit import FitResult, fit, wald_ci
from .kadvisor import recommend_k
from .marglik import total_loglik
from .quadrature import rule_for
from .theorylab import SimStudyConfig, gq_divergence_demo, rate_check, simulate_study

DEFAULT_THREADS_ENV = "GLMMAQ_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); we want exit(1)
        raise UsageError(message)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _emit(payload: dict, args, pretty_text: str | None = None) -> None:
    text = json.dumps(payload, default=_json_default, indent=2, allow_nan=True)
    if args.out:
        with open(args.out, "w") as handle:
            handle.write(text + "\n")
    if args.pretty and pretty_text is not None:
        sys.stdout.write(pretty_text + "\n")
    elif not args.out:
        sys.stdout.write(text + "\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write the JSON/CSV result to this path")
    p.add_argument("--pretty", action="store_true",
                   help="print a human-readable table instead of JSON")
    p.add_argument("--seed", type=int, default=0, help="random seed where applicable")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get(DEFAULT_THREADS_ENV, "1")),
                   help="worker-thread cap (vectorized paths ignore this)")
    p.add_argument("-v", "--verbose", action="store_true", help="chatty progress on stderr")


def build_parser() -> _Parser:
    parser = _Parser(prog="glmmaq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_rule = sub.add_parser("rule", help="print quadrature nodes and weights as CSV")
    p_rule.add_argument("--k", type=int, required=True, help="points per coordinate")
    p_rule.add_argument("--dim", type=int, default=1, help="dimension (product rule)")
    _add_common(p_rule)

    p_rec = sub.add_parser("recommend-k", help="recommended quadrature point count")
    p_rec.add_argument("--groups", type=int, required=True, help="number of groups M")
    p_rec.add_argument("--min-group-size", type=int, required=True,
                       help="smallest group size m")
    _add_common(p_rec)

    p_fit = sub.add_parser("fit", help="fit a mixed model to a CSV dataset")
    p_fit.add_argument("--data", required=True, help="input CSV path")
    p_fit.add_argument("--family", required=True,
                       choices=[f.value for f in ResponseFamily])
    p_fit.add_argument("--raneff", required=True,
                       choices=[f.value for f in RaneffFamily])
    p_fit.add_argument("--k", required=True,
                       help="points per coordinate, or 'auto' for the recommendation")
    p_fit.add_argument("--method", choices=["aq", "gq"], default="aq")
    p_fit.add_argument("--group-col", default="group")
    p_fit.add_argument("--response-cols", default=None,
                       help="comma list; defaults to 'y' (or 'time,status' for survival)")
    p_fit.add_argument("--fixed-cols", default="intercept",
                       help="comma list; 'intercept' synthesizes a constant column")
    p_fit.add_argument("--raneff-cols", default="intercept", help="comma list")
    p_fit.add_argument("--level", type=float, default=0.95, help="Wald interval level")
    _add_common(p_fit)

    p_rate = sub.add_parser("rate-check", help="estimate the adapted-quadrature error rate")
    p_rate.add_argument("--k", type=int, required=True)
    p_rate.add_argument("--m-grid", default="10,30,100,300,1000,3000",
                        help="comma list of group sizes")
    p_rate.add_argument("--replicates", type=int, default=200)
    p_rate.add_argument("--sigma", type=float, default=1.0, help="random-intercept SD")
    p_rate.add_argument("--beta", type=float, default=0.0, help="intercept coefficient")
    _add_common(p_rate)

    p_demo = sub.add_parser("gq-demo", help="unadapted vs adapted relative error by group size")
    p_demo.add_argument("--k", type=int, required=True)
    p_demo.add_argument("--m-grid", default="1,30,300,3000")
    p_demo.add_argument("--replicates", type=int, default=200)
    p_demo.add_argument("--sigma", type=float, default=1.0)
    p_demo.add_argument("--beta", type=float, default=0.0)
    _add_common(p_demo)

    p_sim = sub.add_parser("simulate", help="coverage/timing study on the binary panel design")
    p_sim.add_argument("--groups", type=int, required=True, help="number of groups M")
    p_sim.add_argument("--group-size", type=int, required=True, help="observations per group m")
    p_sim.add_argument("--sigma", type=float, default=1.0)
    p_sim.add_argument("--beta", default="-1,1,0.5,-0.5",
                       help="comma list of the four panel coefficients")
    p_sim.add_argument("--replicates", type=int, default=50)
    p_sim.add_argument("--k-grid", default=None,
                       help="comma list of k values; default 1,k(M,m),k(M,m)+2")
    _add_common(p_sim)

    return parser


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n")
    return buf.getvalue().rstrip("\n")


def _cmd_rule(args) -> None:
    rule = rule_for(args.k, args.dim)
    header = [f"z{i}" for i in range(rule.dim)] + ["kernel_weight"]
    rows = [
        [float(rule.points[j, i]) for i in range(rule.dim)] + [float(rule.kernel_weights[j])]
        for j in range(rule.n_nodes)
    ]
    text = _csv_text(header, rows)
    if args.out:
        with open(args.out, "w") as handle:
            handle.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _cmd_recommend_k(args) -> None:
    rec = recommend_k(args.groups, args.min_group_size)
    if rec.unbounded:
        advice = (
            "groups of a single observation admit no finite recommendation: "
            "adding quadrature points is not guaranteed to drive the "
            "approximation error to zero"
        )
    elif rec.avoid_laplace:
        advice = f"use at least k = {rec.k}; a one-point (Laplace) fit is not recommended"
    else:
        advice = "k = 1 suffices: a one-point (Laplace) fit is acceptable here"
    payload = {
        "M": rec.M,
        "m": rec.m,
        "k": "unbounded" if rec.unbounded else rec.k,
        "rate_r": rec.rate_r,
        "eps_star": rec.eps_star,
        "avoid_laplace": rec.avoid_laplace,
        "advice": advice,
    }
    pretty = (
        f"M = {rec.M}, smallest group m = {rec.m}\n"
        f"recommended k: {'unbounded' if rec.unbounded else rec.k}\n"
        f"error exponent r(k): {rec.rate_r}, per-group error scale: {rec.eps_star}\n"
        f"{advice}"
    )
    _emit(payload, args, pretty)


def _resolve_schema(args, survival: bool) -> CsvSchema:
    if args.response_cols:
        response = tuple(c.strip() for c in args.response_cols.split(",") if c.strip())
    else:
        response = ("time", "status") if survival else ("y",)
    fixed = tuple(c.strip() for c in args.fixed_cols.split(",") if c.strip())
    raneff = tuple(c.strip() for c in args.raneff_cols.split(",") if c.strip())
    return CsvSchema(
        group_col=args.group_col,
        response_cols=response,
        fixed_cols=fixed,
        raneff_cols=raneff,
    )


def _fit_payload(result: FitResult, dataset: GroupedDataset, level: float, k_source: str) -> dict:
    intervals = None
    if result.std_errors is not None:
        intervals = wald_ci(result, level)
    return {
        "estimates": result.estimates(),
        "std_errors": None if result.std_errors is None else result.std_errors.tolist(),
        "reporting_scale": {
            "names": result.param_names,
            "log_scale": result.positive_mask.tolist(),
            "estimates": result.reporting_estimates.tolist(),
        },
        "vcov": None if result.vcov is None else result.vcov.tolist(),
        "wald_intervals": intervals,
        "loglik": result.loglik,
        "k": result.k,
        "k_source": k_source,
        "method": result.method,
        "n_loglik_evals": result.n_loglik_evals,
        "converged": result.converged,
        "wall_time": result.wall_time,
        "diagnostics": result.diagnostics,
        "data": summary(dataset) | {"group_sizes": None},
    }


def _cmd_fit(args) -> None:
    family = ResponseFamily(args.family)
    raneff = RaneffFamily(args.raneff)
    schema = _resolve_schema(args, family is ResponseFamily.WEIBULL_PH)
    dataset = read_csv(args.data, schema)
    spec = ModelSpec(family, raneff, d=len(schema.fixed_cols), p=len(schema.raneff_cols))
    if args.k == "auto":
        info = summary(dataset)
        rec = recommend_k(info["M"], info["m_min"])
        if rec.unbounded:
            raise ValueError(
                "the recommendation is unbounded for singleton groups; pass --k explicitly"
            )
        k = int(rec.k)
        k_source = f"auto (M={info['M']}, m={info['m_min']})"
        if args.method == "gq":
            sys.stderr.write(
                "warning: the point-count recommendation is derived for the adapted "
                "method; using it with --method gq is not supported by the error "
                "analysis\n"
            )
    else:
        try:
            k = int(args.k)
        except ValueError:
            raise UsageError(f"--k must be an integer or 'auto', got {args.k!r}") from None
        k_source = "explicit"
    result = fit(dataset, spec, k, method=args.method)
    payload = _fit_payload(result, dataset, args.level, k_source)
    lines = [f"fit: {args.family} + {args.raneff}, method {result.method}, k={result.k}"]
    est = result.estimates()
    if payload["wald_intervals"]:
        for row in payload["wald_intervals"]:
            lines.append(
                f"  {row['name']:>12s} = {row['estimate']:.6g}  "
                f"[{row['lower']:.6g}, {row['upper']:.6g}]"
            )
    else:
        for name, value in est.items():
            lines.append(f"  {name:>12s} = {value:.6g}  [no standard errors]")
    lines.append(
        f"loglik {result.loglik:.6f}, {result.n_loglik_evals} evaluations, "
        f"converged: {result.converged}"
    )
    _emit(payload, args, "\n".join(lines))


def _theorylab_spec_params(args):
    from .families import Parameters

    spec = ModelSpec(ResponseFamily.BERNOULLI_LOGIT, RaneffFamily.GAUSSIAN, d=1, p=1)
    params = Parameters(np.array([args.beta]), {"re_var": args.sigma**2})
    return spec, params


def _cmd_rate_check(args) -> None:
    spec, params = _theorylab_spec_params(args)
    m_grid = [int(v) for v in args.m_grid.split(",")]
    report = rate_check(spec, params, args.k, m_grid, args.replicates, args.seed)
    payload = dataclasses.asdict(report)
    rows = [[m, e] for m, e in zip(report.m_grid, report.errors)]
    pretty = _csv_text(["m", "median_abs_error"], rows) + (
        f"\nslope: {report.slope} (expected {report.expected_slope}), status: {report.status}"
    )
    _emit(payload, args, pretty)


def _cmd_gq_demo(args) -> None:
    spec, params = _theorylab_spec_params(args)
    m_grid = [int(v) for v in args.m_grid.split(",")]
    report = gq_divergence_demo(spec, params, args.k, m_grid, args.replicates, args.seed)
    payload = dataclasses.asdict(report)
    rows = [
        [r.m, r.gq_median_relerr, r.gq_frac_below_half, r.aq_median_relerr, r.aq_frac_below_half]
        for r in report.rows
    ]
    pretty = _csv_text(
        ["m", "gq_median_relerr", "gq_frac_below_half", "aq_median_relerr", "aq_frac_below_half"],
        rows,
    )
    _emit(payload, args, pretty)


def _cmd_simulate(args) -> None:
    beta = tuple(float(v) for v in args.beta.split(","))
    if len(beta) != 4:
        raise UsageError("--beta needs exactly four comma-separated values")
    if args.k_grid:
        k_grid = tuple(int(v) for v in args.k_grid.split(","))
    else:
        rec = recommend_k(args.groups, args.group_size)
        if rec.unbounded:
            raise ValueError("k grid has no default for singleton groups; pass --k-grid")
        k_grid = tuple(sorted({1, int(rec.k), int(rec.k) + 2}))
    config = SimStudyConfig(
        M=args.groups, m=args.group_size, sigma_true=args.sigma, beta_true=beta,
        replicates=args.replicates, k_grid=k_grid, seed=args.seed,
    )
    report = simulate_study(config)
    payload = dataclasses.asdict(report)
    header = ["k", "beta0_err_q2.5", "beta0_err_q50", "beta0_err_q97.5",
              "sigma_err_q2.5", "sigma_err_q50", "sigma_err_q97.5",
              "coverage_beta0", "mean_time", "sd_time", "mean_evals", "failures"]
    rows = []
    for s in report.per_k:
        rows.append([s.k, *s.beta0_error_quantiles, *s.sigma_error_quantiles,
                     s.coverage_beta0, s.mean_wall_time, s.sd_wall_time,
                     s.mean_loglik_evals, s.n_failures])
    _emit(payload, args, _csv_text(header, rows))


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 1
    try:
        if args.command == "rule":
            _cmd_rule(args)
        elif args.command == "recommend-k":
            _cmd_recommend_k(args)
        elif args.command == "fit":
            _cmd_fit(args)
        elif args.command == "rate-check":
            _cmd_rate_check(args)
        elif args.command == "gq-demo":
            _cmd_gq_demo(args)
        elif args.command == "simulate":
            _cmd_simulate(args)
        else:  # pragma: no cover - argparse enforces the choices
            raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 1
    except Exception as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
