"""Command-line front end: ``rrmcv {design,perf,earl,tables,monitor,simulate}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

from . import __version__
from .design import DEFAULT_ARL0, DesignSpec, design_both_sides, design_limits
from .dist import ChartParams
from .errors import ArgumentError, NumericalError, ParseError, RRMCVError
from .monitor import (
    gamma_hat,
    ingest,
    plot_csv,
    read_gamma_column,
    report_json,
    run_signal,
    table10_path,
)
from .perf import (
    DECREASING,
    INCREASING,
    PERF_FIELDS,
    Direction,
    GridSpec,
    ShiftRange,
    earl,
    perf_at_shift,
    table_grid,
)
from .rulechain import RunRule, Side
from .simulate import DEFAULT_MAX_RUN_LENGTH, SimConfig, mc_moments

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_NUMERIC = 3
EXIT_EXPECTATION = 4

EPILOG = """\
exit codes:
  0  success
  2  invalid arguments or input files
  3  numerical failure (root finder or linear solve did not converge)
  4  expectation failed (monitor --expect-signal saw no signal)
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _finite(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {text!r}")
    return value


def _rule(text):
    try:
        return RunRule.parse(text)
    except ArgumentError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_chart_args(p, rule=True):
    p.add_argument("--n", type=_positive_int, required=True, help="subgroup size")
    p.add_argument("--p", dest="p_dim", type=_positive_int, required=True, help="number of variables")
    p.add_argument("--gamma0", type=_finite, required=True, help="in-control MCV")
    if rule:
        p.add_argument("--rule", type=_rule, required=True, help="run rule as r/s, e.g. 2/3")
    p.add_argument("--arl0", type=_finite, default=DEFAULT_ARL0, help="in-control ARL (default 370.4)")


def _add_format(p):
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="write to this file instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rrmcv",
        description="Run-rules control charts for the multivariate coefficient of variation.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("design", help="control limit for a target in-control ARL", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_chart_args(p)
    p.add_argument("--side", choices=("upper", "lower"), default="upper")
    p.add_argument("--both-sides", action="store_true", help="print 'LCL UCL' for the lower and upper charts")
    p.add_argument("--paper-rounding", action="store_true", help="print 3 decimals instead of 6")
    p.add_argument("--json", action="store_true", help="full-precision JSON output")

    p = sub.add_parser("perf", help="ARL and SDRL at given shifts", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_chart_args(p)
    p.add_argument("--tau", type=_finite, nargs="+", required=True, help="shift multiplier(s)")
    p.add_argument("--side", choices=("upper", "lower"),
                   help="chart side (default: lower for tau < 1, upper for tau > 1)")
    _add_format(p)

    p = sub.add_parser("earl", help="expected ARL/SDRL over a uniform shift range", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_chart_args(p)
    p.add_argument("--range", dest="range_", choices=("D", "I"), default=None,
                   help="D = [0.5, 1) on the lower chart, I = (1, 2] on the upper chart (default: both)")
    p.add_argument("--a", type=_finite, help="custom range start")
    p.add_argument("--b", type=_finite, help="custom range end")
    p.add_argument("--method", choices=("quadrature", "grid"), default="quadrature",
                   help="64-node Gauss-Legendre integral, or the mean over a 0.05-step shift grid")
    p.add_argument("--verbose", action="store_true", help="also report sqrt of the averaged variance")
    _add_format(p)

    p = sub.add_parser("tables", help="regenerate a reference table", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--table", type=int, choices=range(1, 8), required=True, metavar="N",
                   help="1 limits, 2-4 ARL/SDRL for p=2/3/4, 5 Delta_A, 6 Delta_E, 7 EARL/ESDRL")
    p.add_argument("--subset", default="", help="filter such as 'p=2,gamma0=0.1,n=5,rule=2/3'")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="worker processes (default: $RRMCV_WORKERS or 1)")
    _add_format(p)

    p = sub.add_parser("monitor", help="apply run rules to Phase II data", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--input", help="Phase II CSV (default: the bundled 20-sample example); a "
                   "recorded gamma_hat column is used as is unless --recompute is given")
    p.add_argument("--gamma-col", nargs="?", const="gamma_hat", default=None,
                   help="use a precomputed sample-MCV column (default name gamma_hat)")
    p.add_argument("--recompute", action="store_true",
                   help="recompute the sample MCV from mean/cov even where a gamma_hat column is present")
    p.add_argument("--rule", type=_rule, action="append", required=True, help="r/s; repeatable")
    p.add_argument("--limit", type=_finite, action="append", help="limit per --rule, in order")
    p.add_argument("--side", choices=("upper", "lower"), default="upper")
    p.add_argument("--n", type=_positive_int, help="design limits for this subgroup size")
    p.add_argument("--p", dest="p_dim", type=_positive_int, help="design limits for this dimension")
    p.add_argument("--gamma0", type=_finite, help="design limits for this in-control MCV")
    p.add_argument("--arl0", type=_finite, default=DEFAULT_ARL0)
    p.add_argument("--json-out", help="write the JSON report here instead of stdout")
    p.add_argument("--plot-out", help="write plot data (t,gamma_hat,limit,flagged); with several "
                   "rules the rule label is inserted before the extension")
    p.add_argument("--expect-signal", action="store_true", help="exit 4 if any rule does not signal")

    p = sub.add_parser("simulate", help="Monte Carlo run-length moments", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--rule", type=_rule, required=True)
    p.add_argument("--p-in", type=_finite, required=True, help="in-control point probability")
    p.add_argument("--reps", type=_positive_int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=_positive_int, default=DEFAULT_MAX_RUN_LENGTH,
                   help="run-length cap per replication")
    p.add_argument("--workers", type=_positive_int, default=1)
    return parser


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _records_text(records, fields, fmt):
    if fmt == "json":
        return json.dumps([{f: r.get(f, "") for f in fields} for r in records], indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for r in records:
        writer.writerow([_cell(r.get(f, "")) for f in fields])
    return buf.getvalue()


def _emit(text, path, out):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        out.write(text)


def _params(args):
    return ChartParams(args.n, args.p_dim, args.gamma0)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_design(args, out):
    params = _params(args)
    digits = 3 if args.paper_rounding else 6
    if args.both_sides:
        lower, upper = design_both_sides(params, args.rule.r, args.rule.s, args.arl0)
        if args.json:
            out.write(json.dumps({"rule": args.rule.label, "lcl": lower.limit, "ucl": upper.limit}) + "\n")
        else:
            out.write(f"{lower.limit:.{digits}f} {upper.limit:.{digits}f}\n")
        return EXIT_OK
    chart = design_limits(DesignSpec(params, args.rule, args.arl0), side=args.side)
    if args.json:
        out.write(json.dumps({
            "rule": chart.rule.label, "side": chart.side.value, "limit": chart.limit,
            "p_in": chart.p_in_star.p_in, "arl0": args.arl0,
        }) + "\n")
    else:
        out.write(f"{chart.limit:.{digits}f}\n")
    return EXIT_OK


def cmd_perf(args, out):
    params = _params(args)
    records = []
    for tau in args.tau:
        if args.side:
            side = Side(args.side)
        elif tau == 1.0:
            raise ArgumentError("--tau 1 needs an explicit --side")
        else:
            side = Side.LOWER if tau < 1 else Side.UPPER
        chart = design_limits(DesignSpec(params, RunRule(args.rule.r, args.rule.s, side), args.arl0))
        rep = perf_at_shift(chart, tau)
        records.append({
            "n": params.n, "p_dim": params.p_dim, "gamma0": params.gamma0, "rule": args.rule.label,
            "side": side.value, "tau_or_range": f"{tau:g}", "arl1": rep.arl1, "sdrl1": rep.sdrl1,
            "earl": "", "esdrl": "", "error": "",
        })
    _emit(_records_text(records, PERF_FIELDS, args.format), args.out, out)
    return EXIT_OK


def _ranges(args):
    if args.a is not None or args.b is not None:
        if args.a is None or args.b is None:
            raise ArgumentError("--a and --b must be given together")
        direction = Direction.DECREASING if args.b <= 1 else Direction.INCREASING
        return [ShiftRange(args.a, args.b, direction)]
    if args.range_ == "D":
        return [DECREASING]
    if args.range_ == "I":
        return [INCREASING]
    return [DECREASING, INCREASING]


def cmd_earl(args, out):
    params = _params(args)
    fields = PERF_FIELDS + (("esdrl_rms",) if args.verbose else ())
    records = []
    for rng in _ranges(args):
        side = rng.direction.side
        chart = design_limits(DesignSpec(params, RunRule(args.rule.r, args.rule.s, side), args.arl0))
        rep = earl(chart, rng, method=args.method)
        records.append({
            "n": params.n, "p_dim": params.p_dim, "gamma0": params.gamma0, "rule": args.rule.label,
            "side": side.value, "tau_or_range": rng.label, "arl1": "", "sdrl1": "",
            "earl": rep.earl, "esdrl": rep.esdrl, "error": "", "esdrl_rms": rep.esdrl_rms,
        })
    _emit(_records_text(records, fields, args.format), args.out, out)
    return EXIT_OK


_SUBSET_KEYS = {"n": "n_values", "p": "p_values", "p_dim": "p_values",
                "gamma0": "gamma0_values", "rule": "rules"}


def parse_subset(text: str) -> dict:
    """``'p=2,gamma0=0.1'`` -> GridSpec overrides. Repeated keys accumulate."""
    picked = {}
    for item in filter(None, (part.strip() for part in text.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in _SUBSET_KEYS:
            raise ArgumentError(
                f"--subset: expected key=value with key in {sorted(_SUBSET_KEYS)}, got {item!r}"
            )
        try:
            if key == "rule":
                rule = RunRule.parse(value.strip())
                parsed = (rule.r, rule.s)
            elif key == "gamma0":
                parsed = float(value)
            else:
                parsed = int(value)
        except ValueError:
            raise ArgumentError(f"--subset: bad value in {item!r}") from None
        picked.setdefault(_SUBSET_KEYS[key], []).append(parsed)
    return {k: tuple(v) for k, v in picked.items()}


def table_spec(number: int, subset: str = "") -> GridSpec:
    """Grid behind reference table ``number`` (1-7), optionally narrowed."""
    overrides = parse_subset(subset)
    if number == 1:
        kind = "limits"
    elif number in (2, 3, 4):
        kind = "shift"
        fixed = number
        if "p_values" in overrides and overrides["p_values"] != (fixed,):
            raise ArgumentError(f"table {number} is for p={fixed}")
        overrides["p_values"] = (fixed,)
    elif number == 5:
        kind = "delta_shift"
    elif number == 6:
        kind = "delta_range"
    elif number == 7:
        kind = "range"
    else:
        raise ArgumentError(f"--table must be 1-7, got {number}")
    return GridSpec(kind=kind, **overrides)


def cmd_tables(args, out):
    spec = table_spec(args.table, args.subset)
    rows = table_grid(spec, workers=args.workers)
    _emit(_records_text(rows, spec.fields, args.format), args.out, out)
    return EXIT_OK


def _plot_path(base, rule, several):
    if not several:
        return base
    stem, dot, ext = base.rpartition(".")
    tag = rule.label.replace("/", "of")
    return f"{stem}_{tag}.{ext}" if dot else f"{base}_{tag}"


def cmd_monitor(args, out):
    source = args.input or table10_path()
    if args.gamma_col:
        values = read_gamma_column(source, args.gamma_col)
    else:
        values = [
            sg.gamma_hat if sg.gamma_hat is not None and not args.recompute else gamma_hat(sg)
            for sg in ingest(source)
        ]

    design_args = (args.n, args.p_dim, args.gamma0)
    if args.limit is not None:
        if len(args.limit) != len(args.rule):
            raise ArgumentError("give one --limit per --rule")
        limits = args.limit
    elif all(v is not None for v in design_args):
        params = ChartParams(*design_args)
        limits = [
            design_limits(DesignSpec(params, RunRule(rule.r, rule.s, args.side), args.arl0)).limit
            for rule in args.rule
        ]
    else:
        raise ArgumentError("give --limit for each --rule, or --n, --p and --gamma0 to design them")

    reports = [
        run_signal(values, RunRule(rule.r, rule.s, args.side), limit, args.side)
        for rule, limit in zip(args.rule, limits)
    ]
    _emit(report_json(reports[0] if len(reports) == 1 else reports), args.json_out, out)
    if args.plot_out:
        for rep in reports:
            _emit(plot_csv(rep), _plot_path(args.plot_out, rep.rule, len(reports) > 1), out)
    if args.expect_signal and any(rep.signal_at is None for rep in reports):
        missing = ", ".join(rep.rule.label for rep in reports if rep.signal_at is None)
        print(f"rrmcv monitor: no signal for rule(s) {missing}", file=sys.stderr)
        return EXIT_EXPECTATION
    return EXIT_OK


def cmd_simulate(args, out):
    config = SimConfig(args.rule, args.p_in, args.reps, args.seed, args.cap)
    est = mc_moments(config, workers=args.workers)
    out.write(json.dumps({
        "rule": args.rule.label, "p_in": args.p_in, "replications": est.replications,
        "seed": est.seed, "arl": est.arl, "arl_se": est.arl_se, "sdrl": est.sdrl,
        "sdrl_se": est.sdrl_se, "overflows": est.overflows, "cap": args.cap,
    }) + "\n")
    if not est.complete:
        print(f"rrmcv simulate: {est.overflows} replication(s) passed the cap of {args.cap} points; "
              "moments are biased low (raise --cap)", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "design": cmd_design,
    "perf": cmd_perf,
    "earl": cmd_earl,
    "tables": cmd_tables,
    "monitor": cmd_monitor,
    "simulate": cmd_simulate,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ARGS
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except (ArgumentError, ParseError, OSError) as exc:
        print(f"rrmcv {args.command}: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except NumericalError as exc:
        print(f"rrmcv {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RRMCVError as exc:
        # degenerate data and other domain errors are input problems
        print(f"rrmcv {args.command}: {exc}", file=sys.stderr)
        return EXIT_ARGS


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
