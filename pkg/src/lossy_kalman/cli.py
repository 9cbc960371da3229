"""Command-line front end.

::

    lossy-kalman validate --input sys.json
    lossy-kalman analyze  --input sys.json [--output report.json]
    lossy-kalman simulate --input sys.json --p 0.9 [--output summary.csv]
    lossy-kalman sweep    --input sys.json [--resolution 0.05] [--output sweep.csv]

Exit codes: 0 success, 2 usage error or unknown verb, 3 input file not
found, 4 malformed system file, 5 system violates an assumption, 6 numeric
failure, 7 invalid flag value.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path

from . import harness
from .critical import RATIONAL, AngleHintError, critical_value
from .harness import DEFAULT_SEED, SweepError, TrialConfig
from .spectral import diagonalize, equi_blocks
from .system import (
    AssumptionError,
    NumericError,
    SystemSpecError,
    load_system,
    system_to_json,
    validate,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_STRUCTURE = 4
EXIT_ASSUMPTION = 5
EXIT_NUMERIC = 6
EXIT_OVERRIDE = 7

VERBS = ("analyze", "simulate", "sweep", "validate")


class OverrideError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lossy-kalman",
        description="Critical arrival probability of Kalman filtering over lossy links.",
    )
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--input", required=True, help="system file (JSON)")
    ap.add_argument("--output", help="report / CSV destination (default: stdout)")
    # values are checked by hand so that bad values get their own exit code
    ap.add_argument("--p", help="arrival probability (simulate)")
    ap.add_argument("--horizon", default="300", help="steps per trial [300]")
    ap.add_argument("--trials", default="500", help="Monte Carlo trials [500]")
    ap.add_argument("--seed", default=str(DEFAULT_SEED), help=f"base seed [{DEFAULT_SEED}]")
    ap.add_argument("--resolution", default="0.05", help="sweep bracket width [0.05]")
    ap.add_argument("--moment-order", default="1", help="moment q of trace(P) [1]")
    ap.add_argument("--max-denominator", default="64",
                    help="largest denominator tried when classifying angles [64]")
    ap.add_argument("--jobs", default=None, help="worker processes [available cores]")
    return ap


def _num(value, name, kind, lo=None, hi=None):
    try:
        v = kind(value)
    except (TypeError, ValueError):
        raise OverrideError(f"--{name}: expected {kind.__name__}, got {value!r}") from None
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise OverrideError(f"--{name}: {v} outside [{lo}, {hi}]")
    return v


def _trial_config(args, p: float) -> TrialConfig:
    try:
        return TrialConfig(
            p=p,
            horizon=_num(args.horizon, "horizon", int, 10),
            trials=_num(args.trials, "trials", int, 1),
            base_seed=_num(args.seed, "seed", int, 0, 2 ** 64 - 1),
            moment_order=_num(args.moment_order, "moment-order", int, 1),
        )
    except ValueError as exc:
        if isinstance(exc, OverrideError):
            raise
        raise OverrideError(str(exc)) from None


def _jobs(args) -> int:
    if args.jobs is None:
        return harness.default_jobs()
    return _num(args.jobs, "jobs", int, 1)


def _emit(text: str, output) -> None:
    if output:
        Path(output).write_text(text)
    else:
        _sys.stdout.write(text)


def _spectral_json(sys, max_denominator):
    sf = diagonalize(sys)
    rep = equi_blocks(sf)
    return {
        "eigenvalues": [[z.real, z.imag] for z in sf.eigenvalues],
        "equi_blocks": [
            {
                "indices": list(b.indices),
                "magnitude": b.magnitude,
                "rank": b.rank,
                "degenerate": b.degenerate,
                "stability_class": b.stability_class,
            }
            for b in rep.blocks
        ],
        "max_equiblock_dim": rep.max_equiblock_dim,
        "degenerate": rep.system_degenerate,
        "unstable_part_degenerate": rep.unstable_part_degenerate,
        "near_ties": [list(t) for t in rep.near_ties],
    }


def cmd_validate(args) -> int:
    sys = load_system(args.input)
    report = validate(sys)
    _emit(json.dumps(report.to_json(), indent=2) + "\n", args.output)
    for msg in report.messages:
        print(f"lossy-kalman: {msg}", file=_sys.stderr)
    return EXIT_OK if report.admissible else EXIT_ASSUMPTION


def cmd_analyze(args) -> int:
    max_den = _num(args.max_denominator, "max-denominator", int, 1)
    sys = load_system(args.input)
    report = validate(sys)
    doc = system_to_json(sys)
    results = {"validation": report.to_json()}
    doc["results"] = results
    if not report.admissible:
        _emit(json.dumps(doc, indent=2) + "\n", args.output)
        raise AssumptionError("; ".join(report.messages), report)
    results["spectral"] = _spectral_json(sys, max_den)
    cv = critical_value(sys, max_denominator=max_den)
    results["critical_value"] = cv.to_json()
    if cv.angle is not None and cv.angle.kind == RATIONAL:
        results["dirichlet_argument"] = f"{cv.angle.numerator}/{cv.angle.denominator}"
        results["dirichlet_value"] = 1.0 / cv.angle.denominator
    _emit(json.dumps(doc, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.p is None:
        raise OverrideError("simulate requires --p")
    p = _num(args.p, "p", float, 0.0, 1.0)
    cfg = _trial_config(args, p)
    jobs = _jobs(args)
    sys = load_system(args.input)
    summary = harness.estimate(sys, cfg, jobs)
    _emit(summary.to_csv(), args.output)
    print(
        f"verdict={summary.verdict} diverged_fraction={summary.diverged_fraction:.6g} "
        f"log_slope={summary.log_slope:.6g} growth_rate={summary.growth_rate:.6g}",
        file=_sys.stderr,
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    resolution = _num(args.resolution, "resolution", float, 0.005, 1.0)
    max_den = _num(args.max_denominator, "max-denominator", int, 1)
    cfg = _trial_config(args, 0.5)
    jobs = _jobs(args)
    sys = load_system(args.input)
    analytic = critical_value(sys, max_denominator=max_den)
    res = harness.empirical_pc(sys, resolution, cfg, jobs, analytic=analytic)
    _emit(res.to_csv(), args.output)
    lo, hi = res.bracket
    print(f"estimated_pc={res.estimated_pc:.6g} bracket=[{lo:.6g}, {hi:.6g}] "
          f"resolved={res.resolved}", file=_sys.stderr)
    for note in res.anomalies:
        print(f"lossy-kalman: {note}", file=_sys.stderr)
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    def fail(code, msg):
        print(f"lossy-kalman: error: {msg}", file=_sys.stderr)
        return code

    try:
        return COMMANDS[args.verb](args)
    except OverrideError as exc:
        return fail(EXIT_OVERRIDE, exc)
    except FileNotFoundError as exc:
        return fail(EXIT_MISSING, f"{exc.filename}: no such file")
    except AngleHintError as exc:
        return fail(EXIT_STRUCTURE, exc)
    except AssumptionError as exc:
        return fail(EXIT_ASSUMPTION, exc)
    except SystemSpecError as exc:
        return fail(EXIT_STRUCTURE, exc)
    except (NumericError, ArithmeticError, SweepError) as exc:
        return fail(EXIT_NUMERIC, exc)


def main(argv=None) -> None:
    _sys.exit(run(argv))


if __name__ == "__main__":
    main()
