"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 divergence during simulation,
3 initialization failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .case import CaseError, build_case, case_to_dict, load_case, parse_case
from .control import UnstabilizableError, is_stabilizing, spectral_radius
from .harness import (
    LEVELS,
    MODES,
    Summary,
    baseline_policy,
    format_table,
    read_objectives,
    run_experiment,
    run_summary,
    run_testing,
    run_training,
    scenario_suite,
    write_summary,
)
from .network import InfeasibleCaseError, KronReductionError
from .optimizer import InitializationError, find_initial_policy
from .policy import load_gain, save_gain
from .simulate import DivergenceError

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_INIT = 0, 1, 2, 3

# hyperparameters settable from a --config file or a flag, with their case-file section
HYPERPARAMETERS = {
    "r": "training", "eta": "training", "M": "training", "N": "training", "penalty": "training",
    "window": "training", "antithetic": "training", "c": "risk", "Lambda": "risk",
}


class UsageError(ValueError):
    pass


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hyperparameters (override the case file and --config)")
    g.add_argument("--r", type=float, help="smoothing radius")
    g.add_argument("--eta", type=float, help="step size")
    g.add_argument("--M", type=int, help="outer iterations")
    g.add_argument("--N", type=int, help="perturbation samples per iteration")
    g.add_argument("--penalty", type=float, help="value assigned to non-stabilizing gains")
    g.add_argument("--window", type=float, help="evaluation window in seconds")
    g.add_argument("--antithetic", action=argparse.BooleanOptionalAction, default=None,
                   help="two-point (antithetic) gradient estimates")
    g.add_argument("--c", type=float, help="risk tolerance")
    g.add_argument("--Lambda", type=float, help="multiplier bound")


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfmrisk", description=__doc__.splitlines()[0])
    p.add_argument("--case", default="two_area", help="case file path or shipped case name (toy3, two_area)")
    p.add_argument("--seed", type=int, default=0, help="base seed; training and testing seeds derive from it")
    p.add_argument("--out-dir", default="runs", help="directory for policies, traces and reports")
    p.add_argument("--config", help="JSON file of hyperparameter overrides")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", help="check a case file and report its operating point")

    t = sub.add_parser("train", help="train structured policies")
    t.add_argument("--mode", choices=[*MODES, "both"], default="both")
    _add_hyper_flags(t)

    s = sub.add_parser("test", help="test trained policies and the baseline on load-step scenarios")
    s.add_argument("--level", choices=[*LEVELS, "both"], default="both")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--policy-dir", help="directory holding policy_gfm.json and policy_gfm-risk.json "
                                        "(defaults to --out-dir)")

    sub.add_parser("summarize", help="print the statistics table of the objective files in --out-dir")

    d = sub.add_parser("demo", help="train both modes and test all policies")
    d.add_argument("--level", choices=[*LEVELS, "both"], default="both")
    d.add_argument("--count", type=int, default=100)
    _add_hyper_flags(d)
    return p


def collect_overrides(args) -> dict:
    over = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(HYPERPARAMETERS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        over.update(doc)
    for name in HYPERPARAMETERS:
        val = getattr(args, name, None)
        if val is not None:
            over[name] = val
    return over


def load_with_overrides(case_ref, over: dict):
    case = load_case(case_ref)
    if not over:
        return build_case(case)
    doc = case_to_dict(case)
    for name, val in over.items():
        doc[HYPERPARAMETERS[name]][name] = val
    updated = parse_case(doc, f"{case_ref} (with overrides)")
    updated._source_dir = case._source_dir
    return build_case(updated)


def _levels(choice: str):
    return tuple(LEVELS) if choice == "both" else (choice,)


def cmd_validate(cm, args) -> int:
    system = cm.system
    L = system.layout
    op = system.operating_point
    dyn = system.discrete
    print(f"case {cm.case.name}: {L.n_sg} SG, {L.n_gfm} GFM, {L.n_state} states, {L.n_input} inputs")
    print(f"equilibrium residual {op.residual:.3e}, slack adjustment {op.slack_adjustment:.6g} pu")
    print(f"open-loop spectral radius {spectral_radius(dyn.A):.6f}")
    print(f"communication links {len(cm.mask.edges)}, free gain entries {cm.mask.nnz}")
    K0 = find_initial_policy(dyn, cm.mask)
    print(f"initial policy spectral radius {is_stabilizing(K0, dyn).rho:.6f}")
    return EXIT_OK


def cmd_train(cm, args) -> int:
    modes = MODES if args.mode == "both" else (args.mode,)
    for mode in modes:
        _, trace = run_training(cm, mode, seed=args.seed, out_dir=args.out_dir)
        obj = trace.column("objective")
        print(f"{mode}: objective {obj[0]:.6g} -> {trace.final_objective:.6g}, "
              f"final slack {trace.final_slack:.6g}, spectral radius {trace.final_rho:.6f}")
    return EXIT_OK


def _print_reports(reports_by_level) -> None:
    rows = []
    for level, reps in reports_by_level.items():
        for name, rep in reps.items():
            rows.append({"level": level, "policy": name, **rep.summary.to_dict()})
    print(format_table(rows))


def _any_diverged(reports_by_level) -> bool:
    return any(rep.diverged.any() for reps in reports_by_level.values() for rep in reps.values())


def cmd_test(cm, args) -> int:
    pdir = Path(args.policy_dir or args.out_dir)
    policies = {"baseline": baseline_policy(cm)}
    for mode in MODES:
        path = pdir / f"policy_{mode}.json"
        if not path.exists():
            raise UsageError(f"missing {path}; run 'train' first")
        policies[mode] = load_gain(path)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_gain(policies["baseline"], out / "policy_baseline.json")
    reports = {}
    for level in _levels(args.level):
        reports[level] = run_testing(cm, policies, scenario_suite(cm, level, args.count, args.seed), out)
    write_summary(out / "summary.json", run_summary(cm, cm.training, args.seed, {}, reports))
    _print_reports(reports)
    return EXIT_DIVERGED if _any_diverged(reports) else EXIT_OK


def cmd_summarize(cm, args) -> int:
    files = sorted(Path(args.out_dir).glob("objectives_*.csv"))
    if not files:
        raise UsageError(f"no objectives_*.csv files in {args.out_dir}")
    rows = []
    for f in files:
        level, cols = read_objectives(f)
        for name, vals in cols.items():
            rows.append({"level": level, "policy": name, **Summary.of(vals).to_dict()})
    print(format_table(rows))
    return EXIT_OK


def cmd_demo(cm, args) -> int:
    res = run_experiment(cm, seed=args.seed, levels=_levels(args.level), count=args.count, out_dir=args.out_dir)
    for mode, tr in res.traces.items():
        print(f"{mode}: objective {tr.records[0].objective:.6g} -> {tr.final_objective:.6g}, "
              f"final slack {tr.final_slack:.6g}")
    _print_reports(res.reports)
    return EXIT_DIVERGED if _any_diverged(res.reports) else EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "train": cmd_train,
    "test": cmd_test,
    "summarize": cmd_summarize,
    "demo": cmd_demo,
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cm = None if args.command == "summarize" else load_with_overrides(args.case, collect_overrides(args))
        return COMMANDS[args.command](cm, args)
    except (CaseError, UsageError, KronReductionError, InfeasibleCaseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InitializationError, UnstabilizableError) as exc:
        print(f"initialization failed: {exc}", file=sys.stderr)
        return EXIT_INIT


if __name__ == "__main__":
    sys.exit(main())
