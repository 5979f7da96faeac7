"""
Command-line entry point.

Exit codes: 0 success, 1 an acceptance threshold was violated, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from typing import Optional, Sequence

from ..errors import ConfigError, DomainError
from ..metrics import PowerParams, fairness_index, find_knee
from ..oracle import OracleConfig, OracleStart, run_trajectory, scan_fairness
from ..policy import Rounding, named_policy
from .catalog import TestId, build_test_config
from .configfile import load_config
from .runner import (SUMMARY_COLUMNS, SweepSpec, fmt, run_config, run_suite, run_sweep,
                     summary_row)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SCAN_MAX_GAP = 1.0
SCAN_MIN_FAIRNESS = 0.95


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str, conv=str) -> list:
    return [conv(x) for x in text.split(",") if x.strip()]


def _print_table(columns, rows, out=None):
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    label = args.label or args.config.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    report = run_config(cfg, label, args.reps, args.seed, args.out, args.force)
    _print_table(SUMMARY_COLUMNS, [summary_row(r.summary) for r in report.results])
    return EXIT_OK


def _cmd_suite(args) -> int:
    report = run_suite(_csv_list(args.ids), args.reps, args.seed, args.out, args.force)
    rows = []
    for idr in report.ids:
        rows += [summary_row(r.summary) for r in idr.results]
    _print_table(SUMMARY_COLUMNS, rows)
    for idr in report.ids:
        if idr.error:
            print(f"# {idr.test_id}: error: {idr.error}", file=sys.stderr)
        elif len(idr.results) > 1:
            for col in ("efficiency", "fairness_index", "mean_window"):
                mean, var = idr.aggregate(col)
                print(f"# {idr.test_id} {col}: mean {fmt(mean)} var {fmt(var)}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _cmd_sweep(args) -> int:
    if args.config:
        base = load_config(args.config)
        modifier, random_lengths, label = None, \
            base.length_model.kind.value != "constant", "sweep"
    else:
        tid = TestId.parse(args.base)
        base = build_test_config(tid)
        modifier, random_lengths, label = tid.modifier, tid.length_class.value == "R", str(tid)
    spec = SweepSpec(args.param, tuple(_csv_list(args.values)), base, args.reps, label,
                     args.seed, modifier, random_lengths)
    table = run_sweep(spec, args.out, args.force)
    cols = ("parameter", "value", "rep", "seed", "efficiency", "fairness_index",
            "mean_window", "window_amplitude", "verdict")
    _print_table(cols, [[r[c] if isinstance(r[c], str) else fmt(r[c]) for c in cols]
                        for r in table])
    return EXIT_OK


def _policy_from_args(args):
    overrides = {}
    for name in ("k1", "k2", "r1", "r2", "kary_k"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    overrides["rounding"] = Rounding.TRUNCATE if args.rounding == "trunc" \
        else Rounding.ROUND_HALF_UP
    return named_policy(args.policy, **overrides)


def _cmd_oracle(args) -> int:
    policy = _policy_from_args(args)
    starts = _csv_list(args.starts, int) if args.starts else [0] * args.users
    initial = _csv_list(args.initial, float) if args.initial else [1.0] * args.users
    if len(starts) != args.users or len(initial) != args.users:
        raise ConfigError("--starts and --initial need one entry per user")
    cfg = OracleConfig(args.users, args.knee, policy,
                       tuple(OracleStart(s, w) for s, w in zip(starts, initial)), args.max_steps)
    traj = run_trajectory(cfg)
    cols = ["step"] + [f"w{u}" for u in range(args.users)] + \
        [f"w_used{u}" for u in range(args.users)] + ["total", "signal"]
    rows = []
    for i, (windows, signal) in enumerate(traj.steps):
        rows.append([str(i)] + [fmt(w) for w, _ in windows] + [str(u) for _, u in windows]
                    + [str(sum(u for _, u in windows)), signal.value])
    _print_table(cols, rows)
    if traj.cycle is not None:
        print(f"# cycle starts at step {traj.cycle[0]} with period {traj.cycle[1]}")
    else:
        print("# no cycle found" + (" (diverging)" if traj.diverging else ""))
    print("# averages " + " ".join(fmt(a) for a in traj.averages))
    if any(traj.averages):
        print(f"# fairness {fmt(fairness_index(traj.averages))}")
    return EXIT_OK


def _cmd_scan(args) -> int:
    policy = _policy_from_args(args)
    lo, hi = args.knee_min, args.knee_max
    count = int(math.floor((hi - lo) / args.knee_step)) + 1
    knees = [lo + i * args.knee_step for i in range(count)]
    grid = [(a, b) for a in range(1, args.max_start + 1) for b in range(1, args.max_start + 1)]
    rep = scan_fairness(knees, grid, policy, args.max_steps, SCAN_MIN_FAIRNESS)
    print(f"runs {rep.runs}")
    print(f"without_cycle {rep.without_cycle}")
    print(f"worst_fairness {fmt(rep.worst_fairness)} at knee {fmt(rep.worst_instance[0])} "
          f"start {rep.worst_instance[1]}")
    print(f"max_average_gap {fmt(rep.max_average_gap)}")
    print(f"unfair_instances {len(rep.unfair_instances)}")
    ok = rep.worst_fairness >= SCAN_MIN_FAIRNESS and rep.max_average_gap <= SCAN_MAX_GAP
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_knee(args) -> int:
    cfg = load_config(args.config)
    est = find_knee(cfg, PowerParams(args.alpha), range(1, args.wmax + 1), args.packets)
    _print_table(("window", "throughput", "response_time", "power"),
                 [[str(p.window), fmt(p.throughput), fmt(p.response_time), fmt(p.power)]
                  for p in est.sweep])
    print(f"# knee {est.w_knee_total}")
    return EXIT_OK


def _oracle_args(p):
    p.add_argument("--policy", choices=["aiad", "aimd", "miad", "mimd", "kary"], default="aimd")
    p.add_argument("--rounding", choices=["round", "trunc"], default="round")
    for name in ("k1", "k2", "r1", "r2"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--kary-k", dest="kary_k", type=float)
    p.add_argument("--max-steps", type=int, default=2000)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cavoid", description="Binary-feedback congestion avoidance simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def outputs(p):
        p.add_argument("--out", help="directory for run CSVs and summary.csv")
        p.add_argument("--force", action="store_true", help="overwrite existing files")
        p.add_argument("--reps", type=int, default=1)

    p = sub.add_parser("run", help="simulate a configuration file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="base seed (default: the file's seed)")
    p.add_argument("--label")
    outputs(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("suite", help="run catalog tests, e.g. MD1,MDn4,ND9")
    p.add_argument("--ids", required=True)
    p.add_argument("--seed", type=int, default=0)
    outputs(p)
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("sweep", help="vary one parameter")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--base", default="MD1", help="catalog id of the base configuration")
    group.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    outputs(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("oracle", help="perfect-feedback trajectory")
    _oracle_args(p)
    p.add_argument("--knee", type=float, required=True)
    p.add_argument("--users", type=int, default=2)
    p.add_argument("--starts", help="start step per user, comma separated")
    p.add_argument("--initial", help="initial window per user, comma separated")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("scan", help="exhaustive two-user fairness scan")
    _oracle_args(p)
    p.add_argument("--knee-min", type=float, default=3.5)
    p.add_argument("--knee-max", type=float, default=31.5)
    p.add_argument("--knee-step", type=float, default=1.0)
    p.add_argument("--max-start", type=int, default=32)
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("knee", help="locate the knee of a configured path")
    p.add_argument("--config", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--wmax", type=int, default=20)
    p.add_argument("--packets", type=int, default=400)
    p.set_defaults(func=_cmd_knee)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, FileExistsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
