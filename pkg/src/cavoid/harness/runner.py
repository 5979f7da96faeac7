"""
Run orchestration: per-run CSV tables, summaries, suites and sweeps.

Every summary value is computed from the run table exactly as written to
disk (9 significant digits), so re-reading a run CSV reproduces its summary
row.  The measurement window runs from the moment the last user finished
its warmup to the first moment any user ran out of packets; the window
bounds are part of the summary so the computation can be repeated.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import math
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from ..engine import RunRecord, run_simulation
from ..errors import ConfigError, DomainError
from ..metrics import KneeEstimate, find_knee, fairness_index, time_weighted_stats
from ..sim import LengthKind, PacketLengthModel, SimConfig
from .catalog import LengthClass, Modifier, TestId, build_test_config, pipe_size

RUN_COLUMNS = ("time", "user_id", "w_computed", "w_used", "bit",
               "queue_len_bottleneck", "delivered")
SUMMARY_COLUMNS = ("test_id", "seed", "rep", "efficiency", "fairness_variance",
                   "fairness_index", "bit_fraction", "knee_window", "mean_window",
                   "window_time_variance", "t_start", "t_end", "verdict")

EFFICIENCY_BAND = (0.8, 1.1)
MIN_FAIRNESS = 0.9
TRANSIENT_TOLERANCE = 0.25


def fmt(x) -> str:
    """Floating values are written with 9 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


# --- knee cache ---------------------------------------------------------------------

@lru_cache(maxsize=None)
def _knee_cached(path: tuple, mean_length: float, alpha: float) -> KneeEstimate:
    from ..metrics import PowerParams
    from ..sim import UserSpec
    cfg = SimConfig(path=path, users=(UserSpec(0, 1),),
                    length_model=PacketLengthModel.constant(mean_length))
    top = max(20, 3 * math.ceil(pipe_size(path)))
    return find_knee(cfg, PowerParams(alpha), range(1, top + 1))


def knee_for(config: SimConfig, alpha: float = 1.0) -> KneeEstimate:
    """Knee of ``config``'s path under constant lengths equal to the mean.

    The knee is a property of the path, so random lengths and any transient
    are ignored; results are cached per path.
    """
    return _knee_cached(tuple(config.path), float(config.ref_length), float(alpha))


def changed_path(config: SimConfig) -> tuple:
    """The path as it looks while the transient is in effect."""
    t = config.transient
    return tuple(replace(n, service_rate=t.middle_rate) if n.node_id == t.target_node else n
                 for n in config.path)


# --- run tables ---------------------------------------------------------------------

def run_rows(record: RunRecord) -> list[tuple]:
    """One row per delivered packet, in delivery order, already formatted."""
    counts = {}
    rows = []
    for p in record.packets:
        counts[p.user_id] = counts.get(p.user_id, 0) + 1
        rows.append((fmt(p.delivery_time), str(p.user_id), fmt(p.w_after_ack),
                     str(p.w_used_after_ack), str(int(p.bit)), str(p.bottleneck_queue),
                     str(counts[p.user_id])))
    return rows


def _open_new(path: str, force: bool):
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; use force to overwrite")
    return open(path, "w", newline="", encoding="utf-8")


def write_table(path: str, columns: Sequence[str], rows: Sequence[Sequence], force: bool = False):
    with _open_new(path, force) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


@dataclass(frozen=True)
class Row:
    time: float
    user_id: int
    w_computed: float
    w_used: int
    bit: int
    queue_len_bottleneck: int
    delivered: int


def parse_rows(rows: Sequence[Sequence[str]]) -> list[Row]:
    return [Row(float(r[0]), int(r[1]), float(r[2]), int(r[3]), int(r[4]), int(r[5]), int(r[6]))
            for r in rows]


def read_run_csv(path: str) -> list[Row]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RUN_COLUMNS:
            raise DomainError(f"{path}: unexpected header {header}")
        return parse_rows(list(reader))


# --- summaries ----------------------------------------------------------------------

def measurement_window(record: RunRecord) -> tuple[float, float]:
    users = record.users.values()
    t_start = max(u.warmup_end for u in users)
    t_end = min(u.last_delivery for u in users)
    if not t_end > t_start:
        raise DomainError("users never overlap after warmup; run is too short")
    return float(fmt(t_start)), float(fmt(t_end))


@dataclass
class RunMetrics:
    throughputs: dict
    efficiency: float
    fairness_variance: float
    fairness_index: float
    bit_fraction: float
    mean_window: float
    window_time_variance: float


def _total_window_samples(rows: Sequence[Row]) -> list[tuple]:
    current = {}
    samples = []
    for r in rows:
        current[r.user_id] = r.w_used
        samples.append((r.time, sum(current.values())))
    return samples


def summarize_rows(rows: Sequence[Row], user_ids: Sequence[int], t_start: float,
                   t_end: float, knee_throughput: float) -> RunMetrics:
    """Efficiency, fairness and window statistics from a run table."""
    span = t_end - t_start
    inside = [r for r in rows if t_start < r.time <= t_end]
    counts = {u: 0 for u in user_ids}
    for r in inside:
        counts[r.user_id] += 1
    thr = {u: counts[u] / span for u in user_ids}
    goal = knee_throughput / len(user_ids)
    scaled = np.array([thr[u] / goal for u in user_ids])
    fi = fairness_index(list(thr.values())) if any(thr.values()) else 0.0
    bits = [r.bit for r in inside]
    mean_w, var_w = time_weighted_stats(_total_window_samples(rows), t_start, t_end, initial=0)
    return RunMetrics(thr, float(scaled.mean()), float(scaled.var()), fi,
                      sum(bits) / len(bits) if bits else 0.0, mean_w, var_w)


def source_bound_violations(record: RunRecord) -> list:
    """Increases that took ``w`` beyond the previous implemented window plus ``k1``."""
    params = record.config.policy.params
    step = max(params.k1, params.birth.initial_k1 if params.birth else 0)
    bad = []
    for uid, adjs in record.adjustments.items():
        for a in adjs:
            if a.direction.value == "up" and a.w_after > a.w_used_before + step + 1e-9:
                bad.append((uid, a))
    return bad


def transient_check(record: RunRecord, rows: Sequence[Row]) -> tuple[bool, dict]:
    """Mean total window over the middle and final thirds against the two knees."""
    n = len(rows)
    t1, t2 = rows[n // 3].time, rows[(2 * n) // 3].time
    t3 = rows[-1].time
    samples = _total_window_samples(rows)
    middle, _ = time_weighted_stats(samples, t1, t2, initial=0)
    final, _ = time_weighted_stats(samples, t2, t3, initial=0)
    knee_changed = _knee_cached(changed_path(record.config), float(record.config.ref_length),
                                1.0).w_knee_total
    knee_orig = knee_for(record.config).w_knee_total
    ok = (abs(middle - knee_changed) <= TRANSIENT_TOLERANCE * knee_changed
          and abs(final - knee_orig) <= TRANSIENT_TOLERANCE * knee_orig)
    return ok, {"middle": middle, "final": final, "knee_changed": knee_changed,
                "knee_original": knee_orig}


@dataclass
class RunResult:
    label: str
    seed: int
    rep: int
    record: RunRecord
    rows: list
    summary: dict
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.summary["verdict"] == "pass"


def run_one(config: SimConfig, label: str, rep: int = 0,
            modifier: Optional[Modifier] = None, random_lengths: bool = False) -> RunResult:
    """Simulate once and judge the run.

    The verdict depends on what the test is meant to show: source-bound runs
    must respect the increase cap, transient runs must track both knees,
    random-length runs must produce finite metrics and every other run must
    meet the efficiency band and the fairness floor.
    """
    record = run_simulation(config)
    rows = run_rows(record)
    parsed = parse_rows(rows)
    t_start, t_end = measurement_window(record)
    knee = knee_for(config)
    user_ids = sorted(record.users)
    m = summarize_rows(parsed, user_ids, t_start, t_end, knee.throughput_at_knee)
    checks = {}
    if modifier is Modifier.B:
        violations = source_bound_violations(record)
        checks["source_bound_violations"] = len(violations)
        ok = not violations
    elif modifier is Modifier.T:
        ok, checks = transient_check(record, parsed)
    elif random_lengths:
        ok = all(math.isfinite(v) for v in (m.efficiency, m.fairness_variance,
                                             m.fairness_index, m.mean_window))
    else:
        ok = (EFFICIENCY_BAND[0] <= m.efficiency <= EFFICIENCY_BAND[1]
              and m.fairness_index >= MIN_FAIRNESS)
    summary = {
        "test_id": label, "seed": config.run_seed, "rep": rep,
        "efficiency": m.efficiency, "fairness_variance": m.fairness_variance,
        "fairness_index": m.fairness_index, "bit_fraction": m.bit_fraction,
        "knee_window": knee.w_knee_total, "mean_window": m.mean_window,
        "window_time_variance": m.window_time_variance,
        "t_start": t_start, "t_end": t_end, "verdict": "pass" if ok else "fail",
    }
    return RunResult(label, config.run_seed, rep, record, rows, summary, checks)


def summary_row(summary: dict) -> list[str]:
    return [s if isinstance(s, str) else fmt(s) for s in (summary[c] for c in SUMMARY_COLUMNS)]


def run_filename(label: str, seed: int, rep: int) -> str:
    return f"{label}__seed{seed}__rep{rep}.csv"


# --- suites -------------------------------------------------------------------------

@dataclass
class IdReport:
    test_id: str
    results: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(r.passed for r in self.results)

    def aggregate(self, column: str) -> tuple[float, float]:
        """Mean and population variance of a summary column over replications."""
        vals = np.array([r.summary[column] for r in self.results], dtype=float)
        return float(vals.mean()), float(vals.var())


@dataclass
class SuiteReport:
    ids: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.ids)


def _prepare_out(out_dir: Optional[str], names: Sequence[str], force: bool) -> None:
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    if not force:
        clash = [n for n in names if os.path.exists(os.path.join(out_dir, n))]
        if clash:
            raise FileExistsError(f"{out_dir} already holds {clash[0]}; use force to overwrite")


def run_suite(ids: Sequence[str], replications: int = 1, base_seed: int = 0,
              out_dir: Optional[str] = None, force: bool = False) -> SuiteReport:
    """Run every id ``replications`` times with seeds ``base_seed + rep``."""
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    parsed = []
    for text in ids:
        try:
            parsed.append((text, TestId.parse(text), None))
        except ConfigError as exc:
            parsed.append((text, None, str(exc)))
    names = ["summary.csv"] + [run_filename(str(tid), base_seed + r, r)
                               for _, tid, _ in parsed if tid is not None
                               for r in range(replications)]
    _prepare_out(out_dir, names, force)
    report = SuiteReport()
    summary_rows = []
    for text, tid, err in parsed:
        rep_report = IdReport(text if tid is None else str(tid), error=err)
        report.ids.append(rep_report)
        if tid is None:
            continue
        try:
            for r in range(replications):
                cfg = build_test_config(tid, run_seed=base_seed + r)
                res = run_one(cfg, str(tid), r, tid.modifier,
                              tid.length_class is LengthClass.R)
                rep_report.results.append(res)
                summary_rows.append(summary_row(res.summary))
                if out_dir is not None:
                    write_table(os.path.join(out_dir, run_filename(str(tid), res.seed, r)),
                                RUN_COLUMNS, res.rows, force=True)
        except (ConfigError, DomainError) as exc:
            rep_report.error = str(exc)
    if out_dir is not None:
        write_table(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, summary_rows,
                    force=True)
    return report


def run_config(config: SimConfig, label: str, replications: int = 1,
               base_seed: Optional[int] = None, out_dir: Optional[str] = None,
               force: bool = False) -> IdReport:
    """Replicate a single configuration; seeds default to the config's own."""
    seed0 = config.run_seed if base_seed is None else base_seed
    _prepare_out(out_dir, ["summary.csv"] + [run_filename(label, seed0 + r, r)
                                              for r in range(replications)], force)
    report = IdReport(label)
    rows = []
    for r in range(replications):
        res = run_one(replace(config, run_seed=seed0 + r), label, r, None,
                      config.length_model.kind is not LengthKind.CONSTANT)
        report.results.append(res)
        rows.append(summary_row(res.summary))
        if out_dir is not None:
            write_table(os.path.join(out_dir, run_filename(label, res.seed, r)),
                        RUN_COLUMNS, res.rows, force=True)
    if out_dir is not None:
        write_table(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, rows, force=True)
    return report


# --- sweeps -------------------------------------------------------------------------

def _leaf_paths(obj, prefix: str = "") -> dict:
    """Dotted paths of every scalar field reachable from a config object."""
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        path = f"{prefix}{f.name}"
        if prefix == "" and f.name == "path":
            continue
        if f.name == "birth" and value is None:
            continue  # a birth policy cannot be switched on by a scalar
        if dataclasses.is_dataclass(value):
            out.update(_leaf_paths(value, path + "."))
        elif isinstance(value, tuple):
            continue
        else:
            out[path] = value
    return out


def sweepable_paths(config: SimConfig) -> dict:
    """Dotted path -> current value; ``users.X`` sets field X for every user."""
    paths = _leaf_paths(config)
    for name, value in _leaf_paths(config.users[0]).items():
        if name != "user_id":
            paths[f"users.{name}"] = value
    return paths


def resolve_parameter(config: SimConfig, name: str) -> str:
    paths = sweepable_paths(config)
    if name in paths:
        return name
    matches = [p for p in paths if p.rsplit(".", 1)[-1] == name]
    if len(matches) == 1:
        return matches[0]
    hint = "ambiguous" if matches else "unknown"
    raise ConfigError(f"{hint} parameter {name!r}; valid paths: {', '.join(sorted(paths))}")


def _coerce(current, value):
    if isinstance(value, str):
        text = value.strip()
        if isinstance(current, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ConfigError(f"{text!r} is not a boolean")
            return text.lower() in ("true", "1")
        if isinstance(current, enum.Enum):
            return type(current)(text)
        if isinstance(current, int):
            f = float(text)
            if f != int(f):
                raise ConfigError(f"{text!r} is not an integer")
            return int(f)
        if text.lower() == "none":
            return None
        return float(text)
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"{value!r} is not a boolean")
    if isinstance(current, int) and not isinstance(current, bool):
        if float(value) != int(value):
            raise ConfigError(f"{value!r} is not an integer")
        return int(value)
    if isinstance(current, float) or current is None:
        return float(value)
    return value


def _set_path(obj, parts: list, value):
    head, rest = parts[0], parts[1:]
    if not rest:
        return replace(obj, **{head: value})
    return replace(obj, **{head: _set_path(getattr(obj, head), rest, value)})


def set_parameter(config: SimConfig, name: str, value) -> SimConfig:
    path = resolve_parameter(config, name)
    current = sweepable_paths(config)[path]
    try:
        value = _coerce(current, value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {path}: {exc}") from None
    parts = path.split(".")
    if parts[0] == "users":
        users = tuple(_set_path(u, parts[1:], value) for u in config.users)
        out = replace(config, users=users)
    else:
        out = _set_path(config, parts, value)
    try:
        out.validate()
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    return out


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    base: SimConfig
    replications: int = 1
    label: str = "sweep"
    base_seed: int = 0
    modifier: Optional[Modifier] = None
    random_lengths: bool = False


SWEEP_COLUMNS = ("parameter", "value") + SUMMARY_COLUMNS + ("window_amplitude",)


def run_sweep(spec: SweepSpec, out_dir: Optional[str] = None, force: bool = False) -> list[dict]:
    """One summary row per (value, replication), tidy and keyed by the value."""
    if spec.replications < 1:
        raise ConfigError("replications must be >= 1")
    if not spec.values:
        raise ConfigError("sweep needs at least one value")
    path = resolve_parameter(spec.base, spec.parameter)
    configs = [(v, set_parameter(spec.base, path, v)) for v in spec.values]

    def label(v):
        return f"{spec.label}-{path}={v}"

    _prepare_out(out_dir, ["sweep.csv"] + [run_filename(label(v), spec.base_seed + r, r)
                                           for v, _ in configs
                                           for r in range(spec.replications)], force)
    table = []
    for v, cfg in configs:
        for r in range(spec.replications):
            res = run_one(replace(cfg, run_seed=spec.base_seed + r), label(v), r, spec.modifier,
                          spec.random_lengths)
            row = {"parameter": path, "value": str(v), **res.summary,
                   "window_amplitude": math.sqrt(res.summary["window_time_variance"])}
            table.append(row)
            if out_dir is not None:
                write_table(os.path.join(out_dir, run_filename(label(v), res.seed, r)),
                            RUN_COLUMNS, res.rows, force=True)
    if out_dir is not None:
        write_table(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS,
                    [[x if isinstance(x, str) else fmt(x) for x in (row[c] for c in SWEEP_COLUMNS)]
                     for row in table], force=True)
    return table
