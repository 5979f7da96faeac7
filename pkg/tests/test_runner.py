import csv
import math

import pytest

from cavoid.errors import ConfigError
from cavoid.harness.catalog import build_test_config
from cavoid.harness.runner import (SUMMARY_COLUMNS, SweepSpec, knee_for, resolve_parameter,
                                   run_config, run_one, run_suite, run_sweep, set_parameter,
                                   sweepable_paths)

SHORT = 300


def short(test_id, seed=0):
    return set_parameter(build_test_config(test_id, run_seed=seed), "users.total_packets", SHORT)


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def recompute(rows, t_start, t_end, knee_throughput):
    """Plain re-derivation of the summary numbers from a run CSV."""
    users = sorted({int(r["user_id"]) for r in rows})
    span = t_end - t_start
    counts = {u: 0 for u in users}
    bits = []
    for r in rows:
        if t_start < float(r["time"]) <= t_end:
            counts[int(r["user_id"])] += 1
            bits.append(int(r["bit"]))
    thr = [counts[u] / span for u in users]
    goal = knee_throughput / len(users)
    eff = sum(t / goal for t in thr) / len(users)
    jain = sum(thr) ** 2 / (len(thr) * sum(t * t for t in thr))
    # time-weighted total implemented window, piecewise constant between rows
    current, area, prev_t, total = {}, 0.0, t_start, 0
    for r in rows:
        t = float(r["time"])
        if t > t_start:
            hi = min(t, t_end)
            if hi > prev_t:
                area += total * (hi - prev_t)
                prev_t = hi
        current[int(r["user_id"])] = int(r["w_used"])
        total = sum(current.values())
    area += total * (t_end - prev_t)
    return {"efficiency": eff, "fairness_index": jain, "bit_fraction": sum(bits) / len(bits),
            "mean_window": area / span}


def test_summary_recomputed_from_disk(tmp_path):
    rep = run_config(short("MDn4"), "MDn4", out_dir=str(tmp_path))
    s = rep.results[0].summary
    rows = read(tmp_path / "MDn4__seed0__rep0.csv")
    knee_thr = knee_for(short("MDn4")).throughput_at_knee
    again = recompute(rows, s["t_start"], s["t_end"], knee_thr)
    for key, value in again.items():
        assert s[key] == pytest.approx(value, rel=1e-9, abs=1e-12), key


def test_suite_single_replication(tmp_path):
    report = run_suite(["MD1"], 1, out_dir=str(tmp_path))
    assert sorted(p.name for p in tmp_path.iterdir()) == ["MD1__seed0__rep0.csv", "summary.csv"]
    summary = read(tmp_path / "summary.csv")
    assert len(summary) == 1 and tuple(summary[0]) == SUMMARY_COLUMNS
    assert report.passed


def test_replications_and_aggregates(tmp_path):
    report = run_suite(["MR1"], 5, base_seed=10, out_dir=str(tmp_path))
    assert len(list(tmp_path.glob("MR1__seed*.csv"))) == 5
    idr = report.ids[0]
    effs = [r.summary["efficiency"] for r in idr.results]
    mean, var = idr.aggregate("efficiency")
    assert mean == pytest.approx(sum(effs) / 5)
    assert var == pytest.approx(sum((e - mean) ** 2 for e in effs) / 5)
    assert [r.seed for r in idr.results] == [10, 11, 12, 13, 14]


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_suite(["NR1"], 1, base_seed=3, out_dir=str(a))
    run_suite(["NR1"], 1, base_seed=3, out_dir=str(b))
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_no_overwrite_without_force(tmp_path):
    run_suite(["MD1"], 1, out_dir=str(tmp_path))
    with pytest.raises(FileExistsError):
        run_suite(["MD1"], 1, out_dir=str(tmp_path))
    run_suite(["MD1"], 1, out_dir=str(tmp_path), force=True)


def test_bad_id_recorded_not_raised():
    report = run_suite(["XD1"])
    assert report.ids[0].error and not report.passed


# --- sweeps -------------------------------------------------------------------------

def test_sweep_over_r2(tmp_path):
    spec = SweepSpec("r2", (0.5, 0.75, 0.875, 0.95), short("MD1"))
    table = run_sweep(spec, str(tmp_path))
    assert [row["value"] for row in table] == ["0.5", "0.75", "0.875", "0.95"]
    assert {row["parameter"] for row in table} == {"policy.params.r2"}
    assert len(read(tmp_path / "sweep.csv")) == 4
    assert len(list(tmp_path.glob("*__rep0.csv"))) == 4


def test_single_value_sweep_equals_plain_run():
    base = short("MD1")
    row = run_sweep(SweepSpec("cutoff", (0.5,), base))[0]
    plain = run_one(base, "MD1").summary
    for key in ("efficiency", "fairness_index", "mean_window", "bit_fraction"):
        assert row[key] == plain[key]


def test_sweep_k1_changes_behaviour():
    table = run_sweep(SweepSpec("k1", (1, 2), short("MD1")))
    assert table[0]["window_time_variance"] != table[1]["window_time_variance"]


def test_unknown_parameter_lists_valid_paths():
    with pytest.raises(ConfigError, match="policy.params.r2"):
        resolve_parameter(short("MD1"), "nope")


def test_sweepable_parameters_cover_the_knobs():
    paths = sweepable_paths(short("MD1"))
    for p in ("policy.params.k1", "policy.cutoff", "users.w_max", "transient.middle_rate"):
        assert p in paths


def test_invalid_sweep_value_rejected():
    with pytest.raises(ConfigError):
        set_parameter(short("MD1"), "r2", 1.5)


# --- verdicts -----------------------------------------------------------------------

def test_verdict_flags_threshold_violation():
    good = run_one(short("MD1"), "MD1")
    assert good.passed
    # a tiny window cap starves the run below the efficiency band
    starved = run_one(set_parameter(short("MD1"), "users.w_max", 1), "MD1")
    assert starved.summary["efficiency"] < 0.8
    assert not starved.passed
    assert math.isfinite(starved.summary["fairness_index"])
