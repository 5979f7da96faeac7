import pytest
from hypothesis import given, settings, strategies as st

from cavoid.metrics import fairness_index
from cavoid.oracle import (OracleConfig, OracleStart, first_direction_change, oracle_step,
                           run_trajectory, scan_fairness)
from cavoid.policy import ControlState, Direction, PolicyParams, Rounding, WindowState, named_policy


def state(params, w, w_used=None):
    cs = ControlState.initial(params, w)
    if w_used is not None:
        cs = ControlState(WindowState(w, w_used), params)
    return cs


def test_aiad_step_up():
    p = named_policy("aiad")
    new, signal = oracle_step([state(p, 14.0), state(p, 1.0)], 15.5)
    assert signal is Direction.UP
    assert [s.window.w_used for s in new] == [15, 2]


def test_aiad_step_down():
    p = named_policy("aiad")
    new, signal = oracle_step([state(p, 15.0), state(p, 2.0)], 15.5)
    assert signal is Direction.DOWN
    assert [s.window.w_used for s in new] == [14, 1]


def test_aimd_single_user_down_from_sixteen():
    new, signal = oracle_step([state(PolicyParams(), 16.0)], 15.5)
    assert signal is Direction.DOWN
    assert new[0].window.w == 14.0


def test_inactive_users_are_skipped():
    p = PolicyParams()
    new, signal = oracle_step([state(p, 3.0), None], 3.5)
    assert signal is Direction.UP and new[1] is None


def staggered(policy, knee, max_steps=2000):
    second = first_direction_change(policy, knee) + 1
    return run_trajectory(OracleConfig(2, knee, policy, (OracleStart(0), OracleStart(second)),
                                       max_steps))


def test_aiad_staggered_limit_cycle():
    traj = staggered(named_policy("aiad"), 15.5)
    assert traj.averages == (14.5, 1.5)
    start, period = traj.cycle
    cyc = traj.steps[start:start + period]
    assert sorted(tuple(u for _, u in s[0]) for s in cyc) == [(14, 1), (15, 2)]
    assert traj.averages[0] / traj.averages[1] == pytest.approx(9.67, abs=0.01)


def test_aimd_truncation_cycle():
    p = PolicyParams(r2=0.8, rounding=Rounding.TRUNCATE)
    traj = run_trajectory(OracleConfig(2, 15.5, p, (OracleStart(0, 10.0), OracleStart(0, 6.0))))
    assert traj.cycle == (0, 3)
    assert [tuple(u for _, u in s[0]) for s in traj.steps[:3]] == [(10, 6), (8, 4), (9, 5)]


def test_aimd_rounding_staggered_is_close():
    traj = staggered(PolicyParams(r2=0.8), 15.5)
    assert traj.cycle is not None
    assert abs(traj.averages[0] - traj.averages[1]) <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.floats(3.5, 40), st.floats(1, 30), st.integers(0, 20))
def test_reported_cycle_replays(knee, w0, offset):
    p = PolicyParams()
    cfg = OracleConfig(2, knee, p, (OracleStart(0, w0), OracleStart(offset, 1.0)))
    traj = run_trajectory(cfg)
    assert traj.cycle is not None
    start, period = traj.cycle
    states = [ControlState(WindowState(w, u), p) for w, u in traj.steps[start][0]]
    first = [(s.window.w, s.window.w_used) for s in states]
    for _ in range(period):
        states, _ = oracle_step(states, knee)
    for (w, u), s in zip(first, states):
        assert s.window.w_used == u
        assert s.window.w == pytest.approx(w, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(1, 40), st.floats(2.5, 60))
def test_symmetric_start_stays_symmetric(w0, knee):
    traj = run_trajectory(OracleConfig(2, knee, PolicyParams(),
                                       (OracleStart(0, w0), OracleStart(0, w0)), 300))
    assert all(s[0][0] == s[0][1] for s in traj.steps)


def test_signal_shared_by_all_users():
    traj = staggered(named_policy("aiad"), 15.5)
    for (windows, signal), (nxt, _) in zip(traj.steps, traj.steps[1:]):
        for (w, u), (w2, u2) in zip(windows, nxt):
            if u:
                assert (w2 > w) == (signal is Direction.UP)


def test_single_user_scan_is_fair():
    rep = scan_fairness([3.5, 7.5, 12.5], [(w,) for w in range(1, 10)], PolicyParams())
    assert rep.worst_fairness == 1.0


def test_aiad_scan_finds_unfair_instances():
    grid = [(a, b) for a in range(1, 33, 3) for b in range(1, 33, 3)]
    rep = scan_fairness([15.5, 21.5], grid, named_policy("aiad"), unfair_below=0.7)
    assert rep.worst_fairness <= 0.7
    assert rep.unfair_instances


def test_scan_matches_direct_trajectories():
    grid = [(1, 4), (3, 9), (12, 2)]
    rep = scan_fairness([11.5], grid, PolicyParams())
    worst = min(fairness_index(run_trajectory(OracleConfig(
        2, 11.5, PolicyParams(), tuple(OracleStart(0, w) for w in g))).averages) for g in grid)
    assert rep.worst_fairness == worst


def test_divergence_flag_without_cycle():
    cfg = OracleConfig(1, 1e9, PolicyParams(), max_steps=50)
    traj = run_trajectory(cfg)
    assert traj.cycle is None and traj.diverging


def test_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(2, 5.5, PolicyParams(), (OracleStart(),))
    with pytest.raises(ValueError):
        OracleConfig(1, 5.5, max_steps=0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["aimd", "aiad", "mimd"]), st.sampled_from(list(Rounding)),
       st.sampled_from([4.5, 9.5, 15.5]),
       st.lists(st.tuples(st.integers(1, 20), st.integers(1, 20)), min_size=1, max_size=8))
def test_memoised_scan_equals_direct_runs(name, rounding, knee, grid):
    policy = named_policy(name, rounding=rounding)
    rep = scan_fairness([knee], grid, policy, max_steps=300, unfair_below=1.1)
    direct = [run_trajectory(OracleConfig(2, knee, policy,
                                          tuple(OracleStart(0, w) for w in g), 300))
              for g in grid]
    assert [u[2] for u in rep.unfair_instances] == [t.averages for t in direct]
    assert rep.without_cycle == sum(t.cycle is None for t in direct)
