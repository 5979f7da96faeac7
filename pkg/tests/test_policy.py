import pytest
from hypothesis import given, strategies as st

from cavoid.errors import DomainError, NoSignalError
from cavoid.policy import (BirthPolicy, ControlState, CycleLedger, Direction, KaryState, Kind,
                           LoadLevel, Phase, PolicyParams, Rounding, WindowState, apply_policy,
                           birth_step, control_step, cycle_advance, decide, decrease_default,
                           filter_signals, increase_default, kary_next, named_policy,
                           recent_weights, round_half_up)

windows = st.floats(min_value=1.0, max_value=500.0, allow_nan=False)


def ws(w, w_used=None, w_max=1_000_000):
    return WindowState(w=w, w_used=round_half_up(w) if w_used is None else w_used, w_max=w_max)


# --- signal filter ----------------------------------------------------------------

def test_filter_half_set_is_overload():
    assert filter_signals([1, 1, 0, 0], 0.5) is LoadLevel.OVERLOAD


def test_filter_one_of_four_is_underload():
    assert filter_signals([0, 0, 0, 1], 0.5) is LoadLevel.UNDERLOAD


def test_filter_three_quarter_majority():
    assert filter_signals([1, 1, 1, 0], 0.75) is LoadLevel.OVERLOAD
    assert filter_signals([1, 1, 0, 0], 0.75) is LoadLevel.UNDERLOAD


def test_filter_empty_raises():
    with pytest.raises(NoSignalError):
        filter_signals([], 0.5)


@pytest.mark.parametrize("cutoff", [0.0, -0.1, 1.5])
def test_filter_rejects_bad_cutoff(cutoff):
    with pytest.raises(DomainError):
        filter_signals([True], cutoff)


def test_recent_weights_favour_newest_bit():
    w = recent_weights(4, 2.0)
    assert w == [1.0, 2.0, 4.0, 8.0]
    # only the newest bit set: 8 of 15 reaches a half cutoff
    assert filter_signals([0, 0, 0, 1], 0.5, w) is LoadLevel.OVERLOAD
    assert filter_signals([1, 0, 0, 0], 0.5, w) is LoadLevel.UNDERLOAD


@given(st.lists(st.booleans(), min_size=1, max_size=64),
       st.floats(min_value=0.01, max_value=1.0))
def test_filter_matches_fraction_rule(bits, cutoff):
    expected = sum(bits) >= cutoff * len(bits)
    assert (filter_signals(bits, cutoff) is LoadLevel.OVERLOAD) == expected


def test_decide_maps_levels():
    assert decide(LoadLevel.UNDERLOAD) is Direction.UP
    assert decide(LoadLevel.OVERLOAD) is Direction.DOWN


def test_repeated_levels_are_acted_on_each_time():
    params = PolicyParams()
    cs = ControlState.initial(params, 4.0)
    for _ in range(2):
        cs = control_step(cs, decide(LoadLevel.UNDERLOAD))
    assert cs.window.w == 6.0


@given(st.sampled_from(list(LoadLevel)))
def test_decide_is_total(level):
    assert decide(level) in (Direction.UP, Direction.DOWN)


# --- Box 1 -------------------------------------------------------------------------

def test_default_straight_increase():
    s = increase_default(WindowState(5.0, 5, 20))
    assert (s.w, s.w_used) == (6.0, 6)


def test_default_increase_capped_by_last_used():
    s = increase_default(WindowState(7.3, 5, 20))
    assert (s.w, s.w_used) == (6.0, 6)


def test_default_increase_obeys_destination():
    s = increase_default(WindowState(9.6, 9, 10))
    assert (s.w, s.w_used) == (10.0, 10)


@pytest.mark.parametrize("w, expected", [(8.0, (7.0, 7)), (1.0, (1.0, 1)), (2.6, (2.275, 2))])
def test_default_decrease(w, expected):
    s = decrease_default(ws(w))
    assert s.w == pytest.approx(expected[0], rel=1e-12)
    assert s.w_used == expected[1]


@given(windows)
def test_default_decrease_reaches_one_and_stays(w):
    s = ws(w)
    for _ in range(2000):
        s = decrease_default(s)
        assert s.w >= 1.0
        if s.w == 1.0:
            break
    assert s.w == 1.0
    assert decrease_default(s).w == 1.0


# --- apply_policy ------------------------------------------------------------------

def test_aiad_down_from_two():
    p = named_policy("aiad")
    assert apply_policy(p, Direction.DOWN, ws(2.0)).w == 1.0


def test_multiplicative_increase_uncapped_when_window_implemented():
    p = named_policy("mimd")
    s = apply_policy(p, Direction.UP, WindowState(4.0, 4))
    assert s.w == 6.0 and s.w_used == 6


def test_multiplicative_increase_capped_when_lagging():
    p = named_policy("mimd")
    # computed 6 but only 3 in use: growth limited to 3 * r1
    s = apply_policy(p, Direction.UP, WindowState(6.0, 3))
    assert s.w == 4.5


def test_truncation_down_from_six():
    p = PolicyParams(r2=0.8, rounding=Rounding.TRUNCATE)
    s = apply_policy(p, Direction.DOWN, ws(6.0))
    assert s.w_used == 4
    # truncation keeps the window itself integer valued
    assert s.w == 4.0


def test_lagging_user_capped_at_used_plus_k1():
    s = apply_policy(PolicyParams(), Direction.UP, WindowState(7.3, 5, 20))
    assert (s.w, s.w_used) == (6.0, 6)


def test_rounded_down_window_keeps_fraction():
    s = apply_policy(PolicyParams(), Direction.UP, ws(5.25))
    assert s.w == 6.25 and s.w_used == 6


def test_apply_policy_rejects_none_direction():
    with pytest.raises(DomainError):
        apply_policy(PolicyParams(), Direction.NONE, ws(3.0))


@pytest.mark.parametrize("kwargs", [dict(k1=0), dict(k2=-1), dict(r1=1.0), dict(r2=1.0),
                                    dict(r2=0.0), dict(kary_k=1.0)])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(DomainError):
        apply_policy(PolicyParams(**kwargs), Direction.UP, ws(3.0))


policies = st.builds(
    PolicyParams,
    increase_kind=st.sampled_from(list(Kind)),
    decrease_kind=st.sampled_from(list(Kind)),
    k1=st.floats(0.1, 4), k2=st.floats(0.1, 4),
    r1=st.floats(1.01, 3), r2=st.floats(0.05, 0.99),
    rounding=st.sampled_from(list(Rounding)))


@given(policies, windows, st.integers(1, 600), st.sampled_from([Direction.UP, Direction.DOWN]))
def test_window_bounds_after_any_step(params, w, w_max, direction):
    start = WindowState.initial(w, w_max, params.rounding)
    s = apply_policy(params, direction, start)
    assert 1 <= s.w_used <= w_max
    assert s.w >= 1.0
    tol = 0.5 if params.rounding is Rounding.ROUND_HALF_UP else 1.0
    if s.w <= w_max:
        assert abs(s.w_used - s.w) <= tol + 1e-9


@given(policies, windows, st.integers(1, 600))
def test_increase_stays_near_used_plus_step(params, w, used):
    start = WindowState(w, min(used, WindowState.initial(w, rounding=params.rounding).w_used))
    s = apply_policy(params, Direction.UP, start)
    if params.increase_kind is Kind.ADDITIVE:
        bound = start.w_used + params.k1
    else:
        bound = start.w_used * params.r1
    lagging = start.w_used < WindowState.initial(w, rounding=params.rounding).w_used
    if lagging:
        # source-bound: the computed window itself is capped
        assert s.w <= bound + 1e-9
    elif params.increase_kind is Kind.ADDITIVE:
        # a rounded-down fraction is carried, never more than half a packet
        assert s.w < bound + 0.5 + 1e-9


@given(windows, st.integers(1, 5))
def test_integer_step_moves_used_window_by_at_most_step(w, k1):
    start = ws(w)
    s = apply_policy(PolicyParams(k1=k1), Direction.UP, start)
    assert s.w_used <= start.w_used + k1


@given(windows)
def test_apply_policy_agrees_with_default_step_on_used_window(w):
    s = ws(w)
    p = PolicyParams()
    for direction, fixed in ((Direction.UP, increase_default),
                             (Direction.DOWN, decrease_default)):
        assert apply_policy(p, direction, s).w_used == fixed(s).w_used


# --- k-ary and birth ---------------------------------------------------------------

@pytest.mark.parametrize("lo, hi, k, expected", [(8, 16, 2, 12), (8, 16, 4, 10), (5, 5, 3, 5)])
def test_kary_next(lo, hi, k, expected):
    assert kary_next(KaryState(lo, hi), k) == expected


def test_kary_rejects_small_k():
    with pytest.raises(DomainError):
        kary_next(KaryState(1, 2), 1.0)


def test_kary_policy_jumps_between_turns():
    cs = ControlState.initial(named_policy("kary"), 8.0)
    cs = control_step(cs, Direction.UP)        # 9
    cs = control_step(cs, Direction.DOWN)      # down-turn recorded at 9
    assert cs.turns == (None, 9.0)
    cs = control_step(cs, Direction.UP)        # up-turn recorded; jump to midpoint
    lo, hi = sorted(cs.turns)
    assert cs.window.w == pytest.approx(lo + (hi - lo) / 2)


def test_birth_up_from_one():
    p = PolicyParams(birth=BirthPolicy())
    s, p2 = birth_step(p, ws(1.0), Direction.UP)
    assert s.w == 3.0 and p2.birth.active


def test_birth_down_deactivates():
    p = PolicyParams(birth=BirthPolicy())
    s, p2 = birth_step(p, ws(10.0), Direction.DOWN)
    assert s.w == pytest.approx(8.75)
    assert not p2.birth.active
    s, _ = birth_step(p2, ws(3.0), Direction.UP)
    assert s.w == 4.0


def test_used_cap_limits_source_bound_user():
    cs = ControlState.initial(PolicyParams(), 6.0)
    cs = control_step(cs, Direction.UP, used_cap=3)
    assert cs.window.w == 4.0


# --- update frequency --------------------------------------------------------------

def _drive(ledger, bits, w_used):
    due = []
    for b in bits:
        ledger, out = cycle_advance(ledger, b, w_used)
        due.append(out)
    return ledger, due


def test_decision_uses_second_turn_only():
    ledger, due = _drive(CycleLedger.start(2), [True, True, False, True], 2)
    assert due[:3] == [None, None, None]
    assert due[3] == (False, True)


def test_window_one_decides_every_two_acks():
    ledger, due = _drive(CycleLedger.start(1), [True, False] * 3, 1)
    assert [d is not None for d in due] == [False, True] * 3


def test_measuring_state_persists():
    ledger, due = _drive(CycleLedger.start(3), [True] * 4, 3)
    assert ledger.phase is Phase.MEASURING
    assert ledger.packets_remaining_in_phase == 2
    assert ledger.bits_collected == (True,)
    assert all(d is None for d in due)


@given(st.integers(1, 30), st.lists(st.booleans(), min_size=1, max_size=200))
def test_decisions_spaced_two_windows_apart(w_used, bits):
    _, due = _drive(CycleLedger.start(w_used), bits, w_used)
    idx = [i for i, d in enumerate(due) if d is not None]
    for a, b in zip([-1] + idx, idx):
        assert b - a == 2 * w_used
    assert all(len(due[i]) == w_used for i in idx)
