"""
Perfect-feedback window trajectories.

Users sharing one path all receive the same signal each step: go up if the
sum of implemented windows is at or below the knee window, otherwise go
down.  Iterating that map from a given start exposes the limit cycle an
increase/decrease policy settles into, and therefore whether it is fair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .metrics import fairness_index
from .policy import (ControlState, Direction, PolicyParams, control_step, implemented,
                     next_window)


@dataclass(frozen=True)
class OracleStart:
    start_step: int = 0
    initial_w: float = 1.0


@dataclass(frozen=True)
class OracleConfig:
    n_users: int
    w_knee: float
    policy: PolicyParams = field(default_factory=PolicyParams)
    starts: tuple = ()
    max_steps: int = 2000

    def __post_init__(self):
        starts = tuple(self.starts) or tuple(OracleStart() for _ in range(self.n_users))
        object.__setattr__(self, "starts", starts)
        if len(starts) != self.n_users:
            raise ValueError("need one start entry per user")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class Trajectory:
    # one entry per step: ((w, w_used) per user, signal); inactive users are (0.0, 0)
    steps: list
    cycle: Optional[tuple] = None
    averages: tuple = ()
    diverging: bool = False

    def user_series(self, user: int) -> list:
        return [s[0][user][1] for s in self.steps]

    def signals(self) -> list:
        return [s[1] for s in self.steps]


def oracle_step(states: Sequence[Optional[ControlState]],
                w_knee: float) -> tuple[list, Direction]:
    """Advance every active user by one step under the shared signal.

    ``None`` marks a user that has not started yet; it contributes nothing
    to the total and is returned unchanged.
    """
    total = sum(s.window.w_used for s in states if s is not None)
    signal = Direction.UP if total <= w_knee else Direction.DOWN
    return [None if s is None else control_step(s, signal) for s in states], signal


def _key(states) -> tuple:
    out = []
    for s in states:
        w = s.window
        birth = s.params.birth.active if s.params.birth is not None else None
        turns = tuple(None if t is None else round(t, 12) for t in s.turns)
        # only the k-ary policy looks at the previous direction
        last = w.last_direction if s.params.kary_k is not None else None
        out.append((round(w.w, 12), w.w_used, last, birth, turns))
    return tuple(out)


def run_trajectory(config: OracleConfig) -> Trajectory:
    states: list = [None] * config.n_users
    last_start = max(s.start_step for s in config.starts)
    steps = []
    seen = {}
    cycle = None
    for step in range(config.max_steps):
        for i, start in enumerate(config.starts):
            if start.start_step == step and states[i] is None:
                states[i] = ControlState.initial(config.policy, start.initial_w)
        if step >= last_start:
            key = _key(states)
            if key in seen:
                first = seen[key]
                cycle = (first, step - first)
                break
            seen[key] = step
        new_states, signal = oracle_step(states, config.w_knee)
        steps.append((tuple((0.0, 0) if s is None else (s.window.w, s.window.w_used)
                            for s in states), signal))
        states = new_states

    if cycle is not None:
        window = steps[cycle[0]:cycle[0] + cycle[1]]
    else:
        window = steps[-max(1, len(steps) // 4):]
    averages = tuple(sum(s[0][u][1] for s in window) / len(window)
                     for u in range(config.n_users))
    return Trajectory(steps=steps, cycle=cycle, averages=averages,
                      diverging=cycle is None and _grows(steps))


def _grows(steps) -> bool:
    tail = steps[-max(2, len(steps) // 4):]
    peaks = [max(w for w, _ in s[0]) for s in tail]
    return all(b >= a for a, b in zip(peaks, peaks[1:])) and peaks[-1] > peaks[0]


def first_direction_change(policy: PolicyParams, w_knee: float,
                           initial_w: float = 1.0, max_steps: int = 10_000) -> int:
    """Step index at which a lone user first reverses direction."""
    state = ControlState.initial(policy, initial_w)
    last = None
    for step in range(max_steps):
        [state], signal = oracle_step([state], w_knee)
        if last is not None and signal is not last:
            return step
        last = signal
    raise RuntimeError("no direction change within max_steps")


@dataclass
class ScanReport:
    worst_fairness: float
    worst_instance: tuple  # (knee, start windows, cycle averages)
    max_average_gap: float
    runs: int
    without_cycle: int
    unfair_instances: list = field(default_factory=list)


def _scan_one(states, w_knee: float, max_steps: int, memo: dict, step, key):
    """Cycle averages from simultaneous starts, sharing work through ``memo``.

    ``memo`` maps a state key to (averages, steps until the cycle closes).
    Returns None when the budget runs out, so the caller falls back to
    ``run_trajectory`` and its no-cycle averaging.
    """
    path, index, totals = [], {}, []
    while len(path) < max_steps:
        k = key(states)
        if k in memo:
            averages, remaining = memo[k]
            if len(path) + remaining >= max_steps:
                return None
            for i, p in enumerate(path):
                memo[p] = (averages, len(path) - i + remaining)
            return averages
        if k in index:
            first = index[k]
            period = len(path) - first
            cyc = totals[first:]
            averages = tuple(sum(t[u] for t in cyc) / period for u in range(len(states)))
            for i, p in enumerate(path):
                memo[p] = (averages, max(i, first) - i + period)
            return averages
        index[k] = len(path)
        path.append(k)
        used = step(states)
        totals.append(used[0])
        states = used[1]
    return None


def _plain_stepper(policy: PolicyParams, w_knee: float):
    """Step bare (w, w_used) pairs; valid when the policy keeps no extra state."""
    w_max = 1_000_000
    rounding = policy.rounding

    def step(states):
        used = tuple(u for _, u in states)
        up = sum(used) <= w_knee
        nxt = []
        for w, u in states:
            w2 = next_window(policy, up, w, u, w_max)
            nxt.append((w2, implemented(w2, rounding, w_max)))
        return used, nxt

    def key(states):
        return tuple((round(w, 12), u) for w, u in states)

    return step, key


def _full_stepper(w_knee: float):
    def step(states):
        used = tuple(s.window.w_used for s in states)
        return used, oracle_step(states, w_knee)[0]

    return step, _key


def _solve(start, knee, policy, max_steps, memo, step, key, plain) -> tuple:
    states = [ControlState.initial(policy, w) for w in start]
    if plain:
        states = [(s.window.w, s.window.w_used) for s in states]
    averages = _scan_one(states, knee, max_steps, memo, step, key)
    if averages is not None:
        return averages, True
    cfg = OracleConfig(len(start), knee, policy, tuple(OracleStart(0, w) for w in start),
                       max_steps)
    traj = run_trajectory(cfg)
    return traj.averages, traj.cycle is not None


def scan_fairness(knee_grid: Sequence[float], start_grid: Sequence[Sequence[float]],
                  policy: PolicyParams, max_steps: int = 2000,
                  unfair_below: float = 0.0) -> ScanReport:
    """Exhaustive scan: every knee against every simultaneous start vector.

    Trajectories from different starts merge quickly, so states already
    traced for the same knee are looked up rather than stepped again.
    """
    worst = None
    gap = 0.0
    runs = 0
    no_cycle = 0
    unfair = []
    policy.validate()
    plain = policy.birth is None and policy.kary_k is None
    for knee in knee_grid:
        memo: dict = {}
        step, key = _plain_stepper(policy, knee) if plain else _full_stepper(knee)
        # users are interchangeable, so a permuted start permutes the averages
        solved: dict = {}
        for start in start_grid:
            order = sorted(range(len(start)), key=lambda i: start[i])
            canon = tuple(start[i] for i in order)
            if canon not in solved:
                solved[canon] = _solve(canon, knee, policy, max_steps, memo, step, key, plain)
            canon_avg, cycled = solved[canon]
            averages = [0.0] * len(start)
            for pos, i in enumerate(order):
                averages[i] = canon_avg[pos]
            averages = tuple(averages)
            no_cycle += not cycled
            runs += 1
            f = fairness_index(averages)
            gap = max(gap, max(averages) - min(averages))
            if worst is None or f < worst[0]:
                worst = (f, (knee, tuple(start), averages))
            if f < unfair_below:
                unfair.append((knee, tuple(start), averages, f))
    if worst is None:
        raise ValueError("empty grid")
    return ScanReport(worst[0], worst[1], gap, runs, no_cycle, unfair)
