"""
Performance metrics: power, fairness index, feedback-bit balance, knee
location, goal throughputs and the per-time/user/replication/parameter
statistics cube.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class PowerParams:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")


def power(throughput: float, response_time: float, params: PowerParams = PowerParams()) -> float:
    if not throughput > 0 or not response_time > 0:
        raise DomainError("power needs positive throughput and response time")
    return throughput ** params.alpha / response_time


def fairness_index(xs: Sequence[float]) -> float:
    """(sum x)^2 / (n * sum x^2)."""
    xs = [float(x) for x in xs]
    if not xs:
        raise DomainError("fairness of an empty vector")
    if any(x < 0 or not math.isfinite(x) for x in xs):
        raise DomainError("throughputs must be finite and non-negative")
    sq = sum(x * x for x in xs)
    if sq == 0:
        raise DomainError("fairness is undefined when every throughput is zero")
    return sum(xs) ** 2 / (len(xs) * sq)


def bit_balance(bits: Sequence[bool]) -> tuple[float, float]:
    """Fraction of set bits and the binary entropy of that fraction."""
    if len(bits) == 0:
        raise DomainError("bit_balance of an empty list")
    p = sum(1 for b in bits if b) / len(bits)
    entropy = 0.0
    for q in (p, 1 - p):
        if q > 0:
            entropy -= q * math.log2(q)
    return p, entropy


# --- knee location ---------------------------------------------------------------

@dataclass(frozen=True)
class KneePoint:
    window: int
    throughput: float
    response_time: float
    power: float


@dataclass(frozen=True)
class KneeEstimate:
    w_knee_total: int
    power_at_knee: float
    sweep: tuple

    @property
    def knee_point(self) -> KneePoint:
        return next(p for p in self.sweep if p.window == self.w_knee_total)

    @property
    def throughput_at_knee(self) -> float:
        return self.knee_point.throughput


def measure_fixed_window(config, window: int, packets: int = 400,
                         steady_fraction: float = 0.8) -> tuple[float, float]:
    """Steady throughput and response time of one source at a fixed window.

    The source is given the whole path; throughput is in reference-length
    packets per second and response time is delivery minus send time, both
    taken over the whole window turns that fit in the final
    ``steady_fraction`` of delivered packets.
    """
    from .engine import run_simulation
    from .sim import PolicyBundle, UserSpec

    packets = max(packets, 5 * window)
    cfg = replace(
        config,
        users=(UserSpec(0, packets, w_max=max(window, 1), initial_window=float(window)),),
        transient=replace(config.transient, enabled=False),
        policy=PolicyBundle(params=config.policy.params, adaptive=False),
    )
    rec = run_simulation(cfg)
    pkts = rec.packets
    # whole window turns only, so bursty delivery patterns do not bias the rate
    turns = max(1, int(len(pkts) * steady_fraction) // window)
    steady = pkts[-(turns * window + 1):]
    span = steady[-1].delivery_time - steady[0].delivery_time
    # the first steady delivery opens the interval, so it is not counted
    counted = steady[1:]
    amount = sum(p.length for p in counted) / cfg.ref_length
    throughput = amount / span
    response = sum(p.delivery_time - p.send_time for p in counted) / len(counted)
    return throughput, response


def find_knee(config, params: PowerParams = PowerParams(),
              w_range: Sequence[int] = range(1, 21), packets: int = 400) -> KneeEstimate:
    """Total window that maximises system power on ``config``'s path.

    Ties within a relative 1e-9 go to the smallest window.
    """
    windows = sorted({int(w) for w in w_range})
    if not windows:
        raise DomainError("empty window range")
    if windows[0] < 1:
        raise DomainError("windows must be >= 1")
    sweep = []
    for w in windows:
        thr, resp = measure_fixed_window(config, w, packets)
        sweep.append(KneePoint(w, thr, resp, power(thr, resp, params)))
    best = max(p.power for p in sweep)
    knee = next(p for p in sweep if p.power >= best * (1 - 1e-9))
    return KneeEstimate(knee.window, knee.power, tuple(sweep))


def goals(config, knee: KneeEstimate) -> list[float]:
    """Equal share of the knee throughput for every user."""
    n = len(config.users)
    return [knee.throughput_at_knee / n] * n


# --- aggregation -----------------------------------------------------------------

@dataclass
class MetricCube:
    """Throughput values indexed as ``values[t, u, i, p]``."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 4:
            raise DomainError("cube must be four dimensional (time, user, replication, parameter)")

    @property
    def user_means(self) -> np.ndarray:      # T(u, i, p)
        return self.values.mean(axis=0)

    @property
    def time_variance(self) -> np.ndarray:
        return self.values.var(axis=0)

    @property
    def replication_means(self) -> np.ndarray:   # T(i, p)
        return self.user_means.mean(axis=0)

    @property
    def user_variance(self) -> np.ndarray:
        return self.user_means.var(axis=0)

    @property
    def parameter_means(self) -> np.ndarray:  # T(p)
        return self.replication_means.mean(axis=0)

    @property
    def replication_variance(self) -> np.ndarray:
        return self.replication_means.var(axis=0)


def build_cube(records: Sequence[Sequence], buckets: int = 50) -> MetricCube:
    """Cube from ``records[p][i]`` run records with equal user sets.

    Each run is cut into ``buckets`` equal spans from time zero to its end;
    a bucket's value is delivered reference-length packets per second.
    """
    n_p = len(records)
    n_i = len(records[0])
    user_ids = sorted(records[0][0].users)
    out = np.zeros((buckets, len(user_ids), n_i, n_p))
    for p, reps in enumerate(records):
        if len(reps) != n_i:
            raise DomainError("every parameter set needs the same replication count")
        for i, rec in enumerate(reps):
            if sorted(rec.users) != user_ids:
                raise DomainError("every run needs the same users")
            end = rec.end_time
            width = end / buckets
            ref = rec.config.ref_length
            col = {uid: k for k, uid in enumerate(user_ids)}
            for pkt in rec.packets:
                b = min(int(pkt.delivery_time / width), buckets - 1)
                out[b, col[pkt.user_id], i, p] += pkt.length / ref
            out[:, :, i, p] /= width
    return MetricCube(out)


@dataclass
class AggregateStats:
    efficiency: float
    fairness_variance: float
    scaled: list
    levels: dict = field(default_factory=dict)


def scale_and_aggregate(cube: MetricCube, user_goals: Sequence[float]) -> AggregateStats:
    """Scale each user's mean throughput by its goal.

    Efficiency is the mean of the scaled values and fairness the population
    variance across users (zero when every user meets the same fraction of
    its goal).
    """
    goals_arr = np.asarray(user_goals, dtype=float)
    if np.any(goals_arr <= 0):
        raise DomainError("goals must be positive")
    actual = cube.values.mean(axis=(0, 2, 3))
    if actual.shape != goals_arr.shape:
        raise DomainError("one goal per user is required")
    scaled = actual / goals_arr
    levels = {
        "T(u,i,p)": cube.user_means, "var_time": cube.time_variance,
        "T(i,p)": cube.replication_means, "var_users": cube.user_variance,
        "T(p)": cube.parameter_means, "var_replications": cube.replication_variance,
    }
    return AggregateStats(float(scaled.mean()), float(scaled.var()), scaled.tolist(), levels)


def scaled_stats(throughputs: Sequence[float], user_goals: Sequence[float]) -> tuple[float, float]:
    """(efficiency, population variance) of throughput / goal over users."""
    scaled = [x / g for x, g in zip(throughputs, user_goals)]
    mean = sum(scaled) / len(scaled)
    return mean, sum((s - mean) ** 2 for s in scaled) / len(scaled)


def time_weighted_stats(samples: Sequence[tuple], t_lo: float, t_hi: float,
                        initial: Optional[float] = None) -> tuple[float, float]:
    """Mean and variance over [t_lo, t_hi] of a right-continuous step function.

    ``samples`` are (time, value) pairs in time order; the value holds until
    the next sample.  ``initial`` is the value before the first sample.
    """
    if not t_hi > t_lo:
        raise DomainError("empty interval")
    current = initial
    segments = []
    prev_t = t_lo
    for t, v in samples:
        if t <= t_lo:
            current = v
            continue
        if t >= t_hi:
            break
        segments.append((t - prev_t, current))
        prev_t, current = t, v
    segments.append((t_hi - prev_t, current))
    if any(v is None for _, v in segments):
        raise DomainError("step function undefined at the start of the interval")
    total = t_hi - t_lo
    mean = sum(d * v for d, v in segments) / total
    var = sum(d * (v - mean) ** 2 for d, v in segments) / total
    return mean, var
