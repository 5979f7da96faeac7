"""
Configuration types and small helpers for the path simulator.

A path is a serial list of FIFO queues with unbounded buffers.  A node's
service rate is expressed in reference-length packets per second, so a
packet of length ``L`` takes ``L / (rate * reference_length)`` seconds.  A
satellite hop is an ordinary node followed by a constant propagation delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError
from .feedback import DetectorConfig, SelectorPolicy
from .policy import PolicyParams


@dataclass(frozen=True)
class PathNode:
    node_id: int
    service_rate: float
    propagation_delay: float = 0.0


class LengthKind(str, Enum):
    CONSTANT = "constant"
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"
    BIMODAL = "bimodal"
    ERLANG = "erlang"


# parameter names accepted by each distribution, in canonical order
LENGTH_PARAMS = {
    LengthKind.CONSTANT: ("length",),
    LengthKind.UNIFORM: ("lo", "hi"),
    LengthKind.EXPONENTIAL: ("mean",),
    LengthKind.BIMODAL: ("l1", "l2", "p1"),
    LengthKind.ERLANG: ("mean", "k"),
}


@dataclass(frozen=True)
class PacketLengthModel:
    kind: LengthKind = LengthKind.CONSTANT
    params: tuple = (("length", 1.0),)

    def __post_init__(self):
        object.__setattr__(self, "kind", LengthKind(self.kind))
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", tuple(self.params.items()))

    @classmethod
    def constant(cls, length=1.0):
        return cls(LengthKind.CONSTANT, (("length", float(length)),))

    @classmethod
    def uniform(cls, lo, hi):
        return cls(LengthKind.UNIFORM, (("lo", float(lo)), ("hi", float(hi))))

    @classmethod
    def exponential(cls, mean=1.0):
        return cls(LengthKind.EXPONENTIAL, (("mean", float(mean)),))

    @classmethod
    def bimodal(cls, l1, l2, p1):
        return cls(LengthKind.BIMODAL, (("l1", float(l1)), ("l2", float(l2)), ("p1", float(p1))))

    @classmethod
    def erlang(cls, mean, k):
        return cls(LengthKind.ERLANG, (("mean", float(mean)), ("k", int(k))))

    @property
    def p(self) -> dict:
        return dict(self.params)

    def validate(self) -> None:
        p = self.p
        expected = LENGTH_PARAMS[self.kind]
        if set(p) != set(expected):
            raise ConfigError(f"{self.kind.value} lengths need parameters {expected}, "
                              f"got {tuple(p)}")
        for name, value in p.items():
            if name == "p1":
                if not 0 <= value <= 1:
                    raise ConfigError(f"p1 must lie in [0, 1], got {value}")
            elif not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be positive and finite, got {value}")
        if self.kind is LengthKind.UNIFORM and p["hi"] < p["lo"]:
            raise ConfigError(f"uniform hi ({p['hi']}) below lo ({p['lo']})")
        if self.kind is LengthKind.ERLANG and (int(p["k"]) != p["k"] or p["k"] < 1):
            raise ConfigError(f"erlang shape must be an integer >= 1, got {p['k']}")

    @property
    def mean(self) -> float:
        p = self.p
        if self.kind is LengthKind.CONSTANT:
            return p["length"]
        if self.kind is LengthKind.UNIFORM:
            return (p["lo"] + p["hi"]) / 2
        if self.kind is LengthKind.BIMODAL:
            return p["p1"] * p["l1"] + (1 - p["p1"]) * p["l2"]
        return p["mean"]


@dataclass(frozen=True)
class UserSpec:
    user_id: int
    total_packets: int
    # None starts the user at time zero; otherwise (predecessor id, fraction).
    start_after: Optional[tuple] = None
    w_max: int = 1_000_000
    source_rate: float = math.inf
    initial_window: float = 1.0


@dataclass(frozen=True)
class TransientSpec:
    enabled: bool = False
    target_node: int = 0
    middle_rate: float = 1.0


@dataclass(frozen=True)
class PolicyBundle:
    params: PolicyParams = field(default_factory=PolicyParams)
    cutoff: float = 0.5
    # None gives uniform weights; a base > 1 weights recent bits more.
    recent_weight_base: Optional[float] = None
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    selector: SelectorPolicy = SelectorPolicy.ALL_USERS
    # False keeps every window fixed at its initial value.
    adaptive: bool = True


@dataclass(frozen=True)
class SimConfig:
    path: tuple
    users: tuple
    length_model: PacketLengthModel = field(default_factory=PacketLengthModel)
    transient: TransientSpec = field(default_factory=TransientSpec)
    policy: PolicyBundle = field(default_factory=PolicyBundle)
    run_seed: int = 0
    # None means "the mean of the length model".
    reference_length: Optional[float] = None
    warmup_round_trips: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(self.path))
        object.__setattr__(self, "users", tuple(self.users))

    @property
    def ref_length(self) -> float:
        if self.reference_length is not None:
            return self.reference_length
        return self.length_model.mean

    @property
    def total_packets(self) -> int:
        return sum(u.total_packets for u in self.users)

    def bottleneck(self) -> int:
        """Index of the slowest node (first one on ties)."""
        rates = [n.service_rate for n in self.path]
        return rates.index(min(rates))

    def base_round_trip(self) -> float:
        """Round trip of a reference-length packet through an empty path."""
        return sum(service_time(n, self.ref_length, self.ref_length) + n.propagation_delay
                   for n in self.path)

    def validate(self) -> None:
        if not self.path:
            raise ConfigError("path needs at least one node")
        if not self.users:
            raise ConfigError("at least one user is required")
        for i, node in enumerate(self.path):
            if node.node_id != i:
                raise ConfigError(f"node ids must be 0..n-1 in path order, "
                                  f"got {node.node_id} at {i}")
            if not (node.service_rate > 0 and math.isfinite(node.service_rate)):
                raise ConfigError(f"node {i}: service_rate must be positive, "
                                  f"got {node.service_rate}")
            if not (node.propagation_delay >= 0 and math.isfinite(node.propagation_delay)):
                raise ConfigError(f"node {i}: propagation_delay must be >= 0")
        self.length_model.validate()
        if self.reference_length is not None and not self.reference_length > 0:
            raise ConfigError("reference_length must be positive")
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate user id in {ids}")
        for u in self.users:
            if u.total_packets < 1:
                raise ConfigError(f"user {u.user_id}: total_packets must be >= 1")
            if u.w_max < 1:
                raise ConfigError(f"user {u.user_id}: w_max must be >= 1")
            if not u.initial_window >= 1:
                raise ConfigError(f"user {u.user_id}: initial_window must be >= 1")
            if not u.source_rate > 0:
                raise ConfigError(f"user {u.user_id}: source_rate must be positive")
            if u.start_after is not None:
                pred, frac = u.start_after
                if pred not in ids or pred == u.user_id:
                    raise ConfigError(f"user {u.user_id}: unknown predecessor {pred}")
                if not 0 < frac < 1:
                    raise ConfigError(f"user {u.user_id}: start fraction must lie in (0, 1)")
        _check_trigger_cycles(self.users)
        t = self.transient
        if t.enabled:
            if not 0 <= t.target_node < len(self.path):
                raise ConfigError(f"transient target node {t.target_node} not on path")
            if not t.middle_rate > 0:
                raise ConfigError("transient middle_rate must be positive")
        try:
            self.policy.params.validate()
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 < self.policy.cutoff <= 1:
            raise ConfigError("cutoff must lie in (0, 1]")
        if self.policy.recent_weight_base is not None and self.policy.recent_weight_base < 1:
            raise ConfigError("recent_weight_base must be >= 1")
        if self.warmup_round_trips < 0:
            raise ConfigError("warmup_round_trips must be >= 0")


def _check_trigger_cycles(users) -> None:
    pred = {u.user_id: (u.start_after[0] if u.start_after else None) for u in users}
    for uid in pred:
        seen = {uid}
        cur = pred[uid]
        while cur is not None:
            if cur in seen:
                raise ConfigError(f"start triggers form a cycle through user {uid}")
            seen.add(cur)
            cur = pred[cur]


def service_time(node: PathNode, packet_length: float, reference_length: float = 1.0) -> float:
    if not packet_length > 0:
        raise DomainError(f"packet length must be positive, got {packet_length}")
    return packet_length / (node.service_rate * reference_length)


def sample_packet_length(model: PacketLengthModel, rng: np.random.Generator) -> float:
    """Draw one packet length.  The constant model never touches ``rng``."""
    p = model.p
    kind = model.kind
    if kind is LengthKind.CONSTANT:
        return p["length"]
    if kind is LengthKind.UNIFORM:
        length = rng.uniform(p["lo"], p["hi"])
    elif kind is LengthKind.EXPONENTIAL:
        length = rng.exponential(p["mean"])
    elif kind is LengthKind.BIMODAL:
        length = p["l1"] if rng.random() < p["p1"] else p["l2"]
    else:
        k = int(p["k"])
        length = rng.gamma(k, p["mean"] / k)
    # the continuous draws can underflow to zero in principle
    return float(length) if length > 0 else float(np.nextafter(0.0, 1.0))


def effective_rate(node: PathNode, transient: TransientSpec, delivered_fraction: float) -> float:
    if (transient.enabled and transient.target_node == node.node_id
            and 1 / 3 <= delivered_fraction < 2 / 3):
        return transient.middle_rate
    return node.service_rate


def user_stream(run_seed: int, user_id: int) -> np.random.Generator:
    """Independent PCG64 stream for one user's packet lengths.

    Streams are keyed by (run_seed, user_id) through numpy's SeedSequence, so
    a user's draws do not depend on how many other users exist.
    """
    seq = np.random.SeedSequence(run_seed, spawn_key=(user_id,))
    return np.random.Generator(np.random.PCG64(seq))
