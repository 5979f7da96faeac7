"""
Test-sequence catalog.

A test identifier has three or four characters: path class, length class,
user count and an optional modifier, e.g. ``ND9`` or ``MD1T``.  The user
count may be written as ``n`` followed by digits (``MDn4``), or as a bare
``n``, in which case ``DEFAULT_N`` users are simulated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from ..errors import ConfigError
from ..policy import round_half_up
from ..sim import (PacketLengthModel, PathNode, PolicyBundle, SimConfig, TransientSpec,
                   UserSpec)

DEFAULT_N = 4

# Service rates in reference-length packets per second.
HOMOGENEOUS_RATES = (10.0, 10.0, 10.0, 10.0)
NON_HOMOGENEOUS_RATES = (20.0, 10.0, 5.0, 10.0)
# ND9: bottleneck raised from 5 to 7 so that the knee total window is 3.
ND9_RATES = (20.0, 10.0, 7.0, 10.0)
SATELLITE_RATE = 10.0
SATELLITE_DELAY = 0.5

PACKETS_PER_USER = 2000
TRANSIENT_PACKETS = 3000
TRANSIENT_MIDDLE_RATE = 8.0
STAGGER_FRACTION = 0.10
SOURCE_RATE_FACTOR = 0.5
HIGH_START_FACTOR = 4


class PathClass(str, Enum):
    H = "H"
    N = "N"
    S = "S"
    M = "M"


class LengthClass(str, Enum):
    D = "D"
    R = "R"


class Modifier(str, Enum):
    T = "T"
    H = "H"
    S = "S"
    B = "B"


_ID_RE = re.compile(r"^([A-Z])([A-Z])(?:(\d+)|n(\d*))([A-Z])?$")


@dataclass(frozen=True)
class TestId:
    path_class: PathClass
    length_class: LengthClass
    n_users: int
    modifier: Optional[Modifier] = None
    # True when the count was written with the ``n`` placeholder
    generic: bool = False

    __test__ = False  # keep pytest from collecting this class

    @classmethod
    def parse(cls, text: str, default_n: int = DEFAULT_N) -> "TestId":
        m = _ID_RE.match(text.strip())
        if m is None:
            raise ConfigError(f"malformed test id {text!r}: expected path class, "
                              "length class, user count and optional modifier, e.g. MD1T")
        path, length, digits, n_digits, mod = m.groups()
        if path not in PathClass.__members__:
            raise ConfigError(f"unknown path class {path!r} in {text!r}; valid classes: "
                              f"{', '.join(PathClass.__members__)}")
        if length not in LengthClass.__members__:
            raise ConfigError(f"unknown length class {length!r} in {text!r}; valid classes: "
                              f"{', '.join(LengthClass.__members__)}")
        if mod is not None and mod not in Modifier.__members__:
            raise ConfigError(f"unknown modifier {mod!r} in {text!r}; valid modifiers: "
                              f"{', '.join(Modifier.__members__)}")
        generic = digits is None
        n = int(digits) if digits is not None else (int(n_digits) if n_digits else default_n)
        if n < 1:
            raise ConfigError(f"user count must be positive in {text!r}")
        return cls(PathClass(path), LengthClass(length), n,
                   Modifier(mod) if mod else None, generic)

    def __str__(self) -> str:
        count = f"n{self.n_users}" if self.generic else str(self.n_users)
        return f"{self.path_class.value}{self.length_class.value}{count}" \
               f"{self.modifier.value if self.modifier else ''}"


def build_path(path_class: PathClass, n_users: int = 1) -> tuple:
    path_class = PathClass(path_class)
    if path_class in (PathClass.H, PathClass.S):
        rates = HOMOGENEOUS_RATES
    elif path_class is PathClass.N and n_users == 9:
        rates = ND9_RATES
    else:
        rates = NON_HOMOGENEOUS_RATES
    nodes = [PathNode(i, r) for i, r in enumerate(rates)]
    if path_class in (PathClass.S, PathClass.M):
        nodes.append(PathNode(len(nodes), SATELLITE_RATE, SATELLITE_DELAY))
    return tuple(nodes)


def pipe_size(path) -> float:
    """Bottleneck rate times the empty-path round trip, in packets."""
    rtt = sum(1.0 / n.service_rate + n.propagation_delay for n in path)
    return min(n.service_rate for n in path) * rtt


def nominal_knee(path) -> int:
    return max(1, round_half_up(pipe_size(path)))


def build_test_config(test_id, run_seed: int = 0,
                      policy: Optional[PolicyBundle] = None) -> SimConfig:
    if isinstance(test_id, str):
        test_id = TestId.parse(test_id)
    path = build_path(test_id.path_class, test_id.n_users)
    if test_id.length_class is LengthClass.D:
        lengths = PacketLengthModel.constant(1.0)
    else:
        lengths = PacketLengthModel.exponential(1.0)
    mod = test_id.modifier
    packets = TRANSIENT_PACKETS if mod is Modifier.T else PACKETS_PER_USER
    base = UserSpec(0, packets)
    if mod is Modifier.H:
        base = replace(base, initial_window=float(HIGH_START_FACTOR * nominal_knee(path)))
    if mod is Modifier.B:
        bottleneck = min(n.service_rate for n in path)
        base = replace(base, source_rate=SOURCE_RATE_FACTOR * bottleneck)
    users = []
    for i in range(test_id.n_users):
        start = (i - 1, STAGGER_FRACTION) if mod is Modifier.S and i > 0 else None
        users.append(replace(base, user_id=i, start_after=start))
    transient = TransientSpec()
    if mod is Modifier.T:
        rates = [n.service_rate for n in path]
        transient = TransientSpec(True, rates.index(min(rates)), TRANSIENT_MIDDLE_RATE)
    cfg = SimConfig(path=path, users=tuple(users), length_model=lengths,
                    transient=transient, policy=policy or PolicyBundle(),
                    run_seed=run_seed)
    cfg.validate()
    return cfg
