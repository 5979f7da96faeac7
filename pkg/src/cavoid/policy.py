"""
User-side window control.

A source collects the congestion bits returned with its acknowledgments,
filters them into a load level, turns the level into a direction and moves
its window with one of the increase/decrease rules below.  Two window values
are kept: the computed window ``w`` (real) and the implemented window
``w_used`` (integer, the number of packets actually allowed in flight).

Window updates happen once every two window turns: the first turn after an
adjustment is discarded because its feedback still reflects the old window,
and the bits of the second turn drive the next decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from .errors import DomainError, NoSignalError


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"
    NONE = "none"


class LoadLevel(str, Enum):
    OVERLOAD = "overload"
    UNDERLOAD = "underload"


class Kind(str, Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


class Rounding(str, Enum):
    ROUND_HALF_UP = "round_half_up"
    TRUNCATE = "truncate"


class Phase(str, Enum):
    SETTLING = "settling"
    MEASURING = "measuring"


def round_half_up(x: float) -> int:
    """Entier(x + 0.5): the largest integer not above ``x + 0.5``."""
    return math.floor(x + 0.5)


def implemented(w: float, rounding: Rounding, w_max: int) -> int:
    if rounding is Rounding.TRUNCATE:
        used = math.floor(w)
    else:
        used = round_half_up(w)
    return min(max(used, 1), w_max)


@dataclass(frozen=True)
class WindowState:
    w: float
    w_used: int
    w_max: int = 1_000_000
    last_direction: Direction = Direction.NONE

    @classmethod
    def initial(cls, w: float, w_max: int = 1_000_000,
                rounding: Rounding = Rounding.ROUND_HALF_UP) -> "WindowState":
        w = min(max(float(w), 1.0), float(w_max))
        return cls(w=w, w_used=implemented(w, rounding, w_max), w_max=w_max)


@dataclass(frozen=True)
class BirthPolicy:
    """Larger increase amount used only until the first decrease."""
    initial_k1: float = 2.0
    active: bool = True


@dataclass(frozen=True)
class PolicyParams:
    increase_kind: Kind = Kind.ADDITIVE
    decrease_kind: Kind = Kind.MULTIPLICATIVE
    k1: float = 1.0
    k2: float = 1.0
    r1: float = 1.5
    r2: float = 0.875
    rounding: Rounding = Rounding.ROUND_HALF_UP
    birth: Optional[BirthPolicy] = None
    kary_k: Optional[float] = None

    def __post_init__(self):
        # Accept plain strings from config files and CLI flags.
        object.__setattr__(self, "increase_kind", Kind(self.increase_kind))
        object.__setattr__(self, "decrease_kind", Kind(self.decrease_kind))
        object.__setattr__(self, "rounding", Rounding(self.rounding))

    def validate(self) -> None:
        if not self.k1 > 0:
            raise DomainError(f"k1 must be positive, got {self.k1}")
        if not self.k2 > 0:
            raise DomainError(f"k2 must be positive, got {self.k2}")
        if not self.r1 > 1:
            raise DomainError(f"r1 must exceed 1, got {self.r1}")
        if not 0 < self.r2 < 1:
            raise DomainError(f"r2 must lie in (0, 1), got {self.r2}")
        if self.birth is not None and not self.birth.initial_k1 > 0:
            raise DomainError("birth initial_k1 must be positive")
        if self.kary_k is not None and not self.kary_k > 1:
            raise DomainError(f"k-ary k must exceed 1, got {self.kary_k}")

    @property
    def increase_amount(self) -> float:
        if self.birth is not None and self.birth.active:
            return self.birth.initial_k1
        return self.k1


# Named policy combinations used by the oracle CLI and the sweeps.
NAMED_POLICIES = {
    "aiad": dict(increase_kind=Kind.ADDITIVE, decrease_kind=Kind.ADDITIVE),
    "aimd": dict(increase_kind=Kind.ADDITIVE, decrease_kind=Kind.MULTIPLICATIVE),
    "miad": dict(increase_kind=Kind.MULTIPLICATIVE, decrease_kind=Kind.ADDITIVE),
    "mimd": dict(increase_kind=Kind.MULTIPLICATIVE, decrease_kind=Kind.MULTIPLICATIVE),
    "kary": dict(increase_kind=Kind.ADDITIVE, decrease_kind=Kind.MULTIPLICATIVE, kary_k=2.0),
}


def named_policy(name: str, **overrides) -> PolicyParams:
    try:
        base = NAMED_POLICIES[name.lower()]
    except KeyError:
        raise DomainError(f"unknown policy {name!r}; "
                          f"expected one of {sorted(NAMED_POLICIES)}") from None
    return PolicyParams(**{**base, **overrides})


# --- signal filter and decision ------------------------------------------------

def recent_weights(n: int, base: float) -> list[float]:
    """Exponential weights, oldest bit first, newest bit heaviest."""
    if base < 1:
        raise DomainError(f"weight base must be >= 1, got {base}")
    return [base ** i for i in range(n)]


def filter_signals(bits: Sequence[bool], cutoff: float = 0.5,
                   weights: Optional[Sequence[float]] = None) -> LoadLevel:
    """Overload iff the (weighted) share of set bits reaches ``cutoff``."""
    if not bits:
        raise NoSignalError("no feedback bits collected")
    if not 0 < cutoff <= 1:
        raise DomainError(f"cutoff must lie in (0, 1], got {cutoff}")
    if weights is None:
        weights = [1.0] * len(bits)
    elif len(weights) != len(bits):
        raise DomainError("weights and bits differ in length")
    elif any(not wt > 0 for wt in weights):
        raise DomainError("weights must be positive")
    set_weight = sum(wt for b, wt in zip(bits, weights) if b)
    if set_weight >= cutoff * sum(weights):
        return LoadLevel.OVERLOAD
    return LoadLevel.UNDERLOAD


def decide(level: LoadLevel) -> Direction:
    return Direction.DOWN if LoadLevel(level) is LoadLevel.OVERLOAD else Direction.UP


# --- increase / decrease ---------------------------------------------------------

def increase_default(state: WindowState) -> WindowState:
    """Add one, but never more than one above the window last put in use."""
    w = state.w + 1
    if w > state.w_used + 1:
        w = float(state.w_used + 1)
    if w > state.w_max:
        w = float(state.w_max)
    return replace(state, w=w, w_used=round_half_up(w), last_direction=Direction.UP)


def decrease_default(state: WindowState) -> WindowState:
    """Multiply by 0.875, floored at one packet."""
    w = 0.875 * state.w
    if w < 1:
        w = 1.0
    return replace(state, w=w, w_used=round_half_up(w), last_direction=Direction.DOWN)


def next_window(params: PolicyParams, up: bool, w: float, w_used: int, w_max: int) -> float:
    """Scalar core of ``apply_policy``; ``params`` must already be valid."""
    if up:
        if params.increase_kind is Kind.ADDITIVE:
            step = params.increase_amount
            new = w + step
            cap = w_used + step
        else:
            new = w * params.r1
            cap = w_used * params.r1
        if w_used < implemented(w, params.rounding, w_max):
            new = min(new, cap)
        new = min(new, float(w_max))
    elif params.decrease_kind is Kind.ADDITIVE:
        new = w - params.k2
    else:
        new = w * params.r2
    new = max(new, 1.0)
    if params.rounding is Rounding.TRUNCATE:
        new = float(math.floor(new))
    return new


def apply_policy(params: PolicyParams, direction: Direction,
                 state: WindowState) -> WindowState:
    """One increase or decrease step.

    A user whose implemented window lags its computed window (it could not
    put the last increase into use) may grow to at most ``w_used + k1``, or
    ``w_used * r1`` under multiplicative increase.  Every increase obeys the
    destination limit and no decrease goes below 1.  Under truncation the
    window is kept integer valued throughout.
    """
    params.validate()
    direction = Direction(direction)
    if direction is Direction.NONE:
        raise DomainError("direction must be up or down")
    w = next_window(params, direction is Direction.UP, state.w, state.w_used, state.w_max)
    return replace(state, w=w, w_used=implemented(w, params.rounding, state.w_max),
                   last_direction=direction)


def birth_step(params: PolicyParams, state: WindowState,
               direction: Direction) -> tuple[WindowState, PolicyParams]:
    """Apply one step under a birth policy; the first decrease ends it for good."""
    direction = Direction(direction)
    if direction is Direction.DOWN and params.birth is not None and params.birth.active:
        params = replace(params, birth=replace(params.birth, active=False))
    return apply_policy(params, direction, state), params


@dataclass(frozen=True)
class KaryState:
    w_low: float
    w_high: float


def kary_next(ks: KaryState, k: float) -> float:
    if not k > 1:
        raise DomainError(f"k must exceed 1, got {k}")
    if ks.w_low > ks.w_high:
        raise DomainError("w_low must not exceed w_high")
    return ks.w_low + (ks.w_high - ks.w_low) / k


# --- combined per-user controller state -----------------------------------------

@dataclass(frozen=True)
class ControlState:
    """Everything one user needs to take its next step."""
    window: WindowState
    params: PolicyParams
    # Windows at the most recent direction changes: (last up-turn, last down-turn).
    turns: tuple = (None, None)

    @classmethod
    def initial(cls, params: PolicyParams, w: float = 1.0,
                w_max: int = 1_000_000) -> "ControlState":
        return cls(window=WindowState.initial(w, w_max, params.rounding), params=params)


def control_step(cs: ControlState, direction: Direction,
                 used_cap: Optional[int] = None) -> ControlState:
    """Move one user's window in ``direction``.

    ``used_cap`` is the largest window the user actually managed to keep in
    flight during the last cycle.  A source that could not fill its window is
    capped by that figure instead of ``w_used``.
    """
    direction = Direction(direction)
    state = cs.window
    if direction is Direction.UP and used_cap is not None and used_cap < state.w_used:
        state = replace(state, w_used=max(int(used_cap), 1))
    params = cs.params
    if params.kary_k is None:
        new_state, params = birth_step(params, state, direction)
        return ControlState(window=new_state, params=params, turns=cs.turns)

    up_turn, down_turn = cs.turns
    changed = state.last_direction not in (Direction.NONE, direction)
    if changed:
        if direction is Direction.UP:
            up_turn = state.w
        else:
            down_turn = state.w
    if changed and up_turn is not None and down_turn is not None:
        lo, hi = min(up_turn, down_turn), max(up_turn, down_turn)
        target = kary_next(KaryState(lo, hi), params.kary_k)
        if direction is Direction.UP:
            if state.w_used < implemented(state.w, params.rounding, state.w_max):
                target = min(target, state.w_used + params.increase_amount)
            target = min(target, float(state.w_max))
        target = max(target, 1.0)
        if params.rounding is Rounding.TRUNCATE:
            target = float(math.floor(target))
        new_state = replace(state, w=target,
                            w_used=implemented(target, params.rounding, state.w_max),
                            last_direction=direction)
    else:
        new_state, params = birth_step(params, state, direction)
    return ControlState(window=new_state, params=params, turns=(up_turn, down_turn))


# --- update frequency ------------------------------------------------------------

@dataclass(frozen=True)
class CycleLedger:
    phase: Phase
    packets_remaining_in_phase: int
    bits_collected: tuple = field(default=())

    @classmethod
    def start(cls, w_used: int) -> "CycleLedger":
        return cls(Phase.SETTLING, max(int(w_used), 1))


def cycle_advance(ledger: CycleLedger, ack_bit: bool,
                  w_used: int) -> tuple[CycleLedger, Optional[tuple]]:
    """Account for one acknowledgment.

    Returns the updated ledger and, when a measuring turn has just completed,
    the bits of that turn.  The caller then adjusts the window and restarts
    the ledger with ``CycleLedger.start(new_w_used)``.
    """
    remaining = ledger.packets_remaining_in_phase - 1
    if ledger.phase is Phase.SETTLING:
        if remaining > 0:
            return replace(ledger, packets_remaining_in_phase=remaining), None
        return CycleLedger(Phase.MEASURING, max(int(w_used), 1)), None
    bits = ledger.bits_collected + (bool(ack_bit),)
    if remaining > 0:
        return CycleLedger(Phase.MEASURING, remaining, bits), None
    return CycleLedger.start(w_used), bits
