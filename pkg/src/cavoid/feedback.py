"""
Network-side policies: congestion detection, feedback filtering, feedback
selection and stamping of the forward congestion bit.

Each node keeps a low-pass filtered load sample.  Every packet arriving at a
node updates the filter; if the filtered value reaches the threshold the node
is overloaded and sets the bit in the packet header.  The bit is never
cleared further down the path, and the destination hands it back to the
source with the acknowledgment.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

from .errors import DomainError


class MetricKind(str, Enum):
    QUEUE_LENGTH = "queue_length"
    UTILIZATION = "utilization"


class SelectorPolicy(str, Enum):
    ALL_USERS = "all_users"


@dataclass(frozen=True)
class DetectorConfig:
    """Detector settings shared by every node of a path."""
    metric_kind: MetricKind = MetricKind.QUEUE_LENGTH
    gain: float = 1.0
    threshold: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "metric_kind", MetricKind(self.metric_kind))
        if not 0 < self.gain <= 1:
            raise DomainError(f"gain must lie in (0, 1], got {self.gain}")
        if self.threshold < 0:
            raise DomainError(f"threshold must be non-negative, got {self.threshold}")

    def state_for(self, node_id: int) -> "DetectorState":
        return DetectorState(node_id, 0.0, self.gain, self.threshold, self.metric_kind)


@dataclass(frozen=True)
class DetectorState:
    node_id: int
    ewma_value: float = 0.0
    gain: float = 1.0
    threshold: float = 1.0
    metric_kind: MetricKind = MetricKind.QUEUE_LENGTH


def ewma_update(avg: float, sample: float, gain: float) -> float:
    """Exponentially weighted average: ``(1 - gain) * avg + gain * sample``."""
    if not 0 < gain <= 1:
        raise DomainError(f"gain must lie in (0, 1], got {gain}")
    if gain == 1:
        return sample
    value = avg + gain * (sample - avg)
    # keep the result inside [avg, sample] despite rounding
    lo, hi = (avg, sample) if avg <= sample else (sample, avg)
    return min(max(value, lo), hi)


def detect_overload(state: DetectorState, raw_sample: float) -> tuple[bool, DetectorState]:
    value = ewma_update(state.ewma_value, raw_sample, state.gain)
    return value >= state.threshold, replace(state, ewma_value=value)


def stamp(bit: bool, node_overloaded: bool) -> bool:
    return bool(bit) or bool(node_overloaded)


def select_recipients(policy: SelectorPolicy, users_on_node: Iterable[int]) -> frozenset:
    if SelectorPolicy(policy) is SelectorPolicy.ALL_USERS:
        return frozenset(users_on_node)
    raise DomainError(f"unsupported selector {policy!r}")  # pragma: no cover
