"""
Event-driven simulation of window-controlled sources sharing one path.

Time is kept internally as integer nanoseconds so that event ties are exact;
every time in the returned :class:`RunRecord` is converted back to seconds.
Events at the same instant are ordered by (node index, departures before
arrivals, insertion order), which keeps runs reproducible bit for bit.

Acknowledgments are not simulated as traffic.  The source learns of a
delivery at the instant the last node (plus any trailing propagation delay)
hands the packet to the destination, and receives the packet's congestion
bit at the same moment.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .feedback import MetricKind, detect_overload, select_recipients, stamp
from .policy import (ControlState, CycleLedger, Direction, control_step, cycle_advance,
                     decide, filter_signals, recent_weights)
from .sim import SimConfig, effective_rate, sample_packet_length, user_stream

TICKS_PER_SECOND = 10 ** 9

_DEPART, _ARRIVE, _DELIVER, _SOURCE_READY = range(4)


def _to_ticks(seconds: float) -> int:
    return round(seconds * TICKS_PER_SECOND)


def _to_seconds(ticks: int) -> float:
    return ticks / TICKS_PER_SECOND


@dataclass(frozen=True)
class Hop:
    node_id: int
    arrive_time: float
    depart_time: float
    arrive_order: int
    depart_order: int
    queue_seen: int


@dataclass(frozen=True)
class PacketRecord:
    user_id: int
    seq: int
    length: float
    send_time: float
    delivery_time: float
    bit: bool
    send_order: int
    deliver_order: int
    hops: tuple
    # window state right after the acknowledgment was processed
    w_after_ack: float
    w_used_after_ack: int
    bottleneck_queue: int


@dataclass(frozen=True)
class WindowSample:
    time: float
    w_used: int
    w: float


@dataclass(frozen=True)
class Adjustment:
    time: float
    ack_index: int
    direction: Direction
    w_before: float
    w_used_before: int
    used_cap: int
    w_after: float
    w_used_after: int
    n_bits: int
    bit_fraction: float


@dataclass
class UserSummary:
    user_id: int
    start_time: Optional[float] = None
    warmup_end: Optional[float] = None
    first_send: Optional[float] = None
    last_delivery: Optional[float] = None
    sent: int = 0
    delivered: int = 0
    delivered_length: float = 0.0

    @property
    def elapsed(self) -> float:
        if self.first_send is None or self.last_delivery is None:
            return 0.0
        return self.last_delivery - self.first_send


@dataclass
class RunRecord:
    config: SimConfig
    packets: list = field(default_factory=list)
    windows: dict = field(default_factory=dict)
    adjustments: dict = field(default_factory=dict)
    queue_lengths: list = field(default_factory=list)
    users: dict = field(default_factory=dict)
    end_time: float = 0.0
    events: int = 0

    def user_packets(self, user_id: int) -> list:
        return [p for p in self.packets if p.user_id == user_id]


class _Packet:
    __slots__ = ("user", "seq", "length", "send_tick", "send_order", "bit", "hops")

    def __init__(self, user, seq, length, send_tick, send_order):
        self.user = user
        self.seq = seq
        self.length = length
        self.send_tick = send_tick
        self.send_order = send_order
        self.bit = False
        self.hops = []


class _User:
    def __init__(self, spec, config: SimConfig):
        self.spec = spec
        params = config.policy.params
        self.ctrl = ControlState.initial(params, spec.initial_window, spec.w_max)
        self.ledger = CycleLedger.start(self.ctrl.window.w_used)
        self.rng = user_stream(config.run_seed, spec.user_id)
        self.active = False
        self.sent = 0
        self.outstanding = 0
        self.max_inflight = 0
        self.acks = 0
        self.source_free_at = 0
        self.ready_pending = False
        self.summary = UserSummary(spec.user_id)
        self.windows = []
        self.adjustments = []


class _Engine:
    def __init__(self, config: SimConfig, check_invariants: bool):
        self.cfg = config
        self.check = check_invariants
        self.ref = config.ref_length
        self.nodes = list(config.path)
        self.n_nodes = len(self.nodes)
        self.prop_ticks = [_to_ticks(n.propagation_delay) for n in self.nodes]
        self.queues = [deque() for _ in self.nodes]
        self.detectors = [config.policy.detector.state_for(i) for i in range(self.n_nodes)]
        self.metric = config.policy.detector.metric_kind
        self.users = {u.user_id: _User(u, config) for u in config.users}
        self.followers = {}
        for u in config.users:
            if u.start_after is not None:
                self.followers.setdefault(u.start_after[0], []).append(u)
        self.total = config.total_packets
        self.delivered_total = 0
        self.in_transit = 0
        self.heap = []
        self.seq = 0
        self.order = 0
        self.now = 0
        self.bneck = config.bottleneck()
        self.record = RunRecord(config=config,
                                queue_lengths=[[] for _ in self.nodes])
        self.warmup = config.warmup_round_trips * config.base_round_trip()

    # --- scheduling ---------------------------------------------------------
    def _push(self, tick, node_rank, kind_rank, kind, a, b=None):
        heapq.heappush(self.heap, (tick, node_rank, kind_rank, self.seq, kind, a, b))
        self.seq += 1

    def _next_order(self):
        self.order += 1
        return self.order

    # --- users --------------------------------------------------------------
    def _activate(self, user: _User):
        user.active = True
        t = _to_seconds(self.now)
        user.summary.start_time = t
        user.summary.warmup_end = t + self.warmup
        w = user.ctrl.window
        user.windows.append(WindowSample(t, w.w_used, w.w))
        self._try_send(user)

    def _try_send(self, user: _User):
        spec = user.spec
        while (user.active and user.sent < spec.total_packets
               and user.outstanding < user.ctrl.window.w_used):
            if user.source_free_at > self.now:
                if not user.ready_pending:
                    user.ready_pending = True
                    self._push(user.source_free_at, -1, 0, _SOURCE_READY, user)
                return
            length = sample_packet_length(self.cfg.length_model, user.rng)
            pkt = _Packet(user, user.sent, length, self.now, self._next_order())
            user.sent += 1
            user.outstanding += 1
            user.max_inflight = max(user.max_inflight, user.outstanding)
            if user.summary.first_send is None:
                user.summary.first_send = _to_seconds(self.now)
            if math.isfinite(spec.source_rate):
                user.source_free_at = self.now + max(
                    1, _to_ticks(length / (spec.source_rate * self.ref)))
            self.in_transit += 1
            self._push(self.now, 0, 1, _ARRIVE, 0, pkt)
            self._check_triggers(user)

    def _check_triggers(self, user: _User):
        for spec in self.followers.get(user.spec.user_id, ()):
            follower = self.users[spec.user_id]
            if follower.active:
                continue
            needed = math.ceil(spec.start_after[1] * user.spec.total_packets)
            if user.sent >= needed:
                self._activate(follower)

    # --- network ------------------------------------------------------------
    def _service_ticks(self, k: int, pkt: _Packet) -> int:
        node = self.nodes[k]
        frac = self.delivered_total / self.total
        rate = effective_rate(node, self.cfg.transient, frac)
        return max(1, _to_ticks(pkt.length / (rate * self.ref)))

    def _arrive(self, k: int, pkt: _Packet):
        self.in_transit -= 1
        q = self.queues[k]
        if self.metric is MetricKind.QUEUE_LENGTH:
            raw = len(q)
        else:
            raw = 1 if q else 0
        overloaded, self.detectors[k] = detect_overload(self.detectors[k], raw)
        if overloaded:
            on_node = {p.user.spec.user_id for p in q}
            on_node.add(pkt.user.spec.user_id)
            if pkt.user.spec.user_id in select_recipients(self.cfg.policy.selector, on_node):
                pkt.bit = stamp(pkt.bit, True)
        pkt.hops.append([k, self.now, None, self._next_order(), None, len(q)])
        q.append(pkt)
        self.record.queue_lengths[k].append((_to_seconds(self.now), len(q)))
        if len(q) == 1:
            self._push(self.now + self._service_ticks(k, pkt), k, 0, _DEPART, k)

    def _depart(self, k: int):
        q = self.queues[k]
        pkt = q.popleft()
        hop = pkt.hops[-1]
        hop[2] = self.now
        hop[4] = self._next_order()
        self.record.queue_lengths[k].append((_to_seconds(self.now), len(q)))
        self.in_transit += 1
        arrival = self.now + self.prop_ticks[k]
        if k + 1 < self.n_nodes:
            self._push(arrival, k + 1, 1, _ARRIVE, k + 1, pkt)
        else:
            self._push(arrival, self.n_nodes, 1, _DELIVER, pkt)
        if q:
            self._push(self.now + self._service_ticks(k, q[0]), k, 0, _DEPART, k)

    def _deliver(self, pkt: _Packet):
        self.in_transit -= 1
        user = pkt.user
        user.outstanding -= 1
        user.acks += 1
        self.delivered_total += 1
        s = user.summary
        s.delivered += 1
        s.delivered_length += pkt.length / self.ref
        s.last_delivery = _to_seconds(self.now)
        deliver_order = self._next_order()
        if self.cfg.policy.adaptive:
            self._feedback(user, pkt.bit)
        w = user.ctrl.window
        self.record.packets.append(PacketRecord(
            user_id=user.spec.user_id, seq=pkt.seq, length=pkt.length,
            send_time=_to_seconds(pkt.send_tick), delivery_time=_to_seconds(self.now),
            bit=pkt.bit, send_order=pkt.send_order, deliver_order=deliver_order,
            hops=tuple(Hop(h[0], _to_seconds(h[1]), _to_seconds(h[2]), h[3], h[4], h[5])
                       for h in pkt.hops),
            w_after_ack=w.w, w_used_after_ack=w.w_used,
            bottleneck_queue=len(self.queues[self.bneck])))
        self._try_send(user)

    def _feedback(self, user: _User, bit: bool):
        w_used = user.ctrl.window.w_used
        user.ledger, bits = cycle_advance(user.ledger, bit, w_used)
        if bits is None:
            return
        policy = self.cfg.policy
        weights = None
        if policy.recent_weight_base is not None:
            weights = recent_weights(len(bits), policy.recent_weight_base)
        direction = decide(filter_signals(bits, policy.cutoff, weights))
        before = user.ctrl.window
        cap = user.max_inflight
        user.ctrl = control_step(user.ctrl, direction, used_cap=cap)
        after = user.ctrl.window
        user.ledger = CycleLedger.start(after.w_used)
        user.max_inflight = user.outstanding
        t = _to_seconds(self.now)
        user.adjustments.append(Adjustment(
            time=t, ack_index=user.acks, direction=direction,
            w_before=before.w, w_used_before=before.w_used, used_cap=min(cap, before.w_used),
            w_after=after.w, w_used_after=after.w_used,
            n_bits=len(bits), bit_fraction=sum(bits) / len(bits)))
        user.windows.append(WindowSample(t, after.w_used, after.w))

    # --- main loop ----------------------------------------------------------
    def run(self) -> RunRecord:
        for spec in self.cfg.users:
            if spec.start_after is None:
                self._activate(self.users[spec.user_id])
        events = 0
        while self.heap:
            tick, _, _, _, kind, a, b = heapq.heappop(self.heap)
            self.now = tick
            events += 1
            if kind == _ARRIVE:
                self._arrive(a, b)
            elif kind == _DEPART:
                self._depart(a)
            elif kind == _DELIVER:
                self._deliver(a)
            else:
                a.ready_pending = False
                self._try_send(a)
            if self.check:
                self._check_invariants()
        rec = self.record
        rec.events = events
        rec.end_time = _to_seconds(self.now)
        for uid, user in self.users.items():
            rec.windows[uid] = user.windows
            rec.adjustments[uid] = user.adjustments
            user.summary.sent = user.sent
            rec.users[uid] = user.summary
        return rec

    def _check_invariants(self):
        outstanding = sum(u.outstanding for u in self.users.values())
        in_network = sum(len(q) for q in self.queues) + self.in_transit
        assert outstanding == in_network, (outstanding, in_network)
        sent = sum(u.sent for u in self.users.values())
        assert sent == self.delivered_total + outstanding
        for u in self.users.values():
            # a decrease can leave more packets out than the new window allows,
            # but no packet is ever sent into a full window
            assert u.outstanding <= max(u.ctrl.window.w_used, u.max_inflight)


def run_simulation(config: SimConfig, check_invariants: bool = False) -> RunRecord:
    """Run one replication of ``config`` and return its full record."""
    config.validate()
    if not config.users:
        raise ConfigError("at least one user is required")
    return _Engine(config, check_invariants).run()
