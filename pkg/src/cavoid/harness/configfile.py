"""
Plain-text configuration documents.

A document is a sequence of ``[section]`` headers followed by
``key = value`` lines; ``#`` starts a comment.  ``[path]`` and ``[users]``
are required, the other sections fall back to defaults::

    [path]
    node = rate=20
    node = rate=10 delay=0.5

    [users]
    user = id=0 packets=2000
    user = id=1 packets=2000 start_after=0:0.1 source_rate=2.5

    [workload]
    model = exponential
    mean = 1.0
    seed = 7

    [transient]
    enabled = true
    target_node = 2
    middle_rate = 8

    [policy]
    increase = additive
    r2 = 0.875

Repeated ``node`` and ``user`` lines build the path and the user list in
order.  Every error carries the line number it was found on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..errors import ConfigError, DomainError
from ..feedback import DetectorConfig, MetricKind, SelectorPolicy
from ..policy import BirthPolicy, Kind, PolicyParams, Rounding
from ..sim import (LENGTH_PARAMS, LengthKind, PacketLengthModel, PathNode, PolicyBundle,
                   SimConfig, TransientSpec, UserSpec)

SECTIONS = ("path", "users", "workload", "transient", "policy")
REQUIRED = ("path", "users")


def _float(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("nan is not allowed")
    return value


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _optional(conv: Callable) -> Callable:
    def parse(text: str):
        return None if text.lower() == "none" else conv(text)
    return parse


def _start(text: str):
    if text.lower() == "none":
        return None
    pred, frac = text.split(":")
    return (_int(pred), _float(frac))


_NODE_KEYS = {"rate": _float, "delay": _float}
_USER_KEYS = {"id": _int, "packets": _int, "start_after": _start, "w_max": _int,
              "source_rate": _float, "initial_window": _float}
_WORKLOAD_KEYS = {"model": LengthKind, "seed": _int, "reference_length": _optional(_float),
                  "warmup_round_trips": _float,
                  **{name: _float for names in LENGTH_PARAMS.values() for name in names}}
_TRANSIENT_KEYS = {"enabled": _bool, "target_node": _int, "middle_rate": _float}
_POLICY_KEYS = {"increase": Kind, "decrease": Kind, "k1": _float, "k2": _float,
                "r1": _float, "r2": _float, "rounding": Rounding,
                "birth_k1": _optional(_float), "kary_k": _optional(_float),
                "cutoff": _float, "recent_weight_base": _optional(_float),
                "detector_metric": MetricKind, "detector_gain": _float,
                "detector_threshold": _float, "selector": SelectorPolicy,
                "adaptive": _bool}


@dataclass
class _Entry:
    value: object
    line: int


@dataclass
class _Document:
    sections: dict = field(default_factory=dict)
    section_lines: dict = field(default_factory=dict)
    nodes: list = field(default_factory=list)
    users: list = field(default_factory=list)


def _convert(conv, raw: str, key: str, line: int):
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value {raw!r} for {key}: {exc}", line=line) from None


def _record(raw: str, keys: dict, what: str, line: int) -> dict:
    out = {}
    for part in raw.split():
        if "=" not in part:
            raise ConfigError(f"{what} field {part!r} is not key=value", line=line)
        k, v = part.split("=", 1)
        if k not in keys:
            raise ConfigError(f"unknown {what} field {k!r}; valid fields: {', '.join(keys)}",
                              line=line)
        if k in out:
            raise ConfigError(f"{what} field {k!r} given twice", line=line)
        out[k] = _convert(keys[k], v, k, line)
    return out


def _tokenize(text: str) -> _Document:
    doc = _Document()
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"unterminated section header {line!r}", line=number)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]; valid sections: "
                                  f"{', '.join(SECTIONS)}", line=number)
            if section in doc.section_lines:
                raise ConfigError(f"section [{section}] appears twice", line=number)
            doc.section_lines[section] = number
            doc.sections[section] = {}
            continue
        if section is None:
            raise ConfigError("key outside of any section", line=number)
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=number)
        key, value = (s.strip() for s in line.split("=", 1))
        if section == "path":
            if key != "node":
                raise ConfigError(f"unknown key {key!r} in [path]; valid keys: node", line=number)
            rec = _record(value, _NODE_KEYS, "node", number)
            if "rate" not in rec:
                raise ConfigError("node needs a rate", line=number)
            doc.nodes.append(_Entry(rec, number))
            continue
        if section == "users":
            if key != "user":
                raise ConfigError(f"unknown key {key!r} in [users]; valid keys: user", line=number)
            rec = _record(value, _USER_KEYS, "user", number)
            for needed in ("id", "packets"):
                if needed not in rec:
                    raise ConfigError(f"user needs {needed}", line=number)
            doc.users.append(_Entry(rec, number))
            continue
        keys = {"workload": _WORKLOAD_KEYS, "transient": _TRANSIENT_KEYS,
                "policy": _POLICY_KEYS}[section]
        if key not in keys:
            raise ConfigError(f"unknown key {key!r} in [{section}]; valid keys: "
                              f"{', '.join(keys)}", line=number)
        if key in doc.sections[section]:
            raise ConfigError(f"key {key!r} given twice in [{section}]", line=number)
        doc.sections[section][key] = _Entry(_convert(keys[key], value, key, number), number)
    for name in REQUIRED:
        if name not in doc.section_lines:
            raise ConfigError(f"missing section [{name}]",
                              line=len(text.splitlines()) + 1)
    return doc


def _get(entries: dict, key: str, default):
    entry = entries.get(key)
    return default if entry is None else entry.value


def _line_of(entries: dict, key: str, fallback: int) -> int:
    entry = entries.get(key)
    return fallback if entry is None else entry.line


def parse_config(text: str) -> SimConfig:
    """Parse and fully validate a configuration document."""
    doc = _tokenize(text)

    path = []
    for i, entry in enumerate(doc.nodes):
        rate = entry.value["rate"]
        delay = entry.value.get("delay", 0.0)
        if not (rate > 0 and math.isfinite(rate)):
            raise ConfigError(f"service_rate (rate) must be positive and finite, got {rate}",
                              line=entry.line)
        if not (delay >= 0 and math.isfinite(delay)):
            raise ConfigError(f"delay must be non-negative and finite, got {delay}",
                              line=entry.line)
        path.append(PathNode(i, rate, delay))
    if not path:
        raise ConfigError("[path] needs at least one node", line=doc.section_lines["path"])

    users = []
    seen = {}
    for entry in doc.users:
        rec = entry.value
        uid = rec["id"]
        if uid in seen:
            raise ConfigError(f"duplicate user id {uid} (first defined on line {seen[uid]})",
                              line=entry.line)
        seen[uid] = entry.line
        user = UserSpec(uid, rec["packets"], rec.get("start_after"),
                        rec.get("w_max", 1_000_000), rec.get("source_rate", math.inf),
                        rec.get("initial_window", 1.0))
        _check(SimConfig(path=path, users=(user,)), entry.line, users_only=True)
        users.append(user)
    if not users:
        raise ConfigError("[users] needs at least one user", line=doc.section_lines["users"])

    wl = doc.sections.get("workload", {})
    wl_line = doc.section_lines.get("workload", 0)
    kind = _get(wl, "model", LengthKind.CONSTANT)
    names = LENGTH_PARAMS[kind]
    for key, entry in wl.items():
        if key in _WORKLOAD_KEYS and key not in ("model", "seed", "reference_length",
                                                 "warmup_round_trips") and key not in names:
            raise ConfigError(f"{key!r} does not apply to {kind.value} lengths; expected "
                              f"{', '.join(names)}", line=entry.line)
    defaults = {"length": 1.0, "mean": 1.0}
    params = []
    for name in names:
        if name not in wl and name not in defaults:
            raise ConfigError(f"{kind.value} lengths need {name!r}", line=wl_line)
        params.append((name, _get(wl, name, defaults.get(name))))
    lengths = PacketLengthModel(kind, tuple(params))
    try:
        lengths.validate()
    except ConfigError as exc:
        bad = next((n for n in names if n in str(exc)), "model")
        raise ConfigError(str(exc), line=_line_of(wl, bad, wl_line)) from None
    if kind is LengthKind.ERLANG:
        lengths = PacketLengthModel.erlang(lengths.p["mean"], lengths.p["k"])

    tr = doc.sections.get("transient", {})
    transient = TransientSpec(_get(tr, "enabled", False), _get(tr, "target_node", 0),
                              _get(tr, "middle_rate", 1.0))

    po = doc.sections.get("policy", {})
    po_line = doc.section_lines.get("policy", 0)
    birth_k1 = _get(po, "birth_k1", None)
    try:
        detector = DetectorConfig(_get(po, "detector_metric", MetricKind.QUEUE_LENGTH),
                                  _get(po, "detector_gain", 1.0),
                                  _get(po, "detector_threshold", 1.0))
    except DomainError as exc:
        key = "detector_gain" if "gain" in str(exc) else "detector_threshold"
        raise ConfigError(str(exc), line=_line_of(po, key, po_line)) from None
    defaults_p = PolicyParams()
    params_p = PolicyParams(
        increase_kind=_get(po, "increase", defaults_p.increase_kind),
        decrease_kind=_get(po, "decrease", defaults_p.decrease_kind),
        k1=_get(po, "k1", defaults_p.k1), k2=_get(po, "k2", defaults_p.k2),
        r1=_get(po, "r1", defaults_p.r1), r2=_get(po, "r2", defaults_p.r2),
        rounding=_get(po, "rounding", defaults_p.rounding),
        birth=None if birth_k1 is None else BirthPolicy(birth_k1),
        kary_k=_get(po, "kary_k", None))
    try:
        params_p.validate()
    except DomainError as exc:
        key = str(exc).split()[0]
        if key == "birth":
            key = "birth_k1"
        elif key == "k-ary":
            key = "kary_k"
        raise ConfigError(str(exc), line=_line_of(po, key, po_line)) from None
    bundle = PolicyBundle(params=params_p, cutoff=_get(po, "cutoff", 0.5),
                          recent_weight_base=_get(po, "recent_weight_base", None),
                          detector=detector,
                          selector=_get(po, "selector", SelectorPolicy.ALL_USERS),
                          adaptive=_get(po, "adaptive", True))

    cfg = SimConfig(path=tuple(path), users=tuple(users), length_model=lengths,
                    transient=transient, policy=bundle, run_seed=_get(wl, "seed", 0),
                    reference_length=_get(wl, "reference_length", None),
                    warmup_round_trips=_get(wl, "warmup_round_trips", 2.0))
    _check(cfg, 0, lines={"transient": doc.section_lines.get("transient", 0),
                          "policy": po_line, "workload": wl_line,
                          "users": doc.section_lines["users"], "user_lines": seen,
                          "tr": tr, "po": po, "wl": wl})
    return cfg


def _check(cfg: SimConfig, line: int, users_only: bool = False,
           lines: Optional[dict] = None) -> None:
    """Run SimConfig validation and attach the most specific line number."""
    if users_only:
        user = cfg.users[0]
        try:
            if user.total_packets < 1:
                raise ConfigError("packets must be >= 1")
            if user.w_max < 1:
                raise ConfigError("w_max must be >= 1")
            if not user.initial_window >= 1:
                raise ConfigError("initial_window must be >= 1")
            if not user.source_rate > 0:
                raise ConfigError("source_rate must be positive")
            if user.start_after is not None and not 0 < user.start_after[1] < 1:
                raise ConfigError("start fraction must lie in (0, 1)")
        except ConfigError as exc:
            raise ConfigError(f"user {user.user_id}: {exc}", line=line) from None
        return
    try:
        cfg.validate()
    except ConfigError as exc:
        msg = str(exc)
        where = lines["users"]
        if msg.startswith("user "):
            uid = int(msg.split()[1].rstrip(":"))
            where = lines["user_lines"].get(uid, where)
        elif "transient" in msg:
            key = "middle_rate" if "middle_rate" in msg else "target_node"
            where = _line_of(lines["tr"], key, lines["transient"])
        elif "cutoff" in msg or "recent_weight_base" in msg:
            key = "cutoff" if "cutoff" in msg else "recent_weight_base"
            where = _line_of(lines["po"], key, lines["policy"])
        elif "reference_length" in msg or "warmup" in msg:
            key = "reference_length" if "reference" in msg else "warmup_round_trips"
            where = _line_of(lines["wl"], key, lines["workload"])
        raise ConfigError(msg, line=where) from None


# --- serialization ----------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def serialize_config(cfg: SimConfig) -> str:
    """Inverse of :func:`parse_config`; floats are written with ``repr``."""
    out = ["[path]"]
    for node in cfg.path:
        out.append(f"node = rate={_fmt(float(node.service_rate))} "
                   f"delay={_fmt(float(node.propagation_delay))}")
    out += ["", "[users]"]
    for u in cfg.users:
        parts = [f"id={u.user_id}", f"packets={u.total_packets}"]
        if u.start_after is not None:
            parts.append(f"start_after={u.start_after[0]}:{_fmt(float(u.start_after[1]))}")
        parts += [f"w_max={u.w_max}", f"source_rate={_fmt(float(u.source_rate))}",
                  f"initial_window={_fmt(float(u.initial_window))}"]
        out.append("user = " + " ".join(parts))
    out += ["", "[workload]", f"model = {cfg.length_model.kind.value}"]
    for name, value in cfg.length_model.params:
        out.append(f"{name} = {_fmt(value if name == 'k' else float(value))}")
    ref = None if cfg.reference_length is None else float(cfg.reference_length)
    out += [f"seed = {cfg.run_seed}", f"reference_length = {_fmt(ref)}",
            f"warmup_round_trips = {_fmt(float(cfg.warmup_round_trips))}"]
    t = cfg.transient
    out += ["", "[transient]", f"enabled = {_fmt(t.enabled)}",
            f"target_node = {t.target_node}", f"middle_rate = {_fmt(float(t.middle_rate))}"]
    b = cfg.policy
    p = b.params
    birth = None if p.birth is None else float(p.birth.initial_k1)
    out += ["", "[policy]", f"increase = {_fmt(p.increase_kind)}",
            f"decrease = {_fmt(p.decrease_kind)}",
            f"k1 = {_fmt(float(p.k1))}", f"k2 = {_fmt(float(p.k2))}",
            f"r1 = {_fmt(float(p.r1))}", f"r2 = {_fmt(float(p.r2))}",
            f"rounding = {_fmt(p.rounding)}", f"birth_k1 = {_fmt(birth)}",
            f"kary_k = {_fmt(None if p.kary_k is None else float(p.kary_k))}",
            f"cutoff = {_fmt(float(b.cutoff))}",
            f"recent_weight_base = "
            f"{_fmt(None if b.recent_weight_base is None else float(b.recent_weight_base))}",
            f"detector_metric = {_fmt(b.detector.metric_kind)}",
            f"detector_gain = {_fmt(float(b.detector.gain))}",
            f"detector_threshold = {_fmt(float(b.detector.threshold))}",
            f"selector = {_fmt(b.selector)}", f"adaptive = {_fmt(b.adaptive)}", ""]
    return "\n".join(out)


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
