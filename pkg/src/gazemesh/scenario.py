"""Scenario files: JSON scripts for multi-party simulation runs.

A scenario lists participants, network conditions, the capture schedule,
and a timed gaze trace. Optional extras: per-participant join/leave
times, a run duration, link overrides that degrade or sever connectivity
mid-run, and a debounce override. Times are milliseconds in the file and
become integer microseconds internally.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from .errors import ScenarioError
from .network import NetworkModel
from .schedule import build_schedule
from .session import COORDINATOR_ID, SessionConfig, Simulation

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


@dataclass(frozen=True)
class ParticipantSpec:
    id: str
    join_ms: float = 0.0
    leave_ms: Optional[float] = None


@dataclass(frozen=True)
class TraceStep:
    t_ms: float
    who: str
    slot: Optional[int]


@dataclass(frozen=True)
class LinkOverride:
    """Loss change at a point in time; loss >= 1.0 blocks outright."""

    at_ms: float
    loss: float
    src: Optional[str] = None
    dst: Optional[str] = None
    site: Optional[str] = None  # whole-site form: every link touching it


@dataclass(frozen=True)
class Scenario:
    participants: tuple[ParticipantSpec, ...]
    latency_ms: float = 0.0
    jitter_ms: float = 0.0
    loss: float = 0.0
    seed: int = 0
    fps: float = 60.0
    capture_ms: float = 6.0
    offset_ms: float = 0.0
    trace: tuple[TraceStep, ...] = ()
    duration_ms: float = 1000.0
    link_overrides: tuple[LinkOverride, ...] = ()
    debounce_ms: Optional[float] = None


def _us(ms: float) -> int:
    return round(ms * 1000)


def _require(cond: bool, message: str):
    if not cond:
        raise ScenarioError(message)


def _check_keys(obj: dict, allowed: set[str], where: str):
    extra = set(obj) - allowed
    _require(not extra, f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def _number(obj: dict, key: str, where: str, default=None, minimum=None):
    if key not in obj:
        _require(default is not None, f"{where} is missing {key!r}")
        return default
    val = obj[key]
    _require(isinstance(val, (int, float)) and not isinstance(val, bool),
             f"{where}.{key} must be a number")
    if minimum is not None:
        _require(val >= minimum, f"{where}.{key} must be >= {minimum}")
    return val


def _participant(entry, index: int) -> ParticipantSpec:
    where = f"participants[{index}]"
    if isinstance(entry, str):
        entry = {"id": entry}
    _require(isinstance(entry, dict), f"{where} must be a string or object")
    _check_keys(entry, {"id", "join_ms", "leave_ms"}, where)
    pid = entry.get("id")
    _require(isinstance(pid, str) and _ID_RE.match(pid) is not None,
             f"{where}.id must match [A-Za-z0-9_-]+")
    join_ms = _number(entry, "join_ms", where, default=0.0, minimum=0)
    leave_ms = None
    if entry.get("leave_ms") is not None:
        leave_ms = _number(entry, "leave_ms", where, minimum=0)
        _require(leave_ms > join_ms, f"{where}: leave_ms must follow join_ms")
    return ParticipantSpec(pid, join_ms, leave_ms)


def parse_scenario(obj) -> Scenario:
    _require(isinstance(obj, dict), "scenario must be a JSON object")
    _check_keys(obj, {"participants", "network", "schedule", "trace",
                      "duration_ms", "link_overrides", "debounce_ms"}, "scenario")

    raw = obj.get("participants")
    _require(isinstance(raw, list) and raw, "participants must be a non-empty list")
    participants = tuple(_participant(e, i) for i, e in enumerate(raw))
    ids = [p.id for p in participants]
    _require(len(set(ids)) == len(ids), "participant ids must be unique")

    net = obj.get("network", {})
    _require(isinstance(net, dict), "network must be an object")
    _check_keys(net, {"latency_ms", "jitter_ms", "loss", "seed"}, "network")
    latency_ms = _number(net, "latency_ms", "network", default=0.0, minimum=0)
    jitter_ms = _number(net, "jitter_ms", "network", default=0.0, minimum=0)
    loss = _number(net, "loss", "network", default=0.0, minimum=0)
    _require(loss < 1.0, "network.loss must lie in [0, 1)")
    seed = net.get("seed", 0)
    _require(isinstance(seed, int) and not isinstance(seed, bool),
             "network.seed must be an integer")

    sched = obj.get("schedule", {})
    _require(isinstance(sched, dict), "schedule must be an object")
    _check_keys(sched, {"fps", "capture_ms", "offset_ms"}, "schedule")
    fps = _number(sched, "fps", "schedule", default=60.0)
    capture_ms = _number(sched, "capture_ms", "schedule", default=6.0, minimum=0)
    offset_ms = _number(sched, "offset_ms", "schedule", default=0.0, minimum=0)

    steps = []
    raw_trace = obj.get("trace", [])
    _require(isinstance(raw_trace, list), "trace must be a list")
    last_t = None
    for i, entry in enumerate(raw_trace):
        where = f"trace[{i}]"
        _require(isinstance(entry, dict), f"{where} must be an object")
        _check_keys(entry, {"t_ms", "who", "slot"}, where)
        t_ms = _number(entry, "t_ms", where, minimum=0)
        _require(last_t is None or t_ms >= last_t, f"{where}: trace must be time-sorted")
        last_t = t_ms
        who = entry.get("who")
        _require(who in ids, f"{where}.who must name a participant")
        slot = entry.get("slot")
        if slot is not None:
            _require(isinstance(slot, int) and not isinstance(slot, bool) and slot >= 0,
                     f"{where}.slot must be null or a non-negative integer")
        steps.append(TraceStep(t_ms, who, slot))

    overrides = []
    raw_ov = obj.get("link_overrides", [])
    _require(isinstance(raw_ov, list), "link_overrides must be a list")
    for i, entry in enumerate(raw_ov):
        where = f"link_overrides[{i}]"
        _require(isinstance(entry, dict), f"{where} must be an object")
        _check_keys(entry, {"at_ms", "loss", "from", "to", "site"}, where)
        at_ms = _number(entry, "at_ms", where, minimum=0)
        loss_v = _number(entry, "loss", where, minimum=0)
        _require(loss_v <= 1.0, f"{where}.loss must lie in [0, 1]")
        site = entry.get("site")
        src, dst = entry.get("from"), entry.get("to")
        if site is not None:
            _require(src is None and dst is None,
                     f"{where}: give either site or from/to, not both")
            _require(site in ids, f"{where}.site must name a participant")
            overrides.append(LinkOverride(at_ms, loss_v, site=site))
        else:
            _require(src in ids and dst in ids and src != dst,
                     f"{where}: from/to must name two distinct participants")
            overrides.append(LinkOverride(at_ms, loss_v, src=src, dst=dst))

    default_duration = (steps[-1].t_ms + 1000.0) if steps else 1000.0
    duration_ms = _number(obj, "duration_ms", "scenario", default=default_duration)
    _require(duration_ms > 0, "duration_ms must be positive")

    debounce_ms = None
    if obj.get("debounce_ms") is not None:
        debounce_ms = _number(obj, "debounce_ms", "scenario", minimum=0)

    return Scenario(
        participants=participants,
        latency_ms=latency_ms, jitter_ms=jitter_ms, loss=loss, seed=seed,
        fps=fps, capture_ms=capture_ms, offset_ms=offset_ms,
        trace=tuple(steps), duration_ms=duration_ms,
        link_overrides=tuple(overrides), debounce_ms=debounce_ms,
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path!r} is not valid JSON: {exc}") from exc
    return parse_scenario(obj)


def bundled_names() -> list[str]:
    root = resources.files(__package__) / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_bundled(name: str) -> Scenario:
    ref = resources.files(__package__) / "scenarios" / f"{name}.json"
    try:
        text = ref.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise ScenarioError(f"no bundled scenario named {name!r}") from exc
    return parse_scenario(json.loads(text))


def instantiate(sc: Scenario, debounce_us: int) -> tuple[Simulation, int]:
    """Build a ready-to-run Simulation; returns (sim, horizon_us)."""
    schedule = build_schedule(sc.fps, sc.capture_ms, sc.offset_ms)
    net = NetworkModel(base_latency_us=_us(sc.latency_ms), jitter_us=_us(sc.jitter_ms),
                       loss_rate=sc.loss, seed=sc.seed)
    sim = Simulation(SessionConfig(schedule=schedule, debounce_us=debounce_us), net)
    for p in sc.participants:
        sim.add_participant(p.id)
    for p in sc.participants:
        sim.join(p.id, _us(p.join_ms))
    for p in sc.participants:
        if p.leave_ms is not None:
            sim.leave(p.id, _us(p.leave_ms))
    for step in sc.trace:
        sim.gaze(step.who, step.slot, _us(step.t_ms))
    for ov in sc.link_overrides:
        _schedule_override(sim, ov)
    return sim, _us(sc.duration_ms)


def _schedule_override(sim: Simulation, ov: LinkOverride):
    def apply():
        if ov.site is not None:
            if ov.loss >= 1.0:
                sim.net.block_site(ov.site, peers=list(sim.sites) + [COORDINATOR_ID])
                sim.pool.purge_site(ov.site)
            else:
                for peer in list(sim.sites) + [COORDINATOR_ID]:
                    if peer != ov.site:
                        sim.net.set_link(ov.site, peer, loss_rate=ov.loss)
                        sim.net.set_link(peer, ov.site, loss_rate=ov.loss)
        else:
            sim.net.set_link(ov.src, ov.dst, loss_rate=ov.loss)

    sim.schedule(_us(ov.at_ms), apply)
