"""Full-mesh multi-party session over the simulated transport.

Signaling (JOIN/WELCOME/RING_UPDATE/LEAVE/ERROR) runs site<->coordinator
over reliable links; gaze, frame stubs, and heartbeats run site<->site
over the lossy mesh. The whole thing executes as a single-threaded
discrete-event simulation on one virtual clock: messages landing at an
instant are processed before actions scheduled at that instant, so
zero-latency control exchanges settle before the next scripted step.

Each site timestamps remote gaze with its local delivery time; a
ground-truth tracker fed at send time gives the canonical episode record
against which per-site views are reconciled.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import seating
from .errors import DuplicateJoin, NonMonotonicTime, ProtocolError, SessionFull
from .gaze import EpisodeEvent, GazeTracker, GazeUpdate, MutualGazeEpisode
from .network import InFlightPool, NetworkModel, deliver
from .protocol import SessionMessage, decode_message, encode_message
from .schedule import FrameSchedule, gate_capture
from .seating import SeatingRing, SlotMap

COORDINATOR_ID = "@coord"

DEFAULT_HEARTBEAT_US = 1_000_000
DEFAULT_HEARTBEAT_TIMEOUT_US = 3_000_000
DEFAULT_SESSION_CAP = 8


@dataclass(frozen=True)
class SessionConfig:
    schedule: FrameSchedule
    debounce_us: int = 100_000
    heartbeat_us: int = DEFAULT_HEARTBEAT_US
    heartbeat_timeout_us: int = DEFAULT_HEARTBEAT_TIMEOUT_US
    capacity: int = DEFAULT_SESSION_CAP
    frame_stubs: bool = True


@dataclass(frozen=True)
class SessionView:
    """One site's belief at the end of a run."""

    ring: Optional[SeatingRing]
    slot_map: Optional[SlotMap]
    gaze_state: Optional[object]
    episodes: tuple[MutualGazeEpisode, ...]

    @property
    def owner(self) -> str:
        return self.slot_map.owner if self.slot_map else "?"


def ring_for_members(members: dict[str, int], version: int) -> Optional[SeatingRing]:
    """Ring over a join-time ledger; singleton rings are allowed here."""
    if len(members) >= 2:
        return seating.make_ring(members.items(), version=version)
    if members:
        return SeatingRing(tuple(members), version=version)
    return None


def ring_payload(ring: SeatingRing) -> dict:
    return {"order": list(ring.order), "version": ring.version}


def ring_from_payload(obj: dict) -> SeatingRing:
    return SeatingRing(order=tuple(obj["order"]), version=obj["version"])


class Coordinator:
    """Serialized membership authority (signaling star)."""

    def __init__(self, sim: "Simulation", capacity: int):
        self.sim = sim
        self.capacity = capacity
        self.members: dict[str, int] = {}  # id -> join time, insertion-ordered
        self.version = 0
        self.ring: Optional[SeatingRing] = None
        self._seq = 0

    def admit(self, p: str, now_us: int) -> SeatingRing:
        if p in self.members:
            raise DuplicateJoin(f"{p!r} already in session")
        if len(self.members) >= self.capacity:
            raise SessionFull(f"session capped at {self.capacity}")
        self.members[p] = now_us
        self._rebuild()
        return self.ring

    def drop(self, p: str) -> Optional[SeatingRing]:
        if p not in self.members:
            return None
        del self.members[p]
        self._rebuild()
        return self.ring

    def _rebuild(self):
        self.version += 1
        self.ring = ring_for_members(self.members, self.version)

    def handle(self, msg: SessionMessage, now_us: int):
        if msg.kind == "JOIN":
            try:
                ring = self.admit(msg.sender, now_us)
            except (DuplicateJoin, SessionFull) as exc:
                self._send(msg.sender, "ERROR",
                           {"code": type(exc).__name__, "message": str(exc)}, now_us)
                return
            self.sim.on_member_added(msg.sender, now_us)
            for p in ring.order:
                kind = "WELCOME" if p == msg.sender else "RING_UPDATE"
                self._send(p, kind, {
                    "ring": ring_payload(ring),
                    "slots": list(seating.slot_map_for(ring, p).slots),
                }, now_us)
        elif msg.kind == "LEAVE":
            who = msg.payload["who"]
            if who not in self.members:
                return  # already gone; concurrent reports are expected
            ring = self.drop(who)
            self.sim.on_member_removed(who, now_us)
            if ring is None:
                return
            for p in ring.order:
                self._send(p, "RING_UPDATE", {
                    "ring": ring_payload(ring),
                    "slots": list(seating.slot_map_for(ring, p).slots),
                }, now_us)

    def _send(self, dst: str, kind: str, payload: dict, now_us: int):
        self._seq += 1
        msg = SessionMessage(kind, self._seq, COORDINATOR_ID, now_us, payload)
        self.sim.transmit(COORDINATOR_ID, dst, msg, lossy=False)


class Site:
    """One participant's endpoint: tracker, timers, mesh links."""

    def __init__(self, sim: "Simulation", pid: str, cfg: SessionConfig):
        self.sim = sim
        self.id = pid
        self.cfg = cfg
        self.ring: Optional[SeatingRing] = None
        self.slots: Optional[SlotMap] = None
        self.tracker: Optional[GazeTracker] = None
        self.last_seen: dict[str, int] = {}
        self.suspected: set[str] = set()
        self.suspected_at: dict[str, int] = {}
        self.pending_check: set[str] = set()
        self.last_rx_seq: dict[str, int] = {}
        self.errors: list[dict] = []
        self.event_log: list[tuple[int, int, dict]] = []  # (t_us, emit order, line)
        self.observed_updates: list[GazeUpdate] = []
        self.stub_log: list[tuple[int, int, int]] = []  # sent, exposure start, exposure
        self.stubs_received = 0
        self.departed = False
        self._last_gaze_us: Optional[int] = None
        self._seq = 0
        self._emit = 0
        self._capture_armed = False
        self._heartbeat_armed = False

    # -- outbound ----------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def peers(self) -> list[str]:
        if self.ring is None:
            return []
        return [p for p in self.ring.order if p != self.id]

    def start_join(self):
        msg = SessionMessage("JOIN", self._next_seq(), self.id, self.sim.now, {})
        self.sim.transmit(self.id, COORDINATOR_ID, msg, lossy=False)

    def leave(self):
        if self.departed:
            return
        self.departed = True
        msg = SessionMessage("LEAVE", self._next_seq(), self.id, self.sim.now,
                             {"who": self.id, "reason": "leave"})
        self.sim.transmit(self.id, COORDINATOR_ID, msg, lossy=False)

    def send_gaze(self, slot_index: Optional[int]):
        if self.slots is None or self.tracker is None:
            raise ProtocolError(f"{self.id!r} has no slot map yet")
        now = self.sim.now
        if self._last_gaze_us is not None and now <= self._last_gaze_us:
            raise NonMonotonicTime(
                f"{self.id!r} already broadcast gaze at {self._last_gaze_us}")
        self._last_gaze_us = now
        target = seating.resolve_gaze_target(self.slots, slot_index)
        update = GazeUpdate(self.id, target, now)
        self._record(self.tracker.apply(update))
        self.observed_updates.append(update)
        self.sim.on_gaze_sent(update)
        msg = SessionMessage("GAZE", self._next_seq(), self.id, now,
                             {"target": target, "at_us": now})
        for p in self.peers():
            self.sim.transmit(self.id, p, msg, lossy=True)

    def _heartbeat_tick(self):
        if self.departed:
            return
        now = self.sim.now
        if self.tracker is not None:
            self._record(self.tracker.advance(now))
        msg = SessionMessage("HEARTBEAT", self._next_seq(), self.id, now, {})
        for p in self.peers():
            self.sim.transmit(self.id, p, msg, lossy=True)
        self.sim.schedule(now + self.cfg.heartbeat_us, self._heartbeat_tick)

    def _capture_tick(self):
        if self.departed:
            return
        now = self.sim.now
        s = self.cfg.schedule
        assert gate_capture(s, now, s.capture_duration_us).admitted
        if self.peers():
            self.stub_log.append((now, now, s.capture_duration_us))
            msg = SessionMessage("FRAME_STUB", self._next_seq(), self.id, now, {
                "exposure_start_us": now,
                "exposure_us": s.capture_duration_us,
            })
            for p in self.peers():
                self.sim.transmit(self.id, p, msg, lossy=True)
        self.sim.schedule(now + s.period_us, self._capture_tick)

    def _check_peer(self, p: str):
        self.pending_check.discard(p)
        if self.departed or p in self.suspected or p not in self.last_seen:
            return
        due = self.last_seen[p] + self.cfg.heartbeat_timeout_us
        if self.sim.now >= due:
            self.suspected.add(p)
            self.suspected_at[p] = self.sim.now
            msg = SessionMessage("LEAVE", self._next_seq(), self.id, self.sim.now,
                                 {"who": p, "reason": "timeout"})
            self.sim.transmit(self.id, COORDINATOR_ID, msg, lossy=False)
        else:
            self.pending_check.add(p)
            self.sim.schedule(due, lambda: self._check_peer(p))

    def _arm_check(self, p: str):
        if p not in self.pending_check and p not in self.suspected:
            self.pending_check.add(p)
            self.sim.schedule(self.last_seen[p] + self.cfg.heartbeat_timeout_us,
                              lambda: self._check_peer(p))

    # -- inbound -----------------------------------------------------

    def handle(self, msg: SessionMessage):
        now = self.sim.now
        if msg.sender == COORDINATOR_ID:
            self._handle_signal(msg, now)
            return
        last = self.last_rx_seq.get(msg.sender, 0)
        if msg.seq <= last:
            return  # stale or duplicate; FIFO links make this defensive only
        self.last_rx_seq[msg.sender] = msg.seq
        if self.tracker is None or self.ring is None or msg.sender not in self.ring:
            return
        self.last_seen[msg.sender] = now
        if msg.kind == "GAZE":
            update = GazeUpdate(msg.sender, msg.payload["target"], now)
            self._record(self.tracker.apply(update))
            self.observed_updates.append(update)
        elif msg.kind == "FRAME_STUB":
            self.stubs_received += 1
        elif msg.kind == "HEARTBEAT":
            self._arm_check(msg.sender)

    def _handle_signal(self, msg: SessionMessage, now: int):
        if msg.kind == "ERROR":
            self.errors.append(msg.payload)
            return
        if msg.kind not in ("WELCOME", "RING_UPDATE"):
            return
        new_ring = ring_from_payload(msg.payload["ring"])
        old = set(self.ring.order) if self.ring else set()
        new = set(new_ring.order)
        if self.tracker is None:
            self.tracker = GazeTracker(new_ring.order, debounce_us=self.cfg.debounce_us)
        else:
            for p in new_ring.order:
                if p not in old:
                    self.tracker.add_member(p)
            for p in self.ring.order:
                if p not in new:
                    self._record(self.tracker.remove_member(p, now))
                    self.last_seen.pop(p, None)
                    self.suspected.discard(p)
        self.ring = new_ring
        self.slots = SlotMap(owner=self.id, slots=tuple(msg.payload["slots"]))
        for p in self.peers():
            if p not in self.last_seen:
                self.last_seen[p] = now
                self._arm_check(p)
        if not self._heartbeat_armed:
            self._heartbeat_armed = True
            self.sim.schedule(now + self.cfg.heartbeat_us, self._heartbeat_tick)
        if not self._capture_armed and self.cfg.schedule.capture_duration_us > 0 \
                and self.cfg.frame_stubs:
            self._capture_armed = True
            s = self.cfg.schedule
            k = -((s.epoch_us + s.capture_offset_us - now) // s.period_us)
            first = s.epoch_us + k * s.period_us + s.capture_offset_us
            if first < now:
                first += s.period_us
            self.sim.schedule(first, self._capture_tick)

    # -- bookkeeping -------------------------------------------------

    def _record(self, events: list[EpisodeEvent]):
        for ev in events:
            self.event_log.append((ev.t_us, self._emit, ev.log_obj()))
            self._emit += 1

    def finalize(self, horizon_us: int):
        if self.tracker is not None:
            self._record(self.tracker.finalize(horizon_us))

    def view(self) -> SessionView:
        return SessionView(
            ring=self.ring,
            slot_map=self.slots,
            gaze_state=self.tracker.state if self.tracker else None,
            episodes=tuple(self.tracker.episodes()) if self.tracker else (),
        )


class Simulation:
    """Single-threaded discrete-event driver for a whole session."""

    def __init__(self, config: SessionConfig, net: Optional[NetworkModel] = None):
        self.cfg = config
        self.net = net or NetworkModel()
        self.pool = InFlightPool()
        self.now = 0
        self.coordinator = Coordinator(self, config.capacity)
        self.sites: dict[str, Site] = {}
        self.ground = GazeTracker([], debounce_us=config.debounce_us)
        self.ground_log: list[tuple[int, int, dict]] = []
        self._ground_emit = 0
        self._timers: list[tuple[int, int, Callable[[], None]]] = []
        self._timer_seq = 0

    # -- scheduling --------------------------------------------------

    def schedule(self, at_us: int, fn: Callable[[], None]):
        if at_us < self.now:
            raise ValueError(f"cannot schedule at {at_us} before now {self.now}")
        heapq.heappush(self._timers, (at_us, self._timer_seq, fn))
        self._timer_seq += 1

    def transmit(self, src: str, dst: str, msg: SessionMessage, lossy: bool):
        data = encode_message(msg)
        delivery = self.net.transit(src, dst, self.now, lossy)
        if delivery is not None:
            self.pool.push(delivery, src, dst, data)

    def run(self, horizon_us: int):
        """Process everything strictly before the horizon, then clip."""
        while True:
            t_pool = self.pool.next_time()
            t_timer = self._timers[0][0] if self._timers else None
            due = [t for t in (t_pool, t_timer) if t is not None]
            if not due:
                break
            t_next = min(due)
            if t_next >= horizon_us:
                break
            self.now = t_next
            if t_pool is not None and t_pool == t_next:
                for item in deliver(self.pool, t_next):
                    self._dispatch(item.src, item.dst, item.data)
            else:
                _, _, fn = heapq.heappop(self._timers)
                fn()
        self.now = horizon_us
        for site in self.sites.values():
            site.finalize(horizon_us)
        self._record_ground(self.ground.finalize(horizon_us))

    def _dispatch(self, src: str, dst: str, data: bytes):
        msg = decode_message(data)
        if dst == COORDINATOR_ID:
            self.coordinator.handle(msg, self.now)
        elif dst in self.sites:
            self.sites[dst].handle(msg)

    # -- session control ----------------------------------------------

    def add_participant(self, pid: str) -> Site:
        if pid.startswith("@"):
            raise ValueError("ids starting with '@' are reserved")
        if pid in self.sites:
            raise DuplicateJoin(f"site {pid!r} already exists")
        site = Site(self, pid, self.cfg)
        self.sites[pid] = site
        return site

    def join(self, pid: str, at_us: int = 0):
        site = self.sites.get(pid) or self.add_participant(pid)
        self.schedule(at_us, site.start_join)

    def gaze(self, pid: str, slot_index: Optional[int], at_us: int):
        self.schedule(at_us, lambda: self.sites[pid].send_gaze(slot_index))

    def leave(self, pid: str, at_us: int):
        self.schedule(at_us, self.sites[pid].leave)

    def kill_site(self, pid: str, at_us: int):
        """Sever every link touching pid (both planes) at the given time.

        Messages already in flight on those links are lost with them, so
        survivors' last-seen times never postdate the kill.
        """

        def block():
            self.net.block_site(pid, peers=list(self.sites) + [COORDINATOR_ID])
            self.pool.purge_site(pid)

        self.schedule(at_us, block)

    # -- ground truth -------------------------------------------------

    def on_member_added(self, pid: str, now_us: int):
        self.ground.add_member(pid)

    def on_member_removed(self, pid: str, now_us: int):
        if pid in self.ground.members:
            self._record_ground(self.ground.remove_member(pid, now_us))
        site = self.sites.get(pid)
        if site is not None:
            site.departed = True

    def on_gaze_sent(self, update: GazeUpdate):
        self._record_ground(self.ground.apply(update))

    def _record_ground(self, events: list[EpisodeEvent]):
        for ev in events:
            self.ground_log.append((ev.t_us, self._ground_emit, ev.log_obj()))
            self._ground_emit += 1

    # -- results ------------------------------------------------------

    def mesh_link_count(self) -> int:
        n = len(self.coordinator.members)
        return n * (n - 1) // 2

    def member_views(self) -> dict[str, SessionView]:
        """Views of every site that ever joined (trackers exist)."""
        return {pid: s.view() for pid, s in self.sites.items() if s.tracker is not None}


# -- cross-site agreement ---------------------------------------------


@dataclass(frozen=True)
class Mismatch:
    site_a: str
    site_b: str
    pair: tuple[str, str]
    count_a: int
    count_b: int


@dataclass(frozen=True)
class SitePairAgreement:
    site_a: str
    site_b: str
    max_skew_us: int
    mismatches: tuple[Mismatch, ...]


@dataclass(frozen=True)
class AgreementReport:
    agrees: bool
    threshold_us: int
    max_skew_us: int
    site_pairs: tuple[SitePairAgreement, ...]

    @property
    def mismatches(self) -> tuple[Mismatch, ...]:
        return tuple(m for sp in self.site_pairs for m in sp.mismatches)


def _comparable(episodes, min_width_us: int):
    by_pair: dict[tuple[str, str], list[MutualGazeEpisode]] = {}
    for e in episodes:
        width = float("inf") if e.end_us is None else e.end_us - e.start_us
        if width >= min_width_us:
            by_pair.setdefault(e.pair, []).append(e)
    for lst in by_pair.values():
        lst.sort(key=lambda e: (e.start_us, e.end_us if e.end_us is not None else float("inf")))
    return by_pair


def reconcile_views(views, latency_bound_us: int, jitter_us: int = 0) -> AgreementReport:
    """Pairwise-compare per-site episode logs from one completed run.

    ``views`` is a dict keyed by site id, or any iterable of SessionView
    (owners are then taken from the slot maps).

    Episodes shorter than twice the latency bound are dropped before
    comparison (a tiny run may straddle sites' observation skew). The run
    agrees when every surviving episode appears at every site and matched
    boundaries differ by at most latency_bound + jitter.
    """
    if not isinstance(views, dict):
        views = {v.owner: v for v in views}
    threshold = latency_bound_us + jitter_us
    min_width = 2 * latency_bound_us
    owners = sorted(views)
    site_pairs = []
    overall_skew = 0
    any_mismatch = False
    for i, a in enumerate(owners):
        for b in owners[i + 1:]:
            ea = _comparable(views[a].episodes, min_width)
            eb = _comparable(views[b].episodes, min_width)
            mismatches = []
            skew = 0
            for pair in sorted(set(ea) | set(eb)):
                la, lb = ea.get(pair, []), eb.get(pair, [])
                if len(la) != len(lb):
                    mismatches.append(Mismatch(a, b, pair, len(la), len(lb)))
                for x, y in zip(la, lb):
                    skew = max(skew, abs(x.start_us - y.start_us))
                    if (x.end_us is None) != (y.end_us is None):
                        mismatches.append(Mismatch(a, b, pair, len(la), len(lb)))
                    elif x.end_us is not None:
                        skew = max(skew, abs(x.end_us - y.end_us))
            site_pairs.append(SitePairAgreement(a, b, skew, tuple(mismatches)))
            overall_skew = max(overall_skew, skew)
            any_mismatch = any_mismatch or bool(mismatches)
    return AgreementReport(
        agrees=not any_mismatch and overall_skew <= threshold,
        threshold_us=threshold,
        max_skew_us=overall_skew,
        site_pairs=tuple(site_pairs),
    )
