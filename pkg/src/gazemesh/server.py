"""Live session host: WebSocket clients join, steer gaze, get events.

The server is the single source of truth. It stamps every inbound GAZE
with its own clock, runs the mutual-gaze tracker, relays gaze to the
other members, and pushes EVENT messages for episode opens/closes and
per-member exclusion transitions. Clients never infer episodes locally.

Outbound traffic per client goes through one queue drained by one writer
task, so events reach each console in the order the session produced
them. ``--time-scale`` speeds up the virtual clock (heartbeat cadence
and timeouts scale with it); message semantics are unchanged.
"""

from __future__ import annotations

import asyncio
import json
import signal
import socket
import sys
from dataclasses import dataclass
from typing import Optional

from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from . import seating
from .errors import ProtocolError, SelfGaze
from .gaze import GazeTracker, GazeUpdate, session_stats
from .protocol import SessionMessage, decode_message, encode_message
from .schedule import FrameSchedule, build_schedule, display_duty
from .session import (
    COORDINATOR_ID,
    DEFAULT_HEARTBEAT_TIMEOUT_US,
    DEFAULT_HEARTBEAT_US,
    DEFAULT_SESSION_CAP,
    ring_for_members,
    ring_payload,
)


@dataclass(frozen=True)
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    schedule: Optional[FrameSchedule] = None
    debounce_us: int = 100_000
    heartbeat_us: int = DEFAULT_HEARTBEAT_US
    timeout_us: int = DEFAULT_HEARTBEAT_TIMEOUT_US
    capacity: int = DEFAULT_SESSION_CAP
    time_scale: float = 1.0
    out: Optional[str] = None


class VirtualClock:
    def __init__(self, scale: float):
        if scale <= 0:
            raise ValueError("time scale must be positive")
        self.scale = scale
        loop = asyncio.get_running_loop()
        self._t0 = loop.time()
        self._loop = loop

    def now_us(self) -> int:
        return int((self._loop.time() - self._t0) * 1e6 * self.scale)

    def wall_seconds(self, virtual_us: int) -> float:
        return virtual_us / 1e6 / self.scale


class ClientConn:
    def __init__(self, pid: str, ws, last_seen_us: int):
        self.pid = pid
        self.ws = ws
        self.queue: asyncio.Queue[Optional[bytes]] = asyncio.Queue()
        self.last_seen_us = last_seen_us
        self.writer: Optional[asyncio.Task] = None


class LiveSession:
    """All session state; methods are synchronous and run on one loop."""

    def __init__(self, cfg: ServeConfig, clock: VirtualClock):
        self.cfg = cfg
        self.clock = clock
        self.clients: dict[str, ClientConn] = {}
        self.joined_us: dict[str, int] = {}  # everyone who ever joined
        self.current: dict[str, int] = {}  # current members -> join time
        self.version = 0
        self.ring = None
        self.tracker = GazeTracker([], debounce_us=cfg.debounce_us)
        self.excluded: set[str] = set()
        self.event_lines: list[dict] = []
        self.rx_seq: dict[str, int] = {}
        self._seq = 0
        self._finalized = False

    # -- plumbing -----------------------------------------------------

    def _push(self, pid: str, kind: str, payload: dict, now_us: int,
              sender: str = COORDINATOR_ID, seq: Optional[int] = None):
        conn = self.clients.get(pid)
        if conn is None:
            return
        if seq is None:
            self._seq += 1
            seq = self._seq
        msg = SessionMessage(kind, seq, sender, now_us, payload)
        conn.queue.put_nowait(encode_message(msg))

    def _broadcast_event(self, line: dict):
        self.event_lines.append(line)
        now = line["t_us"]
        for pid in self.clients:
            self._push(pid, "EVENT", dict(line), now)

    def _emit(self, events, now_us: int):
        for ev in events:
            self._broadcast_event(ev.log_obj())
        self._refresh_exclusion(now_us)

    def _refresh_exclusion(self, now_us: int):
        open_pairs = self.tracker.open_pairs()
        in_open = {p for pair in open_pairs for p in pair}
        for pid in sorted(self.current):
            should = bool(open_pairs) and pid not in in_open
            if should and pid not in self.excluded:
                self.excluded.add(pid)
                self._broadcast_event(
                    {"t_us": now_us, "type": "exclusion_start", "a": pid, "b": None})
            elif not should and pid in self.excluded:
                self.excluded.discard(pid)
                self._broadcast_event(
                    {"t_us": now_us, "type": "exclusion_end", "a": pid, "b": None})

    def _send_membership(self, now_us: int, joiner: Optional[str] = None):
        if self.ring is None:
            return
        for pid in self.ring.order:
            kind = "WELCOME" if pid == joiner else "RING_UPDATE"
            self._push(pid, kind, {
                "ring": ring_payload(self.ring),
                "slots": list(seating.slot_map_for(self.ring, pid).slots),
            }, now_us)

    # -- membership ---------------------------------------------------

    def try_join(self, pid: str, ws, join_seq: int = 0) -> tuple[bool, Optional[bytes]]:
        """Admit pid or return (False, encoded ERROR) for the caller to send."""
        now = self.clock.now_us()
        if pid in self.current:
            return False, self._error_bytes("DuplicateJoin",
                                            f"{pid!r} already in session", now)
        if not pid or pid.startswith("@"):
            return False, self._error_bytes("ProtocolError",
                                            "participant ids must not start with '@'", now)
        if len(self.current) >= self.cfg.capacity:
            return False, self._error_bytes("SessionFull",
                                            f"session capped at {self.cfg.capacity}", now)
        conn = ClientConn(pid, ws, now)
        conn.writer = asyncio.get_running_loop().create_task(_drain(conn))
        self.clients[pid] = conn
        self.current[pid] = now
        self.joined_us[pid] = now
        self.rx_seq[pid] = join_seq
        self.tracker.add_member(pid)
        self.version += 1
        self.ring = ring_for_members(self.current, self.version)
        self._send_membership(now, joiner=pid)
        self._refresh_exclusion(now)
        return True, None

    def depart(self, pid: str, reason: str):
        if pid not in self.current or self._finalized:
            return
        now = self.clock.now_us()
        del self.current[pid]
        conn = self.clients.pop(pid, None)
        self._emit(self.tracker.remove_member(pid, now), now)
        if pid in self.excluded:
            self.excluded.discard(pid)
            self._broadcast_event(
                {"t_us": now, "type": "exclusion_end", "a": pid, "b": None})
        self.version += 1
        self.ring = ring_for_members(self.current, self.version)
        self._send_membership(now)
        if conn is not None:
            conn.queue.put_nowait(None)
            asyncio.get_running_loop().create_task(_close_quietly(conn.ws))

    def _error_bytes(self, code: str, message: str, now_us: int) -> bytes:
        self._seq += 1
        return encode_message(SessionMessage(
            "ERROR", self._seq, COORDINATOR_ID, now_us,
            {"code": code, "message": message}))

    # -- data plane ---------------------------------------------------

    def on_message(self, pid: str, msg: SessionMessage):
        if pid not in self.current:
            return
        if msg.seq <= self.rx_seq.get(pid, 0):
            return
        self.rx_seq[pid] = msg.seq
        now = self.clock.now_us()
        self.clients[pid].last_seen_us = now
        if msg.kind == "GAZE":
            target = msg.payload.get("target")
            if target is not None and target not in self.current:
                return  # gaze at someone who just left; drop it
            try:
                update = GazeUpdate(pid, target, now)
            except SelfGaze:
                return
            self._emit(self.tracker.apply(update), now)
            relay = {"target": target, "at_us": now}
            for other in self.current:
                if other != pid:
                    self._push(other, "GAZE", relay, now, sender=pid, seq=msg.seq)

    def tick(self):
        if self._finalized:
            return
        now = self.clock.now_us()
        self._emit(self.tracker.advance(now), now)
        for pid in list(self.current):
            self._push(pid, "HEARTBEAT", {}, now)
        stale = [pid for pid, conn in self.clients.items()
                 if now - conn.last_seen_us >= self.cfg.timeout_us]
        for pid in stale:
            self.depart(pid, "timeout")

    # -- shutdown -----------------------------------------------------

    def finalize(self) -> dict:
        now = self.clock.now_us()
        events = self.tracker.finalize(now)
        for ev in events:
            self.event_lines.append(ev.log_obj())
        for pid in sorted(self.excluded):
            self.event_lines.append(
                {"t_us": now, "type": "exclusion_end", "a": pid, "b": None})
        self.excluded.clear()
        self._finalized = True
        for conn in self.clients.values():
            conn.queue.put_nowait(None)
        members = sorted(self.joined_us)
        stats = session_stats(self.tracker.episodes(), members, now)
        report = {
            "duration_us": now,
            "members": members,
            "episodes": [
                {"pair": list(e.pair), "start_us": e.start_us, "end_us": e.end_us}
                for e in self.tracker.episodes()
            ],
            "totals": {
                "mutual_us": {f"{a}|{b}": v for (a, b), v in sorted(stats.mutual_us.items())},
                "exclusion_us": dict(sorted(stats.exclusion_us.items())),
                "episode_count": stats.episode_count,
            },
        }
        if self.cfg.schedule is not None:
            duty = display_duty(self.cfg.schedule)
            report["schedule"] = {
                "period_us": self.cfg.schedule.period_us,
                "capture_us": self.cfg.schedule.capture_duration_us,
                "offset_us": self.cfg.schedule.capture_offset_us,
                "display_duty": float(duty),
            }
        return report


async def _drain(conn: ClientConn):
    while True:
        item = await conn.queue.get()
        if item is None:
            break
        try:
            await conn.ws.send(item.decode("utf-8"))
        except ConnectionClosed:
            break


async def _close_quietly(ws):
    try:
        await ws.close()
    except ConnectionClosed:
        pass


async def _handle_client(session: LiveSession, ws):
    pid = None
    try:
        async for raw in ws:
            try:
                msg = decode_message(raw)
            except ProtocolError as exc:
                err = session._error_bytes("ProtocolError", str(exc),
                                           session.clock.now_us())
                await ws.send(err.decode("utf-8"))
                if pid is None:
                    return
                continue
            if pid is None:
                if msg.kind != "JOIN":
                    err = session._error_bytes(
                        "ProtocolError", "first message must be JOIN",
                        session.clock.now_us())
                    await ws.send(err.decode("utf-8"))
                    return
                ok, err = session.try_join(msg.sender, ws, join_seq=msg.seq)
                if not ok:
                    await ws.send(err.decode("utf-8"))
                    return
                pid = msg.sender
            elif msg.kind == "LEAVE":
                break
            else:
                session.on_message(pid, msg)
    except ConnectionClosed:
        pass
    finally:
        if pid is not None:
            session.depart(pid, "disconnect")


async def _ticker(session: LiveSession, stop: asyncio.Event):
    interval = session.clock.wall_seconds(session.cfg.heartbeat_us)
    while not stop.is_set():
        try:
            await asyncio.wait_for(stop.wait(), timeout=interval)
        except asyncio.TimeoutError:
            session.tick()


async def serve_session(cfg: ServeConfig, stop: asyncio.Event,
                        ready=None) -> LiveSession:
    """Run a live session until `stop` is set; returns the session."""
    clock = VirtualClock(cfg.time_scale)
    session = LiveSession(cfg, clock)

    async def handler(ws):
        await _handle_client(session, ws)

    # Bind ourselves so the ephemeral port is known before serving.
    sock = socket.create_server((cfg.host, cfg.port))
    port = sock.getsockname()[1]
    try:
        async with serve(handler, sock=sock):
            print(f"listening on ws://{cfg.host}:{port}", flush=True)
            if ready is not None:
                ready(port)
            ticker = asyncio.create_task(_ticker(session, stop))
            await stop.wait()
            ticker.cancel()
    except Exception:
        sock.close()
        raise
    return session


def write_serve_outputs(out_dir: Optional[str], session: LiveSession):
    import os

    report = session.finalize()
    if out_dir is None:
        print(json.dumps(report, sort_keys=True, indent=2))
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "events.jsonl"), "w", encoding="utf-8") as fh:
        for line in session.event_lines:
            fh.write(json.dumps(line, separators=(",", ":")))
            fh.write("\n")


def run_server(args) -> int:
    fps = args.fps if args.fps is not None else 60.0
    capture_ms = args.capture_ms if args.capture_ms is not None else 6.0
    offset_ms = args.offset_ms if args.offset_ms is not None else 0.0
    debounce_ms = args.debounce_ms if args.debounce_ms is not None else 100.0
    cfg = ServeConfig(
        host=args.host,
        port=args.port,
        schedule=build_schedule(fps, capture_ms, offset_ms),
        debounce_us=round(debounce_ms * 1000),
        time_scale=args.time_scale,
        out=args.out,
    )

    async def main() -> int:
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        try:
            loop.add_signal_handler(signal.SIGINT, stop.set)
            loop.add_signal_handler(signal.SIGTERM, stop.set)
        except (NotImplementedError, RuntimeError):
            pass  # non-main thread; rely on KeyboardInterrupt
        try:
            session = await serve_session(cfg, stop)
        except OSError as exc:
            print(f"gazemesh: cannot bind {cfg.host}:{cfg.port}: {exc}",
                  file=sys.stderr)
            return 1
        write_serve_outputs(cfg.out, session)
        return 0

    try:
        return asyncio.run(main())
    except KeyboardInterrupt:
        return 0
