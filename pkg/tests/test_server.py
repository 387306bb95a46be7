"""Exercises the live WebSocket host end to end on a loopback socket.

Every test spins up a real server on an ephemeral port inside its own
event loop, talks to it with real websocket clients, and shuts it down
via the same stop event the signal handlers use.
"""

import asyncio
import json

import pytest
from websockets.asyncio.client import connect
from websockets.exceptions import ConnectionClosed

from gazemesh.protocol import SessionMessage, decode_message, encode_message
from gazemesh.schedule import build_schedule
from gazemesh.server import ServeConfig, serve_session, write_serve_outputs

TEST_TIMEOUT = 15


def run(coro):
    return asyncio.run(asyncio.wait_for(coro, timeout=TEST_TIMEOUT))


async def start_server(**overrides):
    cfg = ServeConfig(port=0, schedule=build_schedule(60, 6), **overrides)
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    port_fut = loop.create_future()
    task = asyncio.create_task(
        serve_session(cfg, stop, ready=port_fut.set_result))
    port = await port_fut
    return task, stop, port


async def finish(task, stop, *consoles):
    for c in consoles:
        await c.close()
    stop.set()
    return await task


class Console:
    """Minimal scripted client: JSON lines in, decoded messages out."""

    def __init__(self, pid, ws):
        self.pid = pid
        self.ws = ws
        self.seq = 0

    async def send(self, kind, payload=None):
        self.seq += 1
        msg = SessionMessage(kind, self.seq, self.pid, 0, payload or {})
        await self.ws.send(encode_message(msg).decode("utf-8"))

    async def recv(self):
        return decode_message(await self.ws.recv())

    async def recv_kind(self, kind):
        while True:
            msg = await self.recv()
            if msg.kind == kind:
                return msg

    async def recv_event(self, type_):
        while True:
            msg = await self.recv_kind("EVENT")
            if msg.payload["type"] == type_:
                return msg

    async def close(self):
        try:
            await self.ws.close()
        except ConnectionClosed:
            pass


async def join(port, pid):
    ws = await connect(f"ws://127.0.0.1:{port}")
    console = Console(pid, ws)
    await console.send("JOIN")
    welcome = await console.recv_kind("WELCOME")
    return console, welcome


def test_single_join_gets_welcome_with_empty_slots():
    async def body():
        task, stop, port = await start_server()
        a, welcome = await join(port, "A")
        assert welcome.sender == "@coord"
        assert welcome.payload["ring"]["order"] == ["A"]
        assert welcome.payload["ring"]["version"] == 1
        assert welcome.payload["slots"] == []
        await finish(task, stop, a)

    run(body())


def test_three_joins_build_consistent_slot_maps():
    async def body():
        task, stop, port = await start_server()
        a, _ = await join(port, "A")
        b, wb = await join(port, "B")
        assert wb.payload["slots"] == ["A"]
        c, wc = await join(port, "C")
        assert wc.payload["ring"]["order"] == ["A", "B", "C"]
        assert wc.payload["slots"] == ["A", "B"]
        ra = await a.recv_kind("RING_UPDATE")  # from B's join
        ra = await a.recv_kind("RING_UPDATE")  # from C's join
        assert ra.payload["slots"] == ["B", "C"]
        rb = await b.recv_kind("RING_UPDATE")
        assert rb.payload["slots"] == ["C", "A"]
        await finish(task, stop, a, b, c)

    run(body())


def test_duplicate_id_rejected_with_error():
    async def body():
        task, stop, port = await start_server()
        a, _ = await join(port, "A")
        ws = await connect(f"ws://127.0.0.1:{port}")
        imposter = Console("A", ws)
        await imposter.send("JOIN")
        err = await imposter.recv_kind("ERROR")
        assert err.payload["code"] == "DuplicateJoin"
        with pytest.raises(ConnectionClosed):
            await asyncio.wait_for(ws.recv(), timeout=5)
        await finish(task, stop, a)

    run(body())


def test_session_capacity_enforced():
    async def body():
        task, stop, port = await start_server(capacity=2)
        a, _ = await join(port, "A")
        b, _ = await join(port, "B")
        ws = await connect(f"ws://127.0.0.1:{port}")
        c = Console("C", ws)
        await c.send("JOIN")
        err = await c.recv_kind("ERROR")
        assert err.payload["code"] == "SessionFull"
        await finish(task, stop, a, b)

    run(body())


def test_first_message_must_be_join():
    async def body():
        task, stop, port = await start_server()
        ws = await connect(f"ws://127.0.0.1:{port}")
        eager = Console("A", ws)
        await eager.send("GAZE", {"target": "B", "at_us": 0})
        err = await eager.recv_kind("ERROR")
        assert "JOIN" in err.payload["message"]
        with pytest.raises(ConnectionClosed):
            await asyncio.wait_for(ws.recv(), timeout=5)
        await finish(task, stop)

    run(body())


def test_garbage_after_join_keeps_connection():
    async def body():
        task, stop, port = await start_server()
        a, _ = await join(port, "A")
        await a.ws.send("not json at all")
        err = await a.recv_kind("ERROR")
        assert err.payload["code"] == "ProtocolError"
        # Still a member: another console joining is announced to us.
        b, _ = await join(port, "B")
        update = await a.recv_kind("RING_UPDATE")
        assert update.payload["ring"]["order"] == ["A", "B"]
        await finish(task, stop, a, b)

    run(body())


def test_gaze_relayed_to_other_members():
    async def body():
        task, stop, port = await start_server()
        a, _ = await join(port, "A")
        b, _ = await join(port, "B")
        await a.recv_kind("RING_UPDATE")
        await a.send("GAZE", {"target": "B", "at_us": 0})
        relayed = await b.recv_kind("GAZE")
        assert relayed.sender == "A"
        assert relayed.payload["target"] == "B"
        assert relayed.payload["at_us"] >= 0
        await finish(task, stop, a, b)

    run(body())


def test_mutual_gaze_event_and_third_party_exclusion():
    async def body():
        task, stop, port = await start_server(debounce_us=0)
        a, _ = await join(port, "A")
        b, _ = await join(port, "B")
        c, _ = await join(port, "C")
        await a.send("GAZE", {"target": "B", "at_us": 0})
        await b.send("GAZE", {"target": "A", "at_us": 0})
        opened = await c.recv_event("open")
        assert (opened.payload["a"], opened.payload["b"]) == ("A", "B")
        excl = await c.recv_event("exclusion_start")
        assert excl.payload["a"] == "C"
        # Everyone gets the same feed, gazers included.
        assert (await a.recv_event("open")).payload["a"] == "A"
        assert (await b.recv_event("open")).payload["a"] == "A"

        await b.send("GAZE", {"target": None, "at_us": 0})
        closed = await c.recv_event("close")
        assert closed.payload["t_us"] >= opened.payload["t_us"]
        ended = await c.recv_event("exclusion_end")
        assert ended.payload["a"] == "C"
        await finish(task, stop, a, b, c)

    run(body())


def test_stale_seq_ignored():
    async def body():
        task, stop, port = await start_server(debounce_us=0)
        a, _ = await join(port, "A")
        b, _ = await join(port, "B")
        await a.send("GAZE", {"target": "B", "at_us": 0})
        await b.send("GAZE", {"target": "A", "at_us": 0})
        await a.recv_event("open")
        # Replay an old sequence number; the avert must not register.
        replay = SessionMessage("GAZE", 1, "B", 0, {"target": None, "at_us": 0})
        await b.ws.send(encode_message(replay).decode("utf-8"))
        await b.send("GAZE", {"target": None, "at_us": 0})
        closed = await a.recv_event("close")
        assert closed.payload["type"] == "close"
        await finish(task, stop, a, b)

    run(body())


def test_gaze_at_unknown_target_dropped():
    async def body():
        task, stop, port = await start_server(debounce_us=0)
        a, _ = await join(port, "A")
        b, _ = await join(port, "B")
        await a.send("GAZE", {"target": "Z", "at_us": 0})
        await a.send("GAZE", {"target": "B", "at_us": 0})
        relayed = await b.recv_kind("GAZE")
        assert relayed.payload["target"] == "B"  # the "Z" one never relayed
        await finish(task, stop, a, b)

    run(body())


def test_leave_prunes_ring_for_the_others():
    async def body():
        task, stop, port = await start_server()
        a, _ = await join(port, "A")
        b, _ = await join(port, "B")
        await b.send("LEAVE")
        while True:
            update = await a.recv_kind("RING_UPDATE")
            if update.payload["ring"]["order"] == ["A"]:
                break
        assert update.payload["slots"] == []
        await finish(task, stop, a)

    run(body())


def test_silent_client_disconnected_after_timeout():
    async def body():
        # 20x time scale: 1 s heartbeats tick every 50 ms of wall time
        # and the 3 s timeout lands at 150 ms.
        task, stop, port = await start_server(time_scale=20.0)
        a, _ = await join(port, "A")
        t0 = asyncio.get_running_loop().time()
        with pytest.raises(ConnectionClosed):
            while True:
                await asyncio.wait_for(a.ws.recv(), timeout=5)
        assert asyncio.get_running_loop().time() - t0 < 5
        await finish(task, stop)

    run(body())


def test_responsive_client_survives_many_heartbeats():
    async def body():
        task, stop, port = await start_server(time_scale=20.0)
        a, _ = await join(port, "A")
        # Ride out 10 virtual seconds (3x the timeout) answering each beat.
        for _ in range(10):
            await a.recv_kind("HEARTBEAT")
            await a.send("HEARTBEAT")
        await a.send("GAZE", {"target": None, "at_us": 0})
        await a.recv_kind("HEARTBEAT")  # still connected
        await finish(task, stop, a)

    run(body())


def test_event_feed_matches_written_log(tmp_path):
    async def body():
        task, stop, port = await start_server(debounce_us=0)
        a, _ = await join(port, "A")
        b, _ = await join(port, "B")
        seen = []
        await a.send("GAZE", {"target": "B", "at_us": 0})
        await b.send("GAZE", {"target": "A", "at_us": 0})
        seen.append((await a.recv_event("open")).payload)
        await a.send("GAZE", {"target": None, "at_us": 0})
        seen.append((await a.recv_event("close")).payload)
        session = await finish(task, stop, a, b)
        return session, seen

    session, seen = run(body())
    write_serve_outputs(str(tmp_path), session)
    with open(tmp_path / "events.jsonl", encoding="utf-8") as fh:
        logged = [json.loads(line) for line in fh]
    # The console feed is a prefix-preserving subset of the durable log.
    for payload in seen:
        assert payload in logged
    opens = [l for l in logged if l["type"] == "open"]
    closes = [l for l in logged if l["type"] == "close"]
    assert opens == [seen[0]] and closes == [seen[1]]

    report = json.loads((tmp_path / "report.json").read_text())
    assert report["totals"]["episode_count"] == 1
    width = seen[1]["t_us"] - seen[0]["t_us"]
    assert report["totals"]["mutual_us"]["A|B"] == width


def test_event_lines_balanced_after_shutdown():
    async def body():
        task, stop, port = await start_server(debounce_us=0)
        a, _ = await join(port, "A")
        b, _ = await join(port, "B")
        c, _ = await join(port, "C")
        await a.send("GAZE", {"target": "B", "at_us": 0})
        await b.send("GAZE", {"target": "A", "at_us": 0})
        await c.recv_event("exclusion_start")
        return await finish(task, stop, a, b, c)

    session = run(body())
    report = session.finalize()
    assert report["totals"]["episode_count"] == 1
    assert report["totals"]["mutual_us"]["A|B"] > 0
    types = [line["type"] for line in session.event_lines]
    assert types.count("exclusion_start") == types.count("exclusion_end")
    assert types.count("open") == types.count("close")
