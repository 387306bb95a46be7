"""Line-delimited JSON wire protocol.

One UTF-8 JSON object per line, canonical field order
(kind, seq, sender, sent_us, payload), newline-terminated. The same
envelope travels over the in-process simulated links, TCP, and the
console WebSocket; decode(encode(m)) == m always.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ProtocolError

# Control plane: JOIN, WELCOME, RING_UPDATE, LEAVE, ERROR (reliable path).
# Data plane: GAZE, FRAME_STUB, HEARTBEAT (lossy path).
# EVENT carries server-computed episode/exclusion feed lines to consoles.
KINDS = (
    "JOIN",
    "WELCOME",
    "RING_UPDATE",
    "GAZE",
    "FRAME_STUB",
    "HEARTBEAT",
    "LEAVE",
    "EVENT",
    "ERROR",
)

_FIELDS = ("kind", "seq", "sender", "sent_us", "payload")


@dataclass(frozen=True)
class SessionMessage:
    kind: str
    seq: int
    sender: str
    sent_us: int
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown kind {self.kind!r}")
        if not isinstance(self.seq, int) or isinstance(self.seq, bool) or self.seq < 0:
            raise ProtocolError(f"seq must be a non-negative integer, got {self.seq!r}")
        if not self.sender or not isinstance(self.sender, str):
            raise ProtocolError(f"sender must be a non-empty string, got {self.sender!r}")
        if not isinstance(self.sent_us, int) or isinstance(self.sent_us, bool):
            raise ProtocolError(f"sent_us must be an integer, got {self.sent_us!r}")
        if not isinstance(self.payload, dict):
            raise ProtocolError(f"payload must be an object, got {type(self.payload).__name__}")


def encode_message(m: SessionMessage) -> bytes:
    obj = {
        "kind": m.kind,
        "seq": m.seq,
        "sender": m.sender,
        "sent_us": m.sent_us,
        "payload": m.payload,
    }
    try:
        line = json.dumps(obj, separators=(",", ":"), allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"payload not JSON-serializable: {exc}") from exc
    return line.encode("utf-8") + b"\n"


def decode_message(data: bytes | str) -> SessionMessage:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    line = data.rstrip("\n")
    if "\n" in line:
        raise ProtocolError("expected a single message line")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    if set(obj) != set(_FIELDS):
        raise ProtocolError(f"expected fields {_FIELDS}, got {sorted(obj)}")
    return SessionMessage(
        kind=obj["kind"],
        seq=obj["seq"],
        sender=obj["sender"],
        sent_us=obj["sent_us"],
        payload=obj["payload"],
    )
