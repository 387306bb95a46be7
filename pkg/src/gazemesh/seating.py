"""Round-table seating: one global cyclic order, per-site slot maps.

Every site shows the other participants on display slots ordered
left-to-right. Slot maps all derive from a single ring (arrival order),
so "who looks at whom" reads consistently at every site.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import DuplicateId, SlotOutOfRange, TooFew, UnknownParticipant

ParticipantId = str


@dataclass(frozen=True)
class SeatingRing:
    """Cyclic participant order plus a monotonically increasing version."""

    order: tuple[ParticipantId, ...]
    version: int = 1

    def __post_init__(self):
        if not self.order:
            raise ValueError("a ring needs at least one member")
        if len(set(self.order)) != len(self.order):
            raise DuplicateId(f"duplicate ids in ring {self.order}")
        if any(not p for p in self.order):
            raise ValueError("participant ids must be non-empty")

    def __contains__(self, p: ParticipantId) -> bool:
        return p in self.order


@dataclass(frozen=True)
class SlotMap:
    """Display slots as seen from one seat, left to right."""

    owner: ParticipantId
    slots: tuple[ParticipantId, ...]

    def __post_init__(self):
        if self.owner in self.slots:
            raise ValueError(f"owner {self.owner!r} cannot occupy a slot")


@dataclass(frozen=True)
class ConsistencyViolation:
    owner: ParticipantId
    expected: Optional[tuple[ParticipantId, ...]]
    actual: Optional[tuple[ParticipantId, ...]]


def make_ring(participants: Iterable[tuple[ParticipantId, int]], version: int = 1) -> SeatingRing:
    """Seat participants by join time, ties broken by id.

    Raises DuplicateId on repeated ids and TooFew below two participants.
    """
    entries = list(participants)
    ids = [p for p, _ in entries]
    if len(set(ids)) != len(ids):
        raise DuplicateId(f"duplicate participant ids: {sorted(ids)}")
    if len(entries) < 2:
        raise TooFew(f"need at least 2 participants, got {len(entries)}")
    entries.sort(key=lambda e: (e[1], e[0]))
    return SeatingRing(order=tuple(p for p, _ in entries), version=version)


def remove_member(ring: SeatingRing, p: ParticipantId) -> SeatingRing:
    """Excise a member, keeping survivors' relative order; bumps version."""
    if p not in ring:
        raise UnknownParticipant(f"{p!r} not in ring")
    return SeatingRing(
        order=tuple(q for q in ring.order if q != p),
        version=ring.version + 1,
    )


def slot_map_for(ring: SeatingRing, p: ParticipantId) -> SlotMap:
    """The table as seen from p's seat: successors in ring order."""
    if p not in ring:
        raise UnknownParticipant(f"{p!r} not in ring")
    i = ring.order.index(p)
    n = len(ring.order)
    slots = tuple(ring.order[(i + k) % n] for k in range(1, n))
    return SlotMap(owner=p, slots=slots)


def verify_global_consistency(maps: Sequence[SlotMap], ring: SeatingRing) -> list[ConsistencyViolation]:
    """Check that every slot map matches the ring-derived expectation.

    Returns one violation per owner whose slots differ, plus entries for
    owners outside the ring, duplicated owners, and ring members with no
    map at all. Empty list means globally consistent.
    """
    violations = []
    seen = {}
    for m in maps:
        if m.owner in seen:
            violations.append(ConsistencyViolation(m.owner, None, m.slots))
            continue
        seen[m.owner] = m
        if m.owner not in ring:
            violations.append(ConsistencyViolation(m.owner, None, m.slots))
            continue
        expected = slot_map_for(ring, m.owner).slots
        if m.slots != expected:
            violations.append(ConsistencyViolation(m.owner, expected, m.slots))
    for p in ring.order:
        if p not in seen:
            violations.append(ConsistencyViolation(p, slot_map_for(ring, p).slots, None))
    return violations


def resolve_gaze_target(slot_map: SlotMap, slot_index: Optional[int]) -> Optional[ParticipantId]:
    """Map a slot selection to its occupant; None means gaze averted."""
    if slot_index is None:
        return None
    if not 0 <= slot_index < len(slot_map.slots):
        raise SlotOutOfRange(
            f"slot {slot_index} out of range for {len(slot_map.slots)} slots"
        )
    return slot_map.slots[slot_index]
