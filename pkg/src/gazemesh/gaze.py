"""Mutual-gaze detection over a stream of per-participant gaze targets.

Two participants are in a mutual-gaze episode while their targets are
reciprocal. A debounce filters out glances shorter than the configured
minimum, but a surviving episode is backdated to the instant reciprocity
began: the debounce is a filter, not a delay.

Timing rules, shared by the streaming tracker and the batch derivation:

* updates carry microsecond timestamps; equal timestamps apply in input
  order, and reciprocity held for zero real time is never an episode;
* a closed episode needs duration >= debounce; reciprocity still standing
  at the end of observation counts as ongoing (open end) regardless of
  elapsed time, since nothing contradicted it.

``GazeTracker`` is the incremental engine used by live sessions.
``episodes_from_trace`` recomputes the same episodes from a whole trace
by interval intersection; tests hold the two routes to exact agreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import (
    NonMonotonicTime,
    SelfGaze,
    UnknownParticipant,
    UnsortedTrace,
)

DEFAULT_DEBOUNCE_US = 100_000  # saccade suppression; no canonical minimum exists

Pair = tuple[str, str]


def pair_key(a: str, b: str) -> Pair:
    """Canonical unordered-pair key (sorted 2-tuple)."""
    if a == b:
        raise SelfGaze(f"pair members must be distinct, got {a!r} twice")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class GazeUpdate:
    who: str
    target: Optional[str]
    at_us: int

    def __post_init__(self):
        if self.target == self.who:
            raise SelfGaze(f"{self.who!r} cannot target itself")
        if self.at_us < 0:
            raise ValueError("at_us must be non-negative")


@dataclass(frozen=True)
class GazeState:
    """Read-only snapshot of who targets whom."""

    targets: dict[str, Optional[str]]
    last_update_us: dict[str, int]


@dataclass(frozen=True)
class MutualGazeEpisode:
    pair: Pair
    start_us: int
    end_us: Optional[int]  # None while ongoing

    def __post_init__(self):
        if self.pair != pair_key(*self.pair):
            raise ValueError(f"pair must be canonical, got {self.pair}")
        if self.end_us is not None and self.end_us <= self.start_us:
            raise ValueError("closed episode needs start_us < end_us")


@dataclass(frozen=True)
class ExclusionInterval:
    who: str
    start_us: int
    end_us: int

    def __post_init__(self):
        if self.end_us <= self.start_us:
            raise ValueError("exclusion interval needs start_us < end_us")


@dataclass(frozen=True)
class EpisodeEvent:
    kind: str  # "open" | "close"
    pair: Pair
    t_us: int

    def log_obj(self) -> dict:
        return {"t_us": self.t_us, "type": self.kind, "a": self.pair[0], "b": self.pair[1]}


def exclusion_log_obj(kind: str, who: str, t_us: int) -> dict:
    return {"t_us": t_us, "type": kind, "a": who, "b": None}


def _episode_sort_key(e: MutualGazeEpisode):
    end = e.end_us if e.end_us is not None else float("inf")
    return (e.start_us, end, e.pair)


class GazeTracker:
    """Streaming mutual-gaze detector for a fixed-or-evolving member set."""

    def __init__(self, members: Iterable[str], debounce_us: int = DEFAULT_DEBOUNCE_US):
        if debounce_us < 0:
            raise ValueError("debounce_us must be non-negative")
        self.debounce_us = debounce_us
        self._targets: dict[str, Optional[str]] = {}
        self._last_us: dict[str, int] = {}
        self._pending: dict[Pair, int] = {}  # reciprocity onset awaiting debounce
        self._open: dict[Pair, int] = {}  # confirmed episode start
        self._closed: list[MutualGazeEpisode] = []
        for p in members:
            self.add_member(p)

    # -- membership -------------------------------------------------

    @property
    def members(self) -> tuple[str, ...]:
        return tuple(self._targets)

    def add_member(self, p: str) -> None:
        if not p:
            raise ValueError("participant id must be non-empty")
        if p not in self._targets:
            self._targets[p] = None
            self._last_us[p] = 0

    def remove_member(self, p: str, at_us: int) -> list[EpisodeEvent]:
        """Drop a member; any reciprocity involving it ends at at_us."""
        if p not in self._targets:
            raise UnknownParticipant(f"{p!r} not tracked")
        events = []
        for pair in [k for k in self._open if p in k]:
            events.extend(self._close_open(pair, at_us))
        for pair in [k for k in self._pending if p in k]:
            events.extend(self._settle_pending(pair, at_us))
        del self._targets[p]
        del self._last_us[p]
        return events

    # -- state views ------------------------------------------------

    @property
    def state(self) -> GazeState:
        return GazeState(targets=dict(self._targets), last_update_us=dict(self._last_us))

    def episodes(self) -> list[MutualGazeEpisode]:
        """Closed episodes plus ongoing reciprocity as open-ended episodes.

        Unconfirmed (still-debouncing) reciprocity counts as ongoing: only
        a contradicting update can disqualify it, and none has arrived.
        """
        out = list(self._closed)
        out.extend(MutualGazeEpisode(pair, start, None) for pair, start in self._open.items())
        out.extend(MutualGazeEpisode(pair, start, None) for pair, start in self._pending.items())
        out.sort(key=_episode_sort_key)
        return out

    def open_pairs(self) -> tuple[Pair, ...]:
        return tuple(self._open)

    # -- core transitions -------------------------------------------

    def advance(self, now_us: int) -> list[EpisodeEvent]:
        """Confirm pending reciprocity that has outlived the debounce."""
        events = []
        for pair in [k for k, onset in self._pending.items()
                     if now_us >= onset + self.debounce_us and now_us > onset]:
            onset = self._pending.pop(pair)
            self._open[pair] = onset
            events.append(EpisodeEvent("open", pair, onset))
        return events

    def apply(self, u: GazeUpdate) -> list[EpisodeEvent]:
        """Apply one update; returns episode events it triggered."""
        if u.who not in self._targets:
            raise UnknownParticipant(f"{u.who!r} not tracked")
        if u.at_us < self._last_us[u.who]:
            raise NonMonotonicTime(
                f"update for {u.who!r} at {u.at_us} older than {self._last_us[u.who]}"
            )
        events = self.advance(u.at_us)
        self._last_us[u.who] = u.at_us
        old = self._targets[u.who]
        if old == u.target:
            return events
        self._targets[u.who] = u.target
        if old is not None:
            pair = pair_key(u.who, old)
            if pair in self._open:
                events.extend(self._close_open(pair, u.at_us))
            elif pair in self._pending:
                events.extend(self._settle_pending(pair, u.at_us))
        if u.target is not None and self._targets.get(u.target) == u.who:
            pair = pair_key(u.who, u.target)
            if self.debounce_us == 0:
                self._open[pair] = u.at_us
                events.append(EpisodeEvent("open", pair, u.at_us))
            else:
                self._pending[pair] = u.at_us
        self._assert_exclusive()
        return events

    def finalize(self, at_us: int) -> list[EpisodeEvent]:
        """Stop observing at at_us: clip open episodes, settle pendings.

        A pending run is kept only if its observed duration clears the
        debounce; nothing remains open afterwards.
        """
        events = []
        for pair in list(self._open):
            events.extend(self._close_open(pair, at_us))
        for pair in list(self._pending):
            events.extend(self._settle_pending(pair, at_us))
        return events

    # -- helpers ----------------------------------------------------

    def _close_open(self, pair: Pair, end_us: int) -> list[EpisodeEvent]:
        start = self._open.pop(pair)
        # A zero-width close can only follow a zero-debounce open at the
        # same instant; the open/close event pair stands, but no episode.
        if end_us > start:
            self._closed.append(MutualGazeEpisode(pair, start, end_us))
        return [EpisodeEvent("close", pair, end_us)]

    def _settle_pending(self, pair: Pair, end_us: int) -> list[EpisodeEvent]:
        onset = self._pending.pop(pair)
        if end_us > onset and end_us - onset >= self.debounce_us:
            self._closed.append(MutualGazeEpisode(pair, onset, end_us))
            return [EpisodeEvent("open", pair, onset), EpisodeEvent("close", pair, end_us)]
        return []

    def _assert_exclusive(self):
        # One gaze target apiece makes open reciprocity exclusive.
        seen = set()
        for pair in self._open:
            for p in pair:
                assert p not in seen, f"{p!r} in two open episodes"
                seen.add(p)


def fold_trace(trace: Sequence[GazeUpdate], debounce_us: int,
               members: Optional[Iterable[str]] = None) -> GazeTracker:
    """Fold a trace through a fresh tracker (the streaming route)."""
    if members is None:
        members = _infer_members(trace)
    tracker = GazeTracker(members, debounce_us=debounce_us)
    for u in trace:
        tracker.apply(u)
    return tracker


def _infer_members(trace: Sequence[GazeUpdate]) -> list[str]:
    members = []
    for u in trace:
        for p in (u.who, u.target):
            if p is not None and p not in members:
                members.append(p)
    return members


def episodes_from_trace(trace: Sequence[GazeUpdate], debounce_us: int,
                        members: Optional[Iterable[str]] = None) -> list[MutualGazeEpisode]:
    """Batch derivation of mutual-gaze episodes by interval intersection.

    For each participant, build the maximal half-open spans over which its
    target was constant (a reassertion of the same target does not split a
    span; a flicker through another target does, even a zero-width one).
    Episodes for pair {a,b} are the pairwise intersections of a's b-spans
    with b's a-spans, minus zero-width results, minus closed runs shorter
    than the debounce. Matches the streaming tracker exactly.
    """
    if debounce_us < 0:
        raise ValueError("debounce_us must be non-negative")
    for prev, cur in zip(trace, trace[1:]):
        if cur.at_us < prev.at_us:
            raise UnsortedTrace(f"timestamps regress at {cur.who!r}@{cur.at_us}")
    ids = list(members) if members is not None else _infer_members(trace)
    for u in trace:
        if u.who not in ids:
            raise UnknownParticipant(f"{u.who!r} not in member list")

    # spans[x][y] = list of [start, end) over which x targeted y; end None = open.
    spans: dict[str, dict[str, list[tuple[int, Optional[int]]]]] = {p: {} for p in ids}
    current: dict[str, tuple[Optional[str], int]] = {p: (None, 0) for p in ids}
    for u in trace:
        target, since = current[u.who]
        if u.target == target:
            continue
        if target is not None and u.at_us > since:
            spans[u.who].setdefault(target, []).append((since, u.at_us))
        current[u.who] = (u.target, u.at_us)
    for p, (target, since) in current.items():
        if target is not None:
            spans[p].setdefault(target, []).append((since, None))

    episodes = []
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            for start, end in _intersect_spans(spans[a].get(b, []), spans[b].get(a, [])):
                if end is None or end - start >= debounce_us:
                    episodes.append(MutualGazeEpisode(pair_key(a, b), start, end))
    episodes.sort(key=_episode_sort_key)
    return episodes


def _intersect_spans(xs, ys):
    """Pairwise intersection of two span lists, keeping runs unmerged."""
    out = []
    i = j = 0
    while i < len(xs) and j < len(ys):
        (xs_s, xs_e), (ys_s, ys_e) = xs[i], ys[j]
        lo = max(xs_s, ys_s)
        hi = xs_e if ys_e is None else ys_e if xs_e is None else min(xs_e, ys_e)
        if hi is None:
            out.append((lo, None))
            break
        if lo < hi:
            out.append((lo, hi))
        if xs_e is not None and (ys_e is None or xs_e <= ys_e):
            i += 1
        else:
            j += 1
    return out


# -- interval reporting ----------------------------------------------


def _clip(episodes: Iterable[MutualGazeEpisode], horizon_us: int):
    """Episodes as closed [start, end) pairs within [0, horizon)."""
    for e in episodes:
        end = horizon_us if e.end_us is None else min(e.end_us, horizon_us)
        start = max(e.start_us, 0)
        if start < end:
            yield e.pair, start, end


def _merge_union(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def _subtract(xs: list[tuple[int, int]], ys: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    j = 0
    for s, e in xs:
        cur = s
        while j < len(ys) and ys[j][1] <= cur:
            j += 1
        k = j
        while k < len(ys) and ys[k][0] < e:
            ys_s, ys_e = ys[k]
            if cur < ys_s:
                out.append((cur, ys_s))
            cur = max(cur, ys_e)
            if ys_e >= e:
                break
            k += 1
        if cur < e:
            out.append((cur, e))
    return out


def exclusion_intervals(episodes: Sequence[MutualGazeEpisode], members: Iterable[str],
                        who: str, horizon_us: int) -> list[ExclusionInterval]:
    """Maximal spans where others hold mutual gaze and `who` holds none."""
    if who not in set(members):
        raise UnknownParticipant(f"{who!r} not in member list")
    others = _merge_union([(s, e) for pair, s, e in _clip(episodes, horizon_us) if who not in pair])
    own = _merge_union([(s, e) for pair, s, e in _clip(episodes, horizon_us) if who in pair])
    return [ExclusionInterval(who, s, e) for s, e in _subtract(others, own)]


@dataclass(frozen=True)
class SessionStats:
    mutual_us: dict[Pair, int]  # per-pair mutual-gaze total
    exclusion_us: dict[str, int]  # per-member exclusion total
    episode_count: int


def session_stats(episodes: Sequence[MutualGazeEpisode], members: Sequence[str],
                  horizon_us: int) -> SessionStats:
    """Totals over [0, horizon): mutual gaze per pair, exclusion per member."""
    ids = sorted(set(members))
    mutual = {pair_key(a, b): 0 for i, a in enumerate(ids) for b in ids[i + 1:]}
    count = 0
    for pair, s, e in _clip(episodes, horizon_us):
        count += 1
        mutual.setdefault(pair, 0)
        mutual[pair] += e - s
    exclusion = {}
    for m in ids:
        exclusion[m] = sum(
            iv.end_us - iv.start_us
            for iv in exclusion_intervals(episodes, ids, m, horizon_us)
        )
    return SessionStats(mutual_us=mutual, exclusion_us=exclusion, episode_count=count)
