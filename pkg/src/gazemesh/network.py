"""Deterministic simulated transport: latency, jitter, loss, FIFO links.

All randomness flows through one seeded RNG consumed in send order, so a
given (scenario, seed) pair always yields identical delivery schedules.
Stochastic loss applies only to data-plane sends (``lossy=True``); a
``blocked`` link drops everything, which is how partitions and killed
sites are modelled.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class LinkState:
    base_latency_us: int
    jitter_us: int
    loss_rate: float
    blocked: bool = False
    last_delivery_us: int = 0


class NetworkModel:
    def __init__(self, base_latency_us: int = 0, jitter_us: int = 0,
                 loss_rate: float = 0.0, seed: int = 0):
        if base_latency_us < 0 or jitter_us < 0:
            raise ValueError("latency and jitter must be non-negative")
        if not 0.0 <= loss_rate < 1.0:
            raise ValueError("loss_rate must lie in [0, 1)")
        self.defaults = (base_latency_us, jitter_us, loss_rate)
        self._rng = random.Random(seed)
        self._links: dict[tuple[str, str], LinkState] = {}

    def link(self, src: str, dst: str) -> LinkState:
        key = (src, dst)
        if key not in self._links:
            lat, jit, loss = self.defaults
            self._links[key] = LinkState(lat, jit, loss)
        return self._links[key]

    def set_link(self, src: str, dst: str, *, base_latency_us: Optional[int] = None,
                 jitter_us: Optional[int] = None, loss_rate: Optional[float] = None,
                 blocked: Optional[bool] = None) -> None:
        link = self.link(src, dst)
        if base_latency_us is not None:
            link.base_latency_us = base_latency_us
        if jitter_us is not None:
            link.jitter_us = jitter_us
        if loss_rate is not None:
            if not 0.0 <= loss_rate <= 1.0:
                raise ValueError("loss_rate must lie in [0, 1]")
            if loss_rate >= 1.0:
                # Total loss is a partition: it silences the control plane too.
                link.blocked = True
            else:
                link.loss_rate = loss_rate
        if blocked is not None:
            link.blocked = blocked

    def block_site(self, site: str, peers: Optional[list[str]] = None) -> None:
        """Partition a site: block every link touching it, both directions."""
        for (src, dst), link in self._links.items():
            if site in (src, dst):
                link.blocked = True
        for peer in peers or []:
            if peer != site:
                self.link(site, peer).blocked = True
                self.link(peer, site).blocked = True

    def transit(self, src: str, dst: str, sent_us: int, lossy: bool) -> Optional[int]:
        """Delivery time for a message sent now, or None if it is dropped."""
        link = self.link(src, dst)
        if link.blocked:
            return None
        if lossy and link.loss_rate > 0.0 and self._rng.random() < link.loss_rate:
            return None
        jitter = self._rng.randint(-link.jitter_us, link.jitter_us) if link.jitter_us else 0
        delivery = sent_us + max(0, link.base_latency_us + jitter)
        # FIFO: never overtake an earlier message on the same link.
        delivery = max(delivery, link.last_delivery_us)
        link.last_delivery_us = delivery
        return delivery


@dataclass(order=True)
class InFlightMessage:
    delivery_us: int
    enqueue_seq: int
    src: str = field(compare=False)
    dst: str = field(compare=False)
    data: bytes = field(compare=False)


class InFlightPool:
    """Messages en route, ordered by (delivery time, enqueue order)."""

    def __init__(self):
        self._heap: list[InFlightMessage] = []
        self._seq = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, delivery_us: int, src: str, dst: str, data: bytes) -> None:
        heapq.heappush(self._heap, InFlightMessage(delivery_us, self._seq, src, dst, data))
        self._seq += 1

    def next_time(self) -> Optional[int]:
        return self._heap[0].delivery_us if self._heap else None

    def purge_site(self, site: str) -> int:
        """Drop in-flight messages touching a site (its links just died)."""
        kept = [m for m in self._heap if site not in (m.src, m.dst)]
        dropped = len(self._heap) - len(kept)
        if dropped:
            self._heap = kept
            heapq.heapify(self._heap)
        return dropped


def deliver(pool: InFlightPool, now_us: int) -> list[InFlightMessage]:
    """Pop every in-flight message due at or before now_us, in order."""
    due = []
    while pool._heap and pool._heap[0].delivery_us <= now_us:
        due.append(heapq.heappop(pool._heap))
    return due
