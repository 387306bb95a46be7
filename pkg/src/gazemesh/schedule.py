"""Display/capture time multiplexing.

A transparent panel shows the remote face for most of each frame and goes
blank for a short capture window, during which the camera behind it may
expose. Everything here is exact integer microsecond arithmetic over a
periodic schedule, so tests can assert bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import InvalidRate, WindowOverflow

DEFAULT_CONTACT_THRESHOLD_DEG = 5.0  # "closely aligned" is not quantified anywhere; assumption


@dataclass(frozen=True)
class FrameSchedule:
    """Periodic frame timing: one capture window per frame.

    Frame k spans [epoch + k*period, epoch + (k+1)*period); its capture
    window is [frame_start + offset, frame_start + offset + duration).
    A zero-duration window means a conventional always-on display.
    """

    period_us: int
    capture_offset_us: int = 0
    capture_duration_us: int = 0
    epoch_us: int = 0

    def __post_init__(self):
        if self.period_us <= 0:
            raise InvalidRate(f"period_us must be positive, got {self.period_us}")
        if self.capture_offset_us < 0 or self.capture_duration_us < 0:
            raise WindowOverflow("capture offset and duration must be non-negative")
        if self.capture_offset_us + self.capture_duration_us > self.period_us:
            raise WindowOverflow(
                f"capture window [{self.capture_offset_us}, "
                f"{self.capture_offset_us + self.capture_duration_us}) exceeds "
                f"period {self.period_us}"
            )


@dataclass(frozen=True)
class OpticalGeometry:
    """First-order camera/gaze alignment at the panel."""

    viewing_distance_mm: float
    camera_lateral_offset_mm: float = 0.0
    contact_threshold_deg: float = DEFAULT_CONTACT_THRESHOLD_DEG

    def __post_init__(self):
        if self.viewing_distance_mm <= 0:
            raise ValueError("viewing_distance_mm must be positive")
        if self.camera_lateral_offset_mm < 0:
            raise ValueError("camera_lateral_offset_mm must be non-negative")
        if self.contact_threshold_deg <= 0:
            raise ValueError("contact_threshold_deg must be positive")


@dataclass(frozen=True)
class GateDecision:
    """Outcome of gating one exposure against the schedule."""

    action: str  # "admit" | "defer" | "too_long"
    next_start_us: int | None = None

    @property
    def admitted(self) -> bool:
        return self.action == "admit"


ADMIT = GateDecision("admit")
TOO_LONG = GateDecision("too_long")


def build_schedule(fps: float, capture_ms: float, offset_ms: float = 0.0,
                   epoch_us: int = 0) -> FrameSchedule:
    """Build a schedule from frame rate and window lengths in milliseconds.

    The period is round(1e6/fps) microseconds; 60 fps gives 16667 us.
    Raises InvalidRate for non-positive fps and WindowOverflow when the
    rounded window does not fit in the rounded period.
    """
    if fps <= 0:
        raise InvalidRate(f"fps must be positive, got {fps}")
    if capture_ms < 0 or offset_ms < 0:
        raise WindowOverflow("capture_ms and offset_ms must be non-negative")
    period_us = round(1e6 / fps)
    return FrameSchedule(
        period_us=period_us,
        capture_offset_us=round(offset_ms * 1000),
        capture_duration_us=round(capture_ms * 1000),
        epoch_us=epoch_us,
    )


def display_duty(s: FrameSchedule) -> Fraction:
    """Fraction of each frame the panel displays content, exact."""
    return Fraction(s.period_us - s.capture_duration_us, s.period_us)


def in_capture_window(s: FrameSchedule, t_us: int) -> bool:
    """True iff instant t_us falls inside some capture window."""
    if s.capture_duration_us == 0:
        return False
    phase = (t_us - s.epoch_us) % s.period_us
    return s.capture_offset_us <= phase < s.capture_offset_us + s.capture_duration_us


def capture_windows(s: FrameSchedule, from_us: int, to_us: int) -> list[tuple[int, int]]:
    """Capture windows intersecting [from_us, to_us), clipped to that range.

    Returns sorted, pairwise-disjoint half-open [start, end) pairs.
    """
    if from_us > to_us:
        raise ValueError("from_us must not exceed to_us")
    if s.capture_duration_us == 0 or from_us == to_us:
        return []
    base = s.epoch_us + s.capture_offset_us
    # First frame index whose window end lies strictly after from_us.
    k = (from_us - base - s.capture_duration_us) // s.period_us + 1
    out = []
    while True:
        start = base + k * s.period_us
        if start >= to_us:
            break
        end = start + s.capture_duration_us
        lo, hi = max(start, from_us), min(end, to_us)
        if lo < hi:
            out.append((lo, hi))
        k += 1
    return out


def gate_capture(s: FrameSchedule, exposure_start_us: int, exposure_us: int) -> GateDecision:
    """Decide whether an exposure may run under the schedule.

    Admit iff the exposure interval lies wholly inside one capture window
    (point exposures must start strictly inside an open window). Otherwise
    defer to the start of the earliest window at or after the requested
    start, or report the exposure as too long for any window.
    """
    if exposure_us < 0:
        raise ValueError("exposure_us must be non-negative")
    if exposure_us > s.capture_duration_us:
        return TOO_LONG
    base = s.epoch_us + s.capture_offset_us
    if s.capture_duration_us > 0:
        phase = (exposure_start_us - base) % s.period_us
        if phase < s.capture_duration_us and phase + exposure_us <= s.capture_duration_us:
            return ADMIT
    # Earliest window start >= exposure_start_us.
    k = -((base - exposure_start_us) // s.period_us)
    next_start = base + k * s.period_us
    if next_start < exposure_start_us:
        next_start += s.period_us
    return GateDecision("defer", next_start_us=next_start)


def parallax_angle(g: OpticalGeometry) -> float:
    """Angle in degrees between the gaze line and the camera axis."""
    return math.degrees(math.atan2(g.camera_lateral_offset_mm, g.viewing_distance_mm))


def contact_perceived(g: OpticalGeometry) -> bool:
    """True when the parallax angle stays under the contact threshold."""
    return parallax_angle(g) < g.contact_threshold_deg
