"""gazemesh: time-multiplexed capture scheduling, round-table seating,
mutual-gaze detection, and a full-mesh session layer for multi-party
see-through-display conversations.
"""

from .errors import (
    DuplicateId,
    DuplicateJoin,
    GazemeshError,
    InvalidRate,
    NonMonotonicTime,
    ProtocolError,
    ScenarioError,
    SelfGaze,
    SessionFull,
    SlotOutOfRange,
    TooFew,
    UnknownParticipant,
    UnsortedTrace,
    WindowOverflow,
)
from .gaze import (
    DEFAULT_DEBOUNCE_US,
    ExclusionInterval,
    GazeTracker,
    GazeUpdate,
    MutualGazeEpisode,
    SessionStats,
    episodes_from_trace,
    exclusion_intervals,
    fold_trace,
    pair_key,
    session_stats,
)
from .network import NetworkModel
from .protocol import SessionMessage, decode_message, encode_message
from .schedule import (
    FrameSchedule,
    GateDecision,
    OpticalGeometry,
    build_schedule,
    capture_windows,
    contact_perceived,
    display_duty,
    gate_capture,
    in_capture_window,
    parallax_angle,
)
from .seating import (
    SeatingRing,
    SlotMap,
    make_ring,
    remove_member,
    resolve_gaze_target,
    slot_map_for,
    verify_global_consistency,
)
from .session import (
    AgreementReport,
    SessionConfig,
    SessionView,
    Simulation,
    reconcile_views,
)

__version__ = "0.1.0"
