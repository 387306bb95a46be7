"""Exception types shared across the package."""


class GazemeshError(Exception):
    """Base class for all domain errors."""


class InvalidRate(GazemeshError):
    """Frame rate must be positive."""


class WindowOverflow(GazemeshError):
    """Capture window does not fit inside the frame period."""


class DuplicateId(GazemeshError):
    """A participant id appears more than once."""


class TooFew(GazemeshError):
    """A conversation needs at least two participants."""


class UnknownParticipant(GazemeshError):
    """Referenced participant is not part of the ring/state."""


class SlotOutOfRange(GazemeshError):
    """Slot index outside the owner's slot map."""


class SelfGaze(GazemeshError):
    """A participant cannot target itself."""


class NonMonotonicTime(GazemeshError):
    """Update is older than the participant's last applied update."""


class UnsortedTrace(GazemeshError):
    """Trace updates are not ordered by timestamp."""


class DuplicateJoin(GazemeshError):
    """Participant is already a session member."""


class SessionFull(GazemeshError):
    """Session reached its membership cap."""


class ProtocolError(GazemeshError):
    """Malformed or out-of-contract wire message."""


class ScenarioError(GazemeshError):
    """Scenario file violates the input schema."""
