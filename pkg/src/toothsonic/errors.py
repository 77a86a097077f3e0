"""Error taxonomy shared by every module.

Each class name doubles as the machine-readable error code emitted by the
command line front end, so the names are part of the stable interface.
"""


class ToothsonicError(Exception):
    """Base class for all toolkit errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class EmptyInput(ToothsonicError):
    """An operation received a clip or sequence with no samples."""


class InvalidInput(ToothsonicError):
    """Malformed values: non-finite samples, wrong rate, bad shapes."""


class InvalidBand(ToothsonicError):
    """Band edges violate 0 < low < high <= sample_rate / 2."""


class TooShort(ToothsonicError):
    """Input shorter than one analysis frame."""


class InvalidGesture(ToothsonicError):
    """Gesture id outside the known 1..10 catalog."""


class InvalidLabel(ToothsonicError):
    """A label index is outside the model's class range."""


class InvalidDataset(ToothsonicError):
    """Training data unusable: fewer than two classes or samples."""


class UnknownSubject(ToothsonicError):
    """A claimed identity that the model was never trained on."""


class InvalidProtocol(ToothsonicError):
    """Evaluation protocol preconditions violated (fold counts, pairing)."""


class EmptyProtocol(ToothsonicError):
    """A protocol produced zero authentication attempts."""


class IoError(ToothsonicError):
    """File missing, unreadable, or in a rejected on-disk format."""
