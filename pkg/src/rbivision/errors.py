"""Exception hierarchy shared by every module."""


class RBIError(Exception):
    """Base class for all package errors."""


class ParseError(RBIError):
    """Malformed cascade document or cascade dump."""


class UnsupportedCascade(RBIError):
    """Cascade uses a layout or feature this package does not evaluate."""


class QuantizationError(RBIError):
    """Fixed-point parameters would not fit the comparison domain."""


class CorruptBaseImages(RBIError):
    """Base images reconstruct to a pixel outside [0, 255]."""


class RangeError(RBIError):
    """Recombined response exceeds the comparison bit budget."""


class ChannelError(RBIError):
    """Transport failed or the peer closed the connection."""


class ProtocolViolation(RBIError):
    """Peer sent a malformed, unexpected or out-of-order message."""


class SessionError(RBIError):
    """Session could not be established (unknown cascade, bad hello)."""


class AuditUnavailable(RBIError):
    """Transcript lacks the payloads needed for an audit."""
