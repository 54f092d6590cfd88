"""Blind Viola-Jones detection with random base images.

A client classifies image windows with a server's Haar cascade; the server
sees only shuffled random binary planes and the client sees only comparison
outcomes. A plain detector over the same fixed-point cascade serves as the
bit-exact reference.
"""
from .cascade import Cascade, cascade_stats, load_cascade, parse_cascade
from .detector import DetectParams, Detection, classify_window, classify_windows, detect
from .errors import (AuditUnavailable, ChannelError, CorruptBaseImages, ParseError,
                     ProtocolViolation, QuantizationError, RangeError, RBIError, SessionError,
                     UnsupportedCascade)
from .integral import QuantizedCascade, integral, quantize
from .protocol import (AliceSession, BobSession, LocalServer, ServerConfig, WindowVerdict,
                       alice_detect_secure, inject_fakes)
from .rbi import factorize, reconstruct, recombine, shuffle
from .rng import StreamRandom

__version__ = "0.1.0"

__all__ = [
    "AliceSession", "AuditUnavailable", "BobSession", "Cascade", "ChannelError",
    "CorruptBaseImages", "DetectParams", "Detection", "LocalServer", "ParseError",
    "ProtocolViolation", "QuantizationError", "QuantizedCascade", "RBIError", "RangeError",
    "ServerConfig", "SessionError", "StreamRandom", "UnsupportedCascade", "WindowVerdict",
    "alice_detect_secure", "cascade_stats", "classify_window", "classify_windows", "detect",
    "factorize", "inject_fakes", "integral", "load_cascade", "parse_cascade", "quantize",
    "reconstruct", "recombine", "shuffle",
]
