"""Message channels, transcripts and a two-thread runner for tests."""
from __future__ import annotations

import collections
import hashlib
import socket
import struct
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from .errors import ChannelError, ProtocolViolation
from . import wire

DEFAULT_TIMEOUT = 120.0


class Channel:
    """Reliable, in-order message port."""

    def send(self, msg_type: int, payload: bytes) -> None:
        raise NotImplementedError

    def recv(self) -> tuple[int, bytes]:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def expect(self, msg_type: int) -> bytes:
        t, payload = self.recv()
        if t != msg_type:
            raise ProtocolViolation(
                f"expected {wire.MESSAGE_NAMES.get(msg_type, hex(msg_type))}, "
                f"got {wire.MESSAGE_NAMES.get(t, hex(t))}")
        return payload


class _Mailbox:
    def __init__(self):
        self.items = collections.deque()
        self.cond = threading.Condition()
        self.closed = False


class LoopbackChannel(Channel):
    """One end of an in-process channel pair."""

    def __init__(self, inbox: _Mailbox, outbox: _Mailbox, timeout: float = DEFAULT_TIMEOUT):
        self._in = inbox
        self._out = outbox
        self.timeout = timeout

    @classmethod
    def pair(cls, timeout: float = DEFAULT_TIMEOUT) -> tuple["LoopbackChannel", "LoopbackChannel"]:
        a, b = _Mailbox(), _Mailbox()
        return cls(a, b, timeout), cls(b, a, timeout)

    def send(self, msg_type, payload):
        with self._out.cond:
            if self._out.closed:
                raise ChannelError("peer closed the channel")
            self._out.items.append((msg_type, bytes(payload)))
            self._out.cond.notify()

    def recv(self):
        with self._in.cond:
            deadline = time.monotonic() + self.timeout
            while not self._in.items:
                if self._in.closed:
                    raise ChannelError("channel closed")
                left = deadline - time.monotonic()
                if left <= 0:
                    raise ChannelError("receive timed out")
                self._in.cond.wait(left)
            return self._in.items.popleft()

    def close(self):
        for box in (self._in, self._out):
            with box.cond:
                box.closed = True
                box.cond.notify_all()


class SocketChannel(Channel):
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._rfile = sock.makefile("rb")

    def send(self, msg_type, payload):
        try:
            self.sock.sendall(wire.frame(msg_type, payload))
        except OSError as exc:
            raise ChannelError(f"send failed: {exc}") from None

    def _read(self, n: int) -> bytes:
        try:
            data = self._rfile.read(n)
        except OSError as exc:
            raise ChannelError(f"receive failed: {exc}") from None
        if data is None or len(data) < n:
            raise ChannelError("connection closed by peer")
        return data

    def recv(self):
        length, msg_type = wire.parse_header(self._read(wire.HEADER_SIZE))
        return msg_type, self._read(length) if length else b""

    def close(self):
        try:
            self._rfile.close()
            self.sock.close()
        except OSError:
            pass


def connect(address: str, timeout: Optional[float] = None) -> SocketChannel:
    host, _, port = address.rpartition(":")
    try:
        sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
    except (OSError, ValueError) as exc:
        raise ChannelError(f"cannot connect to {address}: {exc}") from None
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketChannel(sock)


class LatencyChannel(Channel):
    """Delays every outgoing message by a fixed amount."""

    def __init__(self, inner: Channel, latency_ms: float):
        self.inner = inner
        self.latency = latency_ms / 1000.0

    def send(self, msg_type, payload):
        if self.latency > 0:
            time.sleep(self.latency)
        self.inner.send(msg_type, payload)

    def recv(self):
        return self.inner.recv()

    def close(self):
        self.inner.close()


# ---------------------------------------------------------------------------
# Transcripts

CLIENT_TO_SERVER = 0
SERVER_TO_CLIENT = 1
_TRANSCRIPT_MAGIC = b"RBITRN01"
_REC = struct.Struct(">BQ32s")


@dataclass
class TranscriptRecord:
    direction: int
    t_ns: int
    msg_type: int
    length: int
    digest: bytes
    payload: Optional[bytes] = None


@dataclass
class Transcript:
    """Append-only log of framed messages.

    File layout: magic, one flags byte (1 = payloads kept), then per record
    ``direction u8 | t_ns u64 | sha256[32] | frame header | payload?``.
    """
    debug: bool = False
    records: list = field(default_factory=list)

    def append(self, direction: int, msg_type: int, payload: bytes) -> None:
        self.records.append(TranscriptRecord(
            direction, time.monotonic_ns(), msg_type, len(payload),
            hashlib.sha256(payload).digest(), bytes(payload) if self.debug else None))

    def __iter__(self) -> Iterator[TranscriptRecord]:
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def to_bytes(self) -> bytes:
        out = [_TRANSCRIPT_MAGIC, bytes([1 if self.debug else 0])]
        for r in self.records:
            out.append(_REC.pack(r.direction, r.t_ns, r.digest))
            out.append(struct.pack(">IB", r.length, r.msg_type))
            if self.debug:
                out.append(r.payload)
        return b"".join(out)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transcript":
        if not data.startswith(_TRANSCRIPT_MAGIC) or len(data) < 9:
            raise ValueError("not a transcript file")
        debug = data[8] == 1
        t = cls(debug=debug)
        off = 9
        while off < len(data):
            d, t_ns, digest = _REC.unpack_from(data, off)
            off += _REC.size
            length, msg_type = struct.unpack_from(">IB", data, off)
            off += 5
            payload = None
            if debug:
                payload = data[off:off + length]
                off += length
            t.records.append(TranscriptRecord(d, t_ns, msg_type, length, digest, payload))
        return t

    @classmethod
    def load(cls, path) -> "Transcript":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class RecordingChannel(Channel):
    """Logs traffic into a transcript; ``outbound`` is the direction of sends."""

    def __init__(self, inner: Channel, transcript: Transcript, outbound: int = CLIENT_TO_SERVER):
        self.inner = inner
        self.transcript = transcript
        self.outbound = outbound

    def send(self, msg_type, payload):
        self.transcript.append(self.outbound, msg_type, payload)
        self.inner.send(msg_type, payload)

    def recv(self):
        t, payload = self.inner.recv()
        self.transcript.append(1 - self.outbound, t, payload)
        return t, payload

    def close(self):
        self.inner.close()


class CountingChannel(Channel):
    """Counts messages and bytes in each direction."""

    def __init__(self, inner: Channel):
        self.inner = inner
        self.sent_messages = self.sent_bytes = 0
        self.recv_messages = self.recv_bytes = 0

    def send(self, msg_type, payload):
        self.sent_messages += 1
        self.sent_bytes += len(payload) + wire.HEADER_SIZE
        self.inner.send(msg_type, payload)

    def recv(self):
        t, payload = self.inner.recv()
        self.recv_messages += 1
        self.recv_bytes += len(payload) + wire.HEADER_SIZE
        return t, payload

    def close(self):
        self.inner.close()


# ---------------------------------------------------------------------------

class PhaseTimer:
    """Accumulates wall time per named phase."""

    def __init__(self):
        self.totals: dict[str, float] = collections.defaultdict(float)

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - t0

    def merge(self, other: "PhaseTimer") -> None:
        for k, v in other.totals.items():
            self.totals[k] += v


def run_two_party(alice: Callable[[Channel], object], bob: Callable[[Channel], object],
                  timeout: float = DEFAULT_TIMEOUT):
    """Run ``alice`` here and ``bob`` on a thread over a loopback pair.

    Returns ``(alice_result, bob_result)``; an exception on either side is
    re-raised after both ends are closed.
    """
    ca, cb = LoopbackChannel.pair(timeout)
    box: dict = {}

    def _bob():
        try:
            box["result"] = bob(cb)
        except BaseException as exc:  # noqa: BLE001 - re-raised on the caller's thread
            box["error"] = exc
            cb.close()

    th = threading.Thread(target=_bob, daemon=True)
    th.start()
    try:
        ra = alice(ca)
    except BaseException:
        ca.close()
        th.join(timeout)
        if "error" in box:
            raise box["error"]
        raise
    th.join(timeout)
    ca.close()
    if "error" in box:
        raise box["error"]
    return ra, box.get("result")
