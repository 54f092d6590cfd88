"""Wire format: length-prefixed frames and message codecs.

Frame = 4-byte big-endian payload length, 1-byte message type, payload.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ProtocolViolation

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 1 << 30

HELLO = 0x01
HELLO_ACK = 0x02
WINDOW_BASES = 0x10
STAGE_RESPONSES = 0x11
CMP_SETUP = 0x20
CMP_MILLIONAIRE = 0x21
CMP_OT = 0x22
CMP_MOCK = 0x23
STAGE_CONTROL = 0x30
WINDOW_DONE = 0x31

MESSAGE_NAMES = {
    HELLO: "HELLO", HELLO_ACK: "HELLO_ACK", WINDOW_BASES: "WINDOW_BASES",
    STAGE_RESPONSES: "STAGE_RESPONSES", CMP_SETUP: "CMP_SETUP",
    CMP_MILLIONAIRE: "CMP_MILLIONAIRE", CMP_OT: "CMP_OT", CMP_MOCK: "CMP_MOCK",
    STAGE_CONTROL: "STAGE_CONTROL", WINDOW_DONE: "WINDOW_DONE",
}

# HELLO mode byte: low nibble = stage mode, bit 4 = public-key comparisons
MODE_SHORT_CIRCUIT = 0
MODE_CONSTANT_STAGES = 1
MODE_PUBLIC_KEY = 0x10

_HDR = struct.Struct(">IB")


def frame(msg_type: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolViolation(f"payload of {len(payload)} bytes exceeds limit")
    return _HDR.pack(len(payload), msg_type) + payload


def parse_header(header: bytes) -> tuple[int, int]:
    length, msg_type = _HDR.unpack(header)
    if length > MAX_PAYLOAD:
        raise ProtocolViolation(f"announced payload of {length} bytes exceeds limit")
    return length, msg_type


HEADER_SIZE = _HDR.size


def _need(payload: bytes, n: int, what: str):
    if len(payload) < n:
        raise ProtocolViolation(f"{what}: payload truncated ({len(payload)} < {n} bytes)")


@dataclass(frozen=True)
class Hello:
    version: int
    cascade_id: str
    m: int
    mode: int

    def encode(self) -> bytes:
        return (struct.pack(">H", self.version) + self.cascade_id.encode("utf-8")
                + struct.pack(">HB", self.m, self.mode))

    @classmethod
    def decode(cls, payload: bytes) -> "Hello":
        _need(payload, 5, "HELLO")
        (version,) = struct.unpack_from(">H", payload, 0)
        m, mode = struct.unpack_from(">HB", payload, len(payload) - 3)
        try:
            cid = payload[2:len(payload) - 3].decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolViolation("HELLO: cascade id is not UTF-8") from None
        return cls(version, cid, m, mode)


@dataclass(frozen=True)
class HelloAck:
    width: int
    height: int
    counts: tuple[int, ...]

    def encode(self) -> bytes:
        n = len(self.counts)
        return struct.pack(f">HHH{n}H", self.width, self.height, n, *self.counts)

    @classmethod
    def decode(cls, payload: bytes) -> "HelloAck":
        _need(payload, 6, "HELLO_ACK")
        w, h, n = struct.unpack_from(">HHH", payload, 0)
        if len(payload) != 6 + 2 * n:
            raise ProtocolViolation("HELLO_ACK: stage count does not match payload")
        return cls(w, h, struct.unpack_from(f">{n}H", payload, 6))


@dataclass(frozen=True)
class WindowBases:
    window_id: int
    plane_count: int
    planes: bytes

    def encode(self) -> bytes:
        return struct.pack(">QH", self.window_id, self.plane_count) + self.planes

    @classmethod
    def decode(cls, payload: bytes) -> "WindowBases":
        _need(payload, 10, "WINDOW_BASES")
        wid, m = struct.unpack_from(">QH", payload, 0)
        return cls(wid, m, payload[10:])


@dataclass(frozen=True)
class StageResponses:
    window_id: int
    stage: int
    matrix: np.ndarray          # (n, M) int64

    def encode(self) -> bytes:
        return struct.pack(">QH", self.window_id, self.stage) + \
            np.ascontiguousarray(self.matrix, dtype=">i8").tobytes()

    @classmethod
    def decode(cls, payload: bytes, m: int) -> "StageResponses":
        _need(payload, 10, "STAGE_RESPONSES")
        wid, stage = struct.unpack_from(">QH", payload, 0)
        body = payload[10:]
        if len(body) % (8 * m):
            raise ProtocolViolation("STAGE_RESPONSES: body is not a whole number of rows")
        mat = np.frombuffer(body, dtype=">i8").astype(np.int64).reshape(-1, m)
        return cls(wid, stage, mat)


@dataclass(frozen=True)
class StageControl:
    window_id: int
    proceed: bool

    def encode(self) -> bytes:
        return struct.pack(">QB", self.window_id, 1 if self.proceed else 0)

    @classmethod
    def decode(cls, payload: bytes) -> "StageControl":
        if len(payload) != 9:
            raise ProtocolViolation("STAGE_CONTROL: wrong length")
        wid, flag = struct.unpack(">QB", payload)
        if flag not in (0, 1):
            raise ProtocolViolation("STAGE_CONTROL: flag must be 0 or 1")
        return cls(wid, bool(flag))


@dataclass(frozen=True)
class WindowDone:
    window_id: int

    def encode(self) -> bytes:
        return struct.pack(">Q", self.window_id)

    @classmethod
    def decode(cls, payload: bytes) -> "WindowDone":
        if len(payload) != 8:
            raise ProtocolViolation("WINDOW_DONE: wrong length")
        return cls(struct.unpack(">Q", payload)[0])


# ---------------------------------------------------------------------------
# Comparison sub-messages: {comparison id u32, sub-type u8, body}

def cmp_pack(cid: int, sub: int, body: bytes) -> bytes:
    return struct.pack(">IB", cid, sub) + body


def cmp_unpack(payload: bytes) -> tuple[int, int, bytes]:
    _need(payload, 5, "comparison message")
    cid, sub = struct.unpack_from(">IB", payload, 0)
    return cid, sub, payload[5:]


def pack_bigint(v: int) -> bytes:
    v = int(v)
    if v < 0:
        raise ValueError("big integers on the wire are non-negative")
    raw = v.to_bytes((v.bit_length() + 7) // 8, "big")
    if len(raw) > 0xFFFF:
        raise ValueError("big integer too long")
    return struct.pack(">H", len(raw)) + raw


def pack_bigints(values: Iterable[int]) -> bytes:
    return b"".join(pack_bigint(v) for v in values)


def unpack_bigints(data: bytes, count: int, offset: int = 0) -> tuple[list[int], int]:
    out = []
    for _ in range(count):
        if offset + 2 > len(data):
            raise ProtocolViolation("truncated big integer")
        (n,) = struct.unpack_from(">H", data, offset)
        offset += 2
        if offset + n > len(data):
            raise ProtocolViolation("truncated big integer")
        out.append(int.from_bytes(data[offset:offset + n], "big"))
        offset += n
    return out, offset


def pack_i64(values: Sequence[int]) -> bytes:
    return np.asarray(values, dtype=">i8").tobytes()


def unpack_i64(data: bytes, count: int, offset: int = 0) -> np.ndarray:
    end = offset + 8 * count
    if end > len(data):
        raise ProtocolViolation("truncated int64 array")
    return np.frombuffer(data[offset:end], dtype=">i8").astype(np.int64)
