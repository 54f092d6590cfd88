import numpy as np
import pytest
from hypothesis import given, strategies as st

from rbivision import wire
from rbivision.errors import ProtocolViolation


def test_frame_layout():
    assert wire.frame(0x10, b"abc") == b"\x00\x00\x00\x03\x10abc"
    assert wire.parse_header(b"\x00\x00\x00\x03\x10") == (3, 0x10)
    with pytest.raises(ProtocolViolation):
        wire.parse_header((wire.MAX_PAYLOAD + 1).to_bytes(4, "big") + b"\x01")


def test_hello_bytes():
    h = wire.Hello(1, "face", 256, wire.MODE_CONSTANT_STAGES | wire.MODE_PUBLIC_KEY)
    assert h.encode() == b"\x00\x01face\x01\x00\x11"
    assert wire.Hello.decode(h.encode()) == h
    with pytest.raises(ProtocolViolation):
        wire.Hello.decode(b"\x00\x01")


def test_hello_ack_bytes():
    a = wire.HelloAck(24, 24, (11, 16))
    assert a.encode() == b"\x00\x18\x00\x18\x00\x02\x00\x0b\x00\x10"
    assert wire.HelloAck.decode(a.encode()) == a
    with pytest.raises(ProtocolViolation):
        wire.HelloAck.decode(a.encode()[:-1])


def test_window_bases_and_responses():
    wb = wire.WindowBases(2 ** 64 - 1, 256, b"\x01\x02")
    assert wb.encode()[:10] == b"\xff" * 8 + b"\x01\x00"
    assert wire.WindowBases.decode(wb.encode()) == wb
    mat = np.array([[1, -2, 3], [2 ** 40, 0, -(2 ** 40)]], np.int64)
    sr = wire.StageResponses(7, 3, mat)
    enc = sr.encode()
    assert enc[:10] == (7).to_bytes(8, "big") + b"\x00\x03"
    assert enc[10:18] == (1).to_bytes(8, "big", signed=True)
    assert enc[18:26] == (-2).to_bytes(8, "big", signed=True)
    back = wire.StageResponses.decode(enc, 3)
    assert back.window_id == 7 and back.stage == 3 and np.array_equal(back.matrix, mat)
    with pytest.raises(ProtocolViolation):
        wire.StageResponses.decode(enc[:-1], 3)


def test_control_messages():
    assert wire.StageControl(9, False).encode() == (9).to_bytes(8, "big") + b"\x00"
    assert wire.StageControl.decode(wire.StageControl(9, True).encode()).proceed
    assert wire.WindowDone.decode(wire.WindowDone(4).encode()).window_id == 4
    for bad in (b"", b"\x00" * 8 + b"\x02"):
        with pytest.raises(ProtocolViolation):
            wire.StageControl.decode(bad)
    with pytest.raises(ProtocolViolation):
        wire.WindowDone.decode(b"\x00")


@given(st.lists(st.integers(0, 2 ** 2000), max_size=8))
def test_bigint_round_trip(values):
    data = wire.pack_bigints(values)
    back, end = wire.unpack_bigints(data, len(values))
    assert back == values and end == len(data)


def test_bigint_encoding():
    assert wire.pack_bigint(0x0102) == b"\x00\x02\x01\x02"
    assert wire.pack_bigint(0) == b"\x00\x00"
    with pytest.raises(ValueError):
        wire.pack_bigint(-1)
    with pytest.raises(ProtocolViolation):
        wire.unpack_bigints(b"\x00\x05\x01", 1)


def test_comparison_header():
    assert wire.cmp_pack(1, 2, b"x") == b"\x00\x00\x00\x01\x02x"
    assert wire.cmp_unpack(b"\x00\x00\x00\x01\x02x") == (1, 2, b"x")
    with pytest.raises(ProtocolViolation):
        wire.cmp_unpack(b"\x00")


def test_i64_arrays():
    v = [-1, 0, 2 ** 62]
    assert wire.pack_i64(v)[:8] == b"\xff" * 8
    assert wire.unpack_i64(wire.pack_i64(v), 3).tolist() == v
    with pytest.raises(ProtocolViolation):
        wire.unpack_i64(b"\x00" * 7, 1)
