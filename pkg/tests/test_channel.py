import socket
import threading

import pytest

from rbivision import wire
from rbivision.channel import (CLIENT_TO_SERVER, SERVER_TO_CLIENT, CountingChannel,
                               LatencyChannel, LoopbackChannel, PhaseTimer, RecordingChannel,
                               SocketChannel, Transcript, connect, run_two_party)
from rbivision.errors import ChannelError, ProtocolViolation


def test_loopback_in_order():
    a, b = LoopbackChannel.pair()
    for i in range(5):
        a.send(0x10, bytes([i]))
    assert [b.recv() for _ in range(5)] == [(0x10, bytes([i])) for i in range(5)]


def test_loopback_close_and_timeout():
    a, b = LoopbackChannel.pair(timeout=0.05)
    with pytest.raises(ChannelError, match="timed out"):
        b.recv()
    a.close()
    with pytest.raises(ChannelError):
        b.recv()
    with pytest.raises(ChannelError):
        b.send(1, b"")


def test_expect_checks_type():
    a, b = LoopbackChannel.pair()
    a.send(wire.HELLO, b"x")
    with pytest.raises(ProtocolViolation, match="expected WINDOW_DONE, got HELLO"):
        b.expect(wire.WINDOW_DONE)


def test_run_two_party_surfaces_errors():
    def bob(ch):
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError, match="boom"):
        run_two_party(lambda ch: ch.recv(), bob)
    assert run_two_party(lambda ch: ch.recv(), lambda ch: ch.send(1, b"hi")) == ((1, b"hi"), None)


def test_socket_channel_frames():
    srv = socket.socket()
    srv.bind(("127.0.0.1", 0))
    srv.listen(1)
    port = srv.getsockname()[1]
    got = {}

    def serve():
        conn, _ = srv.accept()
        ch = SocketChannel(conn)
        got["msg"] = ch.recv()
        ch.send(wire.HELLO_ACK, b"")
        ch.close()

    th = threading.Thread(target=serve)
    th.start()
    ch = connect(f"127.0.0.1:{port}")
    ch.send(wire.HELLO, b"payload")
    assert ch.recv() == (wire.HELLO_ACK, b"")
    with pytest.raises(ChannelError):
        ch.recv()
    ch.close()
    th.join()
    srv.close()
    assert got["msg"] == (wire.HELLO, b"payload")


def test_connect_failure():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(ChannelError):
        connect(f"127.0.0.1:{port}", timeout=1)


def test_transcript_round_trip(tmp_path):
    for debug in (False, True):
        t = Transcript(debug=debug)
        a, b = LoopbackChannel.pair()
        rec = RecordingChannel(a, t)
        rec.send(wire.HELLO, b"abc")
        b.send(wire.HELLO_ACK, b"de")
        rec.recv()
        t.save(tmp_path / "t.bin")
        back = Transcript.load(tmp_path / "t.bin")
        assert back.debug == debug and len(back) == 2
        assert [(r.direction, r.msg_type, r.length) for r in back] == [
            (CLIENT_TO_SERVER, wire.HELLO, 3), (SERVER_TO_CLIENT, wire.HELLO_ACK, 2)]
        assert [r.payload for r in back] == ([b"abc", b"de"] if debug else [None, None])
        assert back.records[0].digest == t.records[0].digest
    with pytest.raises(ValueError):
        Transcript.from_bytes(b"junk")


def test_counting_and_latency():
    a, b = LoopbackChannel.pair()
    c = CountingChannel(LatencyChannel(a, 1.0))
    c.send(1, b"abcd")
    b.send(2, b"")
    c.recv()
    assert (c.sent_messages, c.sent_bytes, c.recv_messages, c.recv_bytes) == (1, 9, 1, 5)


def test_phase_timer():
    t = PhaseTimer()
    with t.phase("x"):
        pass
    other = PhaseTimer()
    with other.phase("x"):
        pass
    t.merge(other)
    assert set(t.totals) == {"x"} and t.totals["x"] >= 0
