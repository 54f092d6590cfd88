"""Blind detection sessions: Alice (image owner) and Bob (cascade owner).

Per window Alice uploads shuffled random base images. For every stage Bob
answers with the feature response of each plane for a permuted mix of true
and fake weak classifiers; Alice recombines them with her secret weights and
the two run private comparisons:

1. ``F(n) > theta_n`` for every slot n (Alice learns the bit),
2. an oblivious transfer that hands Alice ``c_n = leaf_n + s_n``,
3. ``sum(c_n) > sum(s_n) + T - 1``, which is the stage test ``sum(leaf) >= T``.

Bob never sees the weights, the recombined responses or any comparison
result. In short-circuit mode Alice tells him after each stage whether to go
on, which reveals how far each window got.
"""
from __future__ import annotations

import logging
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rbi, wire
from .audit import WindowSecrets
from .channel import Channel, LoopbackChannel, PhaseTimer, SocketChannel
from .detector import DetectParams, Detection, enumerate_windows, group_detections
from .errors import ChannelError, ProtocolViolation, RangeError, SessionError
from .integral import COMPARE_BITS, FeatureTable, QStage, QuantizedCascade, integral_cells
from .oblivious import make_client, make_server
from .paillier import DEFAULT_KEY_BITS
from .rng import StreamRandom, as_rng

log = logging.getLogger(__name__)

SHORT_CIRCUIT = "short_circuit"
CONSTANT_STAGES = "constant_stages"
STAGE_MODES = (SHORT_CIRCUIT, CONSTANT_STAGES)
BLIND_MAX = 1 << 20


def _mode_byte(stage_mode: str, backend: str) -> int:
    if stage_mode not in STAGE_MODES:
        raise ValueError(f"unknown stage mode {stage_mode!r}")
    b = wire.MODE_CONSTANT_STAGES if stage_mode == CONSTANT_STAGES else wire.MODE_SHORT_CIRCUIT
    if backend == "paillier":
        b |= wire.MODE_PUBLIC_KEY
    elif backend != "mock":
        raise ValueError(f"unknown comparison backend {backend!r}")
    return b


def _parse_mode(b: int) -> tuple[str, str]:
    low = b & 0x0F
    if low not in (wire.MODE_SHORT_CIRCUIT, wire.MODE_CONSTANT_STAGES) or b & ~0x1F:
        raise ProtocolViolation(f"unknown HELLO mode byte {b:#04x}")
    return (CONSTANT_STAGES if low == wire.MODE_CONSTANT_STAGES else SHORT_CIRCUIT,
            "paillier" if b & wire.MODE_PUBLIC_KEY else "mock")


# ---------------------------------------------------------------------------
# Fake classifiers


@dataclass
class ObfuscatedStage:
    """Bob's private per-stage state. Only ``count`` is ever announced."""
    table: FeatureTable
    thetas: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    blinds: np.ndarray
    permutation: np.ndarray      # slot j holds source classifier permutation[j]
    true_count: int
    stage_threshold: int

    @property
    def count(self) -> int:
        return len(self.thetas)

    @property
    def sum_operand(self) -> int:
        # sum(c) > sum(s) + T - 1  <=>  sum(leaf) >= T on integers
        return int(self.blinds.sum()) + self.stage_threshold - 1

    @property
    def is_fake(self) -> np.ndarray:
        return self.permutation >= self.true_count


def fake_features(k: int, width: int, height: int, q_feat: int, rng: StreamRandom) -> FeatureTable:
    """``k`` random two-rectangle Haar-like features inside a width x height window.

    Each is a box weighted -1 with one of its two halves or its middle third
    weighted +2 or +3, in horizontal or vertical orientation.
    """
    if k == 0:
        z = np.zeros((0, 12), dtype=np.int64)
        return FeatureTable.from_arrays(z, z, z)
    parts = rng.integers(np.full(k, 2), 3)                 # 2 halves or 3 thirds
    vertical = rng.integers(np.zeros(k), 1).astype(bool)
    span = np.where(vertical, height, width)
    other = np.where(vertical, width, height)
    ok = span // parts >= 1
    parts = np.where(ok, parts, 1)                         # degenerate tiny windows
    cell = rng.integers(np.ones(k), np.maximum(span // parts, 1))
    length = rng.integers(np.ones(k), other)
    w = np.where(vertical, length, cell * parts)
    h = np.where(vertical, cell * parts, length)
    x = rng.integers(np.zeros(k), width - w)
    y = rng.integers(np.zeros(k), height - h)
    # second rectangle: the half/third that starts one cell in
    x2 = np.where(vertical, x, x + cell * (parts > 1))
    y2 = np.where(vertical, y + cell * (parts > 1), y)
    w2 = np.where(vertical, w, cell)
    h2 = np.where(vertical, cell, h)
    rects = [(x, y, w, h, np.full(k, -q_feat)), (x2, y2, w2, h2, parts * q_feat)]
    dy = np.zeros((k, 12), dtype=np.int64)
    dx = np.zeros((k, 12), dtype=np.int64)
    coef = np.zeros((k, 12), dtype=np.int64)
    for j, (rx, ry, rw, rh, wt) in enumerate(rects):
        corners = ((ry + rh, rx + rw, 1), (ry, rx + rw, -1), (ry + rh, rx, -1), (ry, rx, 1))
        for c, (cy, cx, sign) in enumerate(corners):
            dy[:, 4 * j + c] = cy
            dx[:, 4 * j + c] = cx
            coef[:, 4 * j + c] = sign * wt
    return FeatureTable.from_arrays(dy, dx, coef)


def _fake_thresholds(stage: QStage, k: int, q_feat: int, rng: StreamRandom) -> np.ndarray:
    # uniform over the span of the stage's true thresholds (widened to include 0)
    t = stage.thetas
    lo = int(min(t.min(), 0)) if len(t) else -q_feat
    hi = int(max(t.max(), 0)) if len(t) else q_feat
    return rng.integers(np.full(k, lo), hi) if k else np.zeros(0, dtype=np.int64)


def _mix(stage: QStage, fakes: FeatureTable, fake_t: np.ndarray, blinds: np.ndarray,
         rng: StreamRandom) -> ObfuscatedStage:
    n, k = len(stage.weak), len(fakes)
    perm = rng.permutation(n + k)
    table = FeatureTable.from_arrays(
        np.concatenate([stage.table.dy, fakes.dy])[perm],
        np.concatenate([stage.table.dx, fakes.dx])[perm],
        np.concatenate([stage.table.coef, fakes.coef])[perm])
    zeros = np.zeros(k, dtype=np.int64)
    return ObfuscatedStage(
        table=table,
        thetas=np.concatenate([stage.thetas, fake_t])[perm],
        alphas=np.concatenate([stage.alphas, zeros])[perm],
        betas=np.concatenate([stage.betas, zeros])[perm],
        blinds=blinds, permutation=perm, true_count=n, stage_threshold=stage.stage_threshold)


def inject_fakes(stage: QStage, k: int, rng: StreamRandom, window: tuple[int, int],
                 q_feat: int) -> ObfuscatedStage:
    """Mix ``k`` zero-leaf fakes into ``stage``, permute, and draw fresh blinds."""
    if k < 0:
        raise ValueError("fake count must be >= 0")
    fakes = fake_features(k, window[0], window[1], q_feat, rng)
    return _mix(stage, fakes, _fake_thresholds(stage, k, q_feat, rng),
                rng.integers(np.ones(len(stage.weak) + k), BLIND_MAX), rng)


def obfuscate_cascade(qc: QuantizedCascade, k: int, rng: StreamRandom) -> list[ObfuscatedStage]:
    """:func:`inject_fakes` for every stage, with the random draws batched."""
    if k < 0:
        raise ValueError("fake count must be >= 0")
    s = len(qc.stages)
    fakes = fake_features(k * s, qc.window_width, qc.window_height, qc.q_feat, rng)
    sizes = [len(st.weak) + k for st in qc.stages]
    blinds = np.split(rng.integers(np.ones(sum(sizes)), BLIND_MAX), np.cumsum(sizes)[:-1])
    out = []
    for i, st in enumerate(qc.stages):
        sl = slice(i * k, (i + 1) * k)
        part = FeatureTable.from_arrays(fakes.dy[sl], fakes.dx[sl], fakes.coef[sl])
        out.append(_mix(st, part, _fake_thresholds(st, k, qc.q_feat, rng), blinds[i], rng))
    return out


# ---------------------------------------------------------------------------
# Bob


@dataclass
class WorkCounters:
    windows: int = 0
    stages: int = 0
    integral_builds: int = 0
    feature_responses: int = 0    # (N+K) * M per stage served
    lookups: int = 0              # integral reads: 4 per rectangle per plane


@dataclass
class ServerConfig:
    k_fakes: int = 0
    reshuffle: bool = True
    group_bits: int = 1024
    m: int = rbi.M_DEFAULT

    def __post_init__(self):
        if self.k_fakes < 0:
            raise ValueError("k_fakes must be >= 0")


@dataclass
class SessionSummary:
    cascade_id: str
    stage_mode: str
    backend: str
    work: WorkCounters
    timer: PhaseTimer
    stage_seconds: list = field(default_factory=list)   # per stage served: response time


class BobSession:
    """Server side of one session. ``run`` returns once Alice disconnects."""

    def __init__(self, channel: Channel, cascades: dict[str, QuantizedCascade],
                 config: ServerConfig = ServerConfig(), rng=None):
        self.channel = channel
        self.cascades = cascades
        self.config = config
        self.rng = as_rng(rng)
        self.work = WorkCounters()
        self.timer = PhaseTimer()
        self.stage_seconds: list[float] = []
        self._fixed: Optional[list[ObfuscatedStage]] = None

    def handshake(self) -> None:
        hello = wire.Hello.decode(self.channel.expect(wire.HELLO))
        if hello.version != wire.PROTOCOL_VERSION:
            raise ProtocolViolation(f"unsupported protocol version {hello.version}")
        if hello.cascade_id not in self.cascades:
            raise SessionError(f"unknown cascade id {hello.cascade_id!r}")
        if hello.m != self.config.m:
            raise ProtocolViolation(f"client asked for M={hello.m}, server uses {self.config.m}")
        self.stage_mode, self.backend = _parse_mode(hello.mode)
        self.cascade_id = hello.cascade_id
        self.qc = self.cascades[hello.cascade_id]
        k = self.config.k_fakes
        counts = tuple(len(st.weak) + k for st in self.qc.stages)
        self.channel.send(wire.HELLO_ACK, wire.HelloAck(
            self.qc.window_width, self.qc.window_height, counts).encode())
        self.cmp = make_server(self.backend, self.channel, COMPARE_BITS,
                               self.config.group_bits, self.rng.spawn("compare"))
        self.cmp.setup()
        if not self.config.reshuffle:
            self._fixed = obfuscate_cascade(self.qc, k, self.rng.spawn("fixed-bank"))

    def _stages(self) -> Sequence[ObfuscatedStage]:
        if self._fixed is not None:
            return self._fixed
        return obfuscate_cascade(self.qc, self.config.k_fakes, self.rng)

    def serve_window(self, payload: bytes) -> None:
        qc, m = self.qc, self.config.m
        msg = wire.WindowBases.decode(payload)
        if msg.plane_count != m:
            raise ProtocolViolation(f"window carries {msg.plane_count} planes, session uses {m}")
        try:
            planes = rbi.unpack_planes(msg.planes, m, qc.window_height, qc.window_width)
        except ValueError as exc:
            raise ProtocolViolation(f"WINDOW_BASES: {exc}") from None
        with self.timer.phase("integral"):
            cells = integral_cells(planes)
        self.work.windows += 1
        self.work.integral_builds += m
        obf = self._stages()
        last = len(obf) - 1
        for si, st in enumerate(obf):
            t0 = time.perf_counter()
            with self.timer.phase("responses"):
                resp = st.table.cell_responses(cells, qc.window_width + 1)
            self.stage_seconds.append(time.perf_counter() - t0)
            self.work.stages += 1
            self.work.feature_responses += st.count * m
            self.work.lookups += st.table.lookups * m
            self.channel.send(wire.STAGE_RESPONSES,
                              wire.StageResponses(msg.window_id, si, resp).encode())
            with self.timer.phase("comparisons"):
                self.cmp.greater(st.thetas)
                self.cmp.offer_leaves(st.betas + st.blinds, st.alphas + st.blinds)
                self.cmp.greater([st.sum_operand])
            if self.stage_mode == SHORT_CIRCUIT and si < last:
                ctl = wire.StageControl.decode(self.channel.expect(wire.STAGE_CONTROL))
                if ctl.window_id != msg.window_id:
                    raise ProtocolViolation("STAGE_CONTROL for another window")
                if not ctl.proceed:
                    break
        done = wire.WindowDone.decode(self.channel.expect(wire.WINDOW_DONE))
        if done.window_id != msg.window_id:
            raise ProtocolViolation("WINDOW_DONE for another window")

    def run(self) -> SessionSummary:
        self.handshake()
        while True:
            try:
                t, payload = self.channel.recv()
            except ChannelError:
                break                      # client hung up between windows
            if t != wire.WINDOW_BASES:
                raise ProtocolViolation(f"expected WINDOW_BASES, got {wire.MESSAGE_NAMES.get(t, hex(t))}")
            self.serve_window(payload)
        return SessionSummary(self.cascade_id, self.stage_mode, self.backend,
                              self.work, self.timer, self.stage_seconds)


# ---------------------------------------------------------------------------
# Alice


@dataclass(frozen=True)
class WindowVerdict:
    window_id: int
    accepted: bool
    stages_run: int
    stage_reached: int           # first failing stage (1-based) or stage count


class AliceSession:
    """Client side of one session."""

    def __init__(self, channel: Channel, cascade_id: str, stage_mode: str = SHORT_CIRCUIT,
                 backend: str = "mock", key_bits: int = DEFAULT_KEY_BITS,
                 m: int = rbi.M_DEFAULT, rng=None, keep_windows: bool = False):
        self.channel = channel
        self.cascade_id = cascade_id
        self.stage_mode = stage_mode
        self.backend = backend
        self.key_bits = key_bits
        self.m = m
        self.rng = as_rng(rng)
        self.timer = PhaseTimer()
        self.keep_windows = keep_windows
        self.secrets = WindowSecrets()               # filled only with keep_windows
        self._mode = _mode_byte(stage_mode, backend)
        self.connected = False

    def connect(self) -> "AliceSession":
        self.channel.send(wire.HELLO, wire.Hello(
            wire.PROTOCOL_VERSION, self.cascade_id, self.m, self._mode).encode())
        ack = wire.HelloAck.decode(self.channel.expect(wire.HELLO_ACK))
        self.width, self.height, self.counts = ack.width, ack.height, ack.counts
        if not self.counts:
            raise ProtocolViolation("server announced an empty cascade")
        self.cmp = make_client(self.backend, self.channel, COMPARE_BITS, self.key_bits,
                               self.rng.spawn("compare"))
        self.cmp.setup()
        self.connected = True
        return self

    def new_window_id(self) -> int:
        return self.rng.randbits(64)

    def run_window(self, window, window_id: Optional[int] = None) -> WindowVerdict:
        if not self.connected:
            raise SessionError("session not connected")
        win = np.asarray(window, dtype=np.uint8)
        if win.shape != (self.height, self.width):
            raise ValueError(f"window shape {win.shape} != cascade window {(self.height, self.width)}")
        wid = self.new_window_id() if window_id is None else int(window_id)
        timer = self.timer
        with timer.phase("factorize"):
            shuffled = rbi.shuffle(rbi.factorize(win, self.rng, self.m), self.rng)
            payload = wire.WindowBases(wid, self.m, rbi.pack_planes(shuffled.planes)).encode()
            weights = shuffled.weights
        if self.keep_windows:
            self.secrets.pixels[wid] = win.copy()
            self.secrets.weights[wid] = weights
        with timer.phase("upload"):
            self.channel.send(wire.WINDOW_BASES, payload)
        nstages = len(self.counts)
        accepted, reached, run = True, nstages, 0
        for si, count in enumerate(self.counts):
            with timer.phase("wait_responses"):
                body = self.channel.expect(wire.STAGE_RESPONSES)
            with timer.phase("recombine"):
                resp = wire.StageResponses.decode(body, self.m)
                if resp.window_id != wid or resp.stage != si:
                    raise ProtocolViolation(
                        f"responses for window/stage {resp.window_id:#x}/{resp.stage}, "
                        f"expected {wid:#x}/{si}")
                if resp.matrix.shape[0] != count:
                    raise ProtocolViolation(
                        f"stage {si}: {resp.matrix.shape[0]} response rows, announced {count}")
                try:
                    f = rbi.recombine(resp.matrix, weights)
                except RangeError as exc:
                    raise ProtocolViolation(str(exc)) from None
            with timer.phase("comparisons"):
                bits = self.cmp.greater(f)
                c = self.cmp.receive_leaves(bits)
                passed = bool(self.cmp.greater([int(c.sum())])[0])
            run += 1
            if not passed and accepted:
                accepted, reached = False, si + 1
            if self.stage_mode == SHORT_CIRCUIT:
                if si < nstages - 1:
                    self.channel.send(wire.STAGE_CONTROL, wire.StageControl(wid, passed).encode())
                if not passed:
                    break
        self.channel.send(wire.WINDOW_DONE, wire.WindowDone(wid).encode())
        return WindowVerdict(wid, accepted, run, reached)

    def close(self) -> None:
        self.channel.close()


# ---------------------------------------------------------------------------
# Whole-image scan


@dataclass
class WindowJob:
    window_id: int
    level: int
    x: int
    y: int
    pixels: np.ndarray


def window_jobs(img, width: int, height: int, params: DetectParams, rng: StreamRandom):
    """Every scan window in plain-detector order, plus ``(levels, jobs)`` with
    unique random 64-bit ids, shuffled into submission order."""

    class _Size:
        window_width, window_height = width, height

    levels = enumerate_windows(img, _Size, params)
    jobs, seen = [], set()
    for lv in levels:
        for ox, oy in lv.offsets:
            wid = rng.randbits(64)
            while wid in seen:
                wid = rng.randbits(64)
            seen.add(wid)
            jobs.append(WindowJob(wid, lv.index, int(ox), int(oy),
                                  lv.image[oy:oy + height, ox:ox + width]))
    return levels, rng.shuffle_list(jobs)


def run_jobs(sessions: Sequence[AliceSession], jobs: Sequence[WindowJob]) -> dict[int, WindowVerdict]:
    """Spread ``jobs`` round-robin over the sessions, one thread per session."""
    if len(sessions) == 1:
        return {j.window_id: sessions[0].run_window(j.pixels, j.window_id) for j in jobs}
    out: dict[int, WindowVerdict] = {}
    errors: list[BaseException] = []

    def work(sess, share):
        try:
            for j in share:
                if errors:
                    return
                out[j.window_id] = sess.run_window(j.pixels, j.window_id)
        except BaseException as exc:  # noqa: BLE001 - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(s, jobs[i::len(sessions)]), daemon=True)
               for i, s in enumerate(sessions)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return out


def alice_detect_secure(img, params: DetectParams, sessions: Sequence[AliceSession],
                        rng=None, raw: bool = False) -> list[Detection]:
    """Blind scan of ``img``; output matches the plain detector with
    normalization off. Partial results are dropped if a session fails."""
    if params.normalize:
        raise ValueError("the blind protocol cannot normalize window variance")
    rng = as_rng(rng)
    first = sessions[0]
    w, h = first.width, first.height
    img = np.asarray(img, dtype=np.uint8)
    H, W = img.shape
    levels, jobs = window_jobs(img, w, h, params, rng)
    verdicts = run_jobs(sessions, jobs) if jobs else {}
    dets = []
    for j in jobs:
        v = verdicts[j.window_id]
        if v.accepted:
            x, y, bw, bh = levels[j.level].to_image_box(j.x, j.y, w, h, W, H)
            dets.append(Detection(x, y, bw, bh, levels[j.level].scale, v.stage_reached))
    return dets if raw else group_detections(dets, params.min_neighbors)


# ---------------------------------------------------------------------------
# Transports


class LocalServer:
    """Bob sessions on background threads over in-process channels."""

    def __init__(self, cascades: dict[str, QuantizedCascade], config: ServerConfig = ServerConfig(),
                 rng=None, wrap: Optional[Callable[[Channel], Channel]] = None):
        self.cascades = cascades
        self.config = config
        self.rng = as_rng(rng)
        self.wrap = wrap
        self.summaries: list[SessionSummary] = []
        self.sessions: list[BobSession] = []
        self.errors: list[BaseException] = []
        self._threads: list[threading.Thread] = []
        self._count = 0

    def open(self) -> Channel:
        a, b = LoopbackChannel.pair()
        bob = BobSession(b, self.cascades, self.config, self.rng.spawn(f"session-{self._count}"))
        self.sessions.append(bob)
        self._count += 1

        def run():
            try:
                self.summaries.append(bob.run())
            except BaseException as exc:  # noqa: BLE001 - collected for join()
                self.errors.append(exc)
                b.close()

        t = threading.Thread(target=run, daemon=True)
        t.start()
        self._threads.append(t)
        return self.wrap(a) if self.wrap else a

    def join(self, timeout: float = 60.0) -> list[SessionSummary]:
        for t in self._threads:
            t.join(timeout)
        if self.errors:
            raise self.errors[0]
        return self.summaries


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        srv: "BlindServer" = self.server  # type: ignore[assignment]
        self.request.setsockopt(6, 1, 1)    # TCP_NODELAY
        ch = SocketChannel(self.request)
        sid = srv.next_session_id()
        bob = BobSession(ch, srv.cascades, srv.config, srv.rng.spawn(f"session-{sid}"))
        t0 = time.monotonic()
        try:
            s = bob.run()
            log.info("session %d: cascade=%s mode=%s backend=%s windows=%d stages=%d %.2fs",
                     sid, s.cascade_id, s.stage_mode, s.backend, s.work.windows,
                     s.work.stages, time.monotonic() - t0)
        except Exception as exc:  # noqa: BLE001 - one bad client must not stop the server
            log.warning("session %d ended with error: %s", sid, exc)
        finally:
            ch.close()


class BlindServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], cascades: dict[str, QuantizedCascade],
                 config: ServerConfig = ServerConfig(), rng=None):
        self.cascades = cascades
        self.config = config
        self.rng = as_rng(rng)
        self._sid = 0
        self._lock = threading.Lock()
        super().__init__(address, _Handler)

    def next_session_id(self) -> int:
        with self._lock:
            self._sid += 1
            return self._sid


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep:
        raise ValueError(f"address {address!r} is not host:port")
    return host or "127.0.0.1", int(port)
