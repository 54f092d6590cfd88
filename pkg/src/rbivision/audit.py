"""Leakage audit over a debug transcript.

The report covers four things:

* magnitude: how strongly the per-pixel number of set planes (visible to
  the server) tracks the pixel value (needs the client's window secrets);
* plaintext: whether any 64-byte run of a raw window occurs in a payload;
* progression: how many stages each window exposed to the server;
* filter recovery: the client sees every plane it sent and every response
  row, i.e. linear equations ``planes @ y_slot = response``. Stacking them
  across windows reaches full rank quickly; whether the stacked system is
  consistent tells if slot ``n`` means the same filter in every window.
"""
from __future__ import annotations

import collections
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rbi, wire
from .channel import CLIENT_TO_SERVER, Transcript
from .errors import AuditUnavailable

SCAN_RUN = 64
MIN_DISTINCT = 4        # runs with fewer distinct bytes (e.g. all zeros) prove nothing
_BLOCK = SCAN_RUN // 2
CONSISTENT_TOL = 1e-6


@dataclass
class WindowSecrets:
    """What the client kept per window id: pixels and plane weights."""
    pixels: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    def save(self, path) -> None:
        ids = sorted(self.pixels)
        np.savez_compressed(
            path, ids=np.array(ids, dtype=np.uint64),
            pixels=np.stack([self.pixels[i] for i in ids]) if ids else np.zeros((0, 0, 0), np.uint8),
            weights=np.stack([self.weights[i] for i in ids]) if ids else np.zeros((0, 0), np.int64))

    @classmethod
    def load(cls, path) -> "WindowSecrets":
        with np.load(path) as z:
            ids = [int(i) for i in z["ids"]]
            return cls(dict(zip(ids, z["pixels"])), dict(zip(ids, z["weights"])))


@dataclass
class MagnitudeLeak:
    windows: int
    nonempty_planes: list          # per window
    correlation: Optional[float]   # None without secrets or pixel variance

    @property
    def signal(self) -> bool:
        return self.correlation is not None and abs(self.correlation) > 0.05


@dataclass
class RankAnalysis:
    unknowns: int
    rank: int
    windows_used: int
    slots_checked: int
    max_residual: Optional[float]
    solution: Optional[np.ndarray] = field(default=None, repr=False)   # (unknowns, slots)

    @property
    def full_rank(self) -> bool:
        return self.rank >= self.unknowns

    @property
    def recoverable(self) -> bool:
        return self.full_rank and self.max_residual is not None and self.max_residual < CONSISTENT_TOL

    @property
    def ambiguous(self) -> bool:
        return self.full_rank and self.max_residual is not None and self.max_residual >= CONSISTENT_TOL


@dataclass
class AuditReport:
    windows: int
    magnitude: MagnitudeLeak
    plaintext_hits: Optional[int]
    stages_revealed: dict          # window id -> stages the server answered
    stage_count: int
    rank: Optional[RankAnalysis]

    def stage_histogram(self) -> dict:
        return dict(sorted(collections.Counter(self.stages_revealed.values()).items()))

    def text(self) -> str:
        lines = [f"windows: {self.windows}"]
        mag = self.magnitude
        if mag.correlation is None:
            lines.append("no magnitude signal" + ("" if self.windows else " (no windows)"))
        elif mag.signal:
            lines.append(f"magnitude signal: set-plane count vs pixel value r={mag.correlation:.3f}")
        else:
            lines.append(f"no magnitude signal (r={mag.correlation:.3f})")
        if mag.nonempty_planes:
            lines.append(f"non-empty planes per window: min {min(mag.nonempty_planes)} "
                         f"max {max(mag.nonempty_planes)}")
        if self.plaintext_hits is None:
            lines.append("plaintext scan skipped (no window secrets)")
        elif self.plaintext_hits == 0:
            lines.append("no plaintext window bytes")
        else:
            lines.append(f"PLAINTEXT LEAK: {self.plaintext_hits} payload(s) contain raw window bytes")
        hist = self.stage_histogram()
        lines.append("stages revealed per window: " +
                     (", ".join(f"{k}:{v}" for k, v in hist.items()) or "none") +
                     f" (of {self.stage_count})")
        r = self.rank
        if r is None:
            lines.append("filter recovery: no responses to analyse")
        elif not r.full_rank:
            lines.append(f"filter bank underdetermined: rank {r.rank}/{r.unknowns} "
                         f"after {r.windows_used} windows")
        elif r.recoverable:
            lines.append(f"filter bank recoverable: rank {r.rank}/{r.unknowns} "
                         f"within {r.windows_used} windows")
        else:
            lines.append(f"alignment ambiguity: rank {r.rank}/{r.unknowns} within {r.windows_used} "
                         f"windows but slot equations disagree (max relative residual "
                         f"{r.max_residual:.3g})")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------


@dataclass
class _Window:
    wid: int
    planes: np.ndarray
    responses: dict = field(default_factory=dict)    # stage -> (n, M)


def _parse(t: Transcript):
    m = width = height = None
    counts: tuple = ()
    windows: dict[int, _Window] = {}
    order: list[int] = []
    payloads: list[bytes] = []
    for rec in t:
        p = rec.payload
        payloads.append(p)
        if rec.msg_type == wire.HELLO and rec.direction == CLIENT_TO_SERVER:
            m = wire.Hello.decode(p).m
        elif rec.msg_type == wire.HELLO_ACK:
            ack = wire.HelloAck.decode(p)
            width, height, counts = ack.width, ack.height, ack.counts
        elif rec.msg_type == wire.WINDOW_BASES:
            msg = wire.WindowBases.decode(p)
            planes = rbi.unpack_planes(msg.planes, msg.plane_count, height, width)
            windows[msg.window_id] = _Window(msg.window_id, planes)
            order.append(msg.window_id)
        elif rec.msg_type == wire.STAGE_RESPONSES:
            r = wire.StageResponses.decode(p, m)
            windows[r.window_id].responses[r.stage] = r.matrix
    return [windows[i] for i in order], counts, payloads


def _magnitude(windows, secrets: Optional[WindowSecrets]) -> MagnitudeLeak:
    nonempty = [int(np.count_nonzero(w.planes.reshape(w.planes.shape[0], -1).any(axis=1)))
                for w in windows]
    corr = None
    if secrets is not None:
        xs, ys = [], []
        for w in windows:
            if w.wid in secrets.pixels:
                xs.append(rbi.set_plane_counts(w.planes).ravel())
                ys.append(np.asarray(secrets.pixels[w.wid]).ravel())
        if xs:
            x = np.concatenate(xs).astype(float)
            y = np.concatenate(ys).astype(float)
            if x.std() > 0 and y.std() > 0:
                corr = float(np.corrcoef(x, y)[0, 1])
    return MagnitudeLeak(len(windows), nonempty, corr)


def plaintext_hits(payloads, raw_windows) -> int:
    """Payloads containing any informative ``SCAN_RUN``-byte run of a raw window.

    Any 64-byte match fully covers some 32-aligned 32-byte block of the
    payload, so only aligned blocks are looked up, then confirmed in full.
    Runs with fewer than ``MIN_DISTINCT`` byte values are skipped."""
    runs = set()
    blocks: dict[bytes, list] = collections.defaultdict(list)
    for raw in raw_windows:
        for i in range(len(raw) - SCAN_RUN + 1):
            run = raw[i:i + SCAN_RUN]
            if len(set(run)) >= MIN_DISTINCT:
                runs.add(run)
        for i in range(len(raw) - _BLOCK + 1):
            blocks[raw[i:i + _BLOCK]].append((raw, i))
    if not runs:
        return 0
    hits = 0
    for p in payloads:
        found = False
        for off in range(0, len(p) - _BLOCK + 1, _BLOCK):
            blk = p[off:off + _BLOCK]
            if blk not in blocks:
                continue
            for _raw, i in blocks[blk]:
                start = off - i
                for s in range(max(start, 0), start + len(_raw) - SCAN_RUN + 1):
                    if p[s:s + SCAN_RUN] in runs:
                        found = True
                        break
                if found:
                    break
            if found:
                break
        hits += found
    return hits


def filter_recovery(windows, stage: int = 0, max_slots: int = 8) -> Optional[RankAnalysis]:
    """Stack (plane, response) equations for ``stage`` until full rank."""
    usable = [w for w in windows if stage in w.responses]
    if not usable:
        return None
    _, h, wd = usable[0].planes.shape
    unknowns = h * wd
    rows: list[np.ndarray] = []
    rhs: list[np.ndarray] = []
    rank = 0
    used = 0
    for w in usable:
        rows.append(w.planes.reshape(w.planes.shape[0], -1).astype(float))
        rhs.append(w.responses[stage].T.astype(float))          # (M, n)
        used += 1
        a = np.vstack(rows)
        rank = int(np.linalg.matrix_rank(a))
        if rank >= unknowns:
            break
    a = np.vstack(rows)
    if rank < unknowns or used < 2:
        return RankAnalysis(unknowns, rank, used, 0, None)
    n = min(x.shape[1] for x in rhs)
    slots = min(n, max_slots)
    b = np.vstack([x[:, :slots] for x in rhs])
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    resid = np.linalg.norm(a @ sol - b, axis=0) / np.maximum(np.linalg.norm(b, axis=0), 1.0)
    return RankAnalysis(unknowns, rank, used, slots, float(resid.max()), sol)


def audit_transcript(t: Transcript, secrets: Optional[WindowSecrets] = None) -> AuditReport:
    if not t.debug:
        raise AuditUnavailable("transcript was recorded without payloads; re-run with a debug transcript")
    windows, counts, payloads = _parse(t)
    hits = None
    if secrets is not None:
        hits = plaintext_hits(payloads, [np.asarray(v, dtype=np.uint8).tobytes()
                                         for v in secrets.pixels.values()])
    revealed = {w.wid: len(w.responses) for w in windows}
    return AuditReport(len(windows), _magnitude(windows, secrets), hits, revealed,
                       len(counts), filter_recovery(windows))
