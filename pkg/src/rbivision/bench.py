"""Timing harness: plain vs blind scans, phase breakdowns and scaling fits.

Every timed configuration gets one discarded warm-up run followed by
``repetitions`` measured runs on the monotonic clock; the median is
reported. Reference figures for context only: 143.852 s blind vs 0.380 s
plain per image, a ratio of about 378.
"""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rbi
from .channel import LatencyChannel
from .detector import DetectParams, detect, enumerate_windows, window_count
from .integral import QuantizedCascade, integral_cells
from .protocol import (SHORT_CIRCUIT, AliceSession, LocalServer, ServerConfig,
                       alice_detect_secure, obfuscate_cascade)
from .rng import StreamRandom, as_rng

REFERENCE_BLIND_S = 143.852
REFERENCE_PLAIN_S = 0.380
REFERENCE_RATIO = REFERENCE_BLIND_S / REFERENCE_PLAIN_S

MODES = ("plain", "secure-mock", "secure-real")
PHASES = ("factorize", "transport", "integral", "responses", "recombine", "comparisons")


@dataclass
class BenchRun:
    mode: str
    image: str
    width: int
    height: int
    windows: int
    samples: list                          # wall seconds per repetition
    phases: dict = field(default_factory=dict)   # seconds, from the median run

    @property
    def median(self) -> float:
        return statistics.median(self.samples)


@dataclass
class ScalingPoint:
    kind: str           # "windows", "slots" or "window_size"
    x: float
    seconds: float
    label: str = ""


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float
    max_rel_dev: float                     # worst |y - fit| / fit over the points

    @classmethod
    def of(cls, xs, ys) -> "LinearFit":
        x = np.asarray(xs, dtype=float)
        y = np.asarray(ys, dtype=float)
        slope, intercept = np.polyfit(x, y, 1)
        pred = slope * x + intercept
        ss_res = float(((y - pred) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        dev = float(np.max(np.abs(y - pred) / np.abs(pred)))
        return cls(float(slope), float(intercept), r2, dev)


@dataclass
class BenchReport:
    runs: list = field(default_factory=list)
    scaling: list = field(default_factory=list)

    def ratio(self, image: str, mode: str = "secure-mock") -> Optional[float]:
        plain = [r for r in self.runs if r.image == image and r.mode == "plain"]
        sec = [r for r in self.runs if r.image == image and r.mode == mode]
        if not plain or not sec or plain[0].median <= 0:
            return None
        return sec[0].median / plain[0].median

    def fit(self, kind: str) -> Optional[LinearFit]:
        pts = [p for p in self.scaling if p.kind == kind]
        if len(pts) < 2:
            return None
        return LinearFit.of([p.x for p in pts], [p.seconds for p in pts])

    def text(self) -> str:
        out = []
        if self.runs:
            out.append(f"{'mode':<12} {'image':<16} {'size':>9} {'windows':>8} {'median s':>10} "
                       f"{'reps':>4}  phases (s)")
            for r in self.runs:
                ph = " ".join(f"{k}={r.phases[k]:.3f}" for k in PHASES if k in r.phases)
                out.append(f"{r.mode:<12} {r.image:<16} {r.width:>4}x{r.height:<4} {r.windows:>8} "
                           f"{r.median:>10.4f} {len(r.samples):>4}  {ph}")
            for img in dict.fromkeys(r.image for r in self.runs):
                for mode in ("secure-mock", "secure-real"):
                    q = self.ratio(img, mode)
                    if q is not None:
                        out.append(f"ratio {mode}/plain on {img}: {q:.1f}x "
                                   f"(reference setup: {REFERENCE_RATIO:.1f}x)")
        for kind in dict.fromkeys(p.kind for p in self.scaling):
            out.append(f"scaling vs {kind}:")
            for p in (p for p in self.scaling if p.kind == kind):
                out.append(f"  {p.label or p.x:>12} {p.seconds:.6f} s")
            f = self.fit(kind)
            if f is not None:
                out.append(f"  linear fit: slope={f.slope:.3e} intercept={f.intercept:.3e} "
                           f"R2={f.r2:.4f} max deviation={100 * f.max_rel_dev:.1f}%")
        return "\n".join(out) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "mode", "image", "width", "height", "windows", "rep", "seconds"]
                   + list(PHASES) + ["median", "ratio"])
        for r in self.runs:
            ratio = self.ratio(r.image, r.mode) if r.mode != "plain" else None
            for i, s in enumerate(r.samples):
                w.writerow(["run", r.mode, r.image, r.width, r.height, r.windows, i, f"{s:.6f}"]
                           + [f"{r.phases[k]:.6f}" if k in r.phases else "" for k in PHASES]
                           + [f"{r.median:.6f}", "" if ratio is None else f"{ratio:.3f}"])
        for p in self.scaling:
            w.writerow([f"scaling_{p.kind}", "", p.label, "", "", "", "", f"{p.seconds:.6f}"]
                       + [""] * len(PHASES) + ["", f"{p.x}"])
        return buf.getvalue()


# ---------------------------------------------------------------------------


def _timed(fn: Callable[[], dict], repetitions: int) -> tuple[list, dict]:
    fn()                                       # warm-up, discarded
    samples, phases = [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        ph = fn()
        samples.append(time.perf_counter() - t0)
        phases.append(ph)
    med = int(np.argsort(samples)[len(samples) // 2])
    return samples, phases[med]


def secure_phases(alice: Sequence[AliceSession], bob_totals: Optional[dict]) -> dict:
    """Disjoint phase split of the client's timeline.

    Server-side integral/response time happens while the client waits for
    responses, so it is carved out of that wait (capped by it)."""
    t: dict[str, float] = {}
    for s in alice:
        for k, v in s.timer.totals.items():
            t[k] = t.get(k, 0.0) + v
    wait = t.get("wait_responses", 0.0)
    integ = resp = 0.0
    if bob_totals:
        integ, resp = bob_totals.get("integral", 0.0), bob_totals.get("responses", 0.0)
        if integ + resp > wait > 0:
            scale = wait / (integ + resp)
            integ, resp = integ * scale, resp * scale
    return {"factorize": t.get("factorize", 0.0),
            "transport": t.get("upload", 0.0) + max(wait - integ - resp, 0.0),
            "integral": integ, "responses": resp,
            "recombine": t.get("recombine", 0.0), "comparisons": t.get("comparisons", 0.0)}


def secure_scan(img, qc: QuantizedCascade, params: DetectParams, *, cascade_id: str = "cascade",
                backend: str = "mock", stage_mode: str = SHORT_CIRCUIT, k_fakes: int = 0,
                key_bits: int = 1024, latency_ms: float = 0.0, seed=None,
                connect: Optional[Callable[[], object]] = None, jobs: int = 1):
    """One blind scan. Returns ``(detections, phases)``. ``connect`` opens a
    channel to a remote server; otherwise an in-process server is used."""
    rng = as_rng(seed)
    server = None
    if connect is None:
        server = LocalServer({cascade_id: qc}, ServerConfig(k_fakes=k_fakes), rng.spawn("server"))
        connect = server.open
    sessions = []
    try:
        for j in range(jobs):
            ch = connect()
            if latency_ms:
                ch = LatencyChannel(ch, latency_ms)
            sessions.append(AliceSession(ch, cascade_id, stage_mode, backend, key_bits,
                                         rng=rng.spawn(f"alice-{j}")).connect())
        dets = alice_detect_secure(img, params, sessions, rng.spawn("order"))
    finally:
        for s in sessions:
            s.close()
    bob = None
    if server is not None:
        bob = {}
        for summ in server.join():
            for k, v in summ.timer.totals.items():
                bob[k] = bob.get(k, 0.0) + v
    return dets, secure_phases(sessions, bob)


def bench_image(report: BenchReport, name: str, img, qc: QuantizedCascade, params: DetectParams,
                modes: Sequence[str], repetitions: int = 3, **secure_kw) -> None:
    h, w = img.shape
    q = window_count(enumerate_windows(img, qc, params))
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown bench mode {mode!r}")
        if mode == "plain":
            samples, ph = _timed(lambda: (detect(img, qc, params), {})[1], repetitions)
        else:
            kw = dict(secure_kw, backend="mock" if mode == "secure-mock" else "paillier")
            samples, ph = _timed(lambda: secure_scan(img, qc, params, **kw)[1], repetitions)
        report.runs.append(BenchRun(mode, name, w, h, q, samples, ph))


# ---------------------------------------------------------------------------
# Server-side cost model: per window, M integral builds plus (N+K)*M responses


def server_window_seconds(qc: QuantizedCascade, k_fakes: int, windows: np.ndarray,
                          repetitions: int = 5, rng=None) -> float:
    """Median server time to unpack, integrate and answer every stage for one window."""
    rng = as_rng(rng)
    m = rbi.M_DEFAULT
    payloads = [rbi.pack_planes(rbi.shuffle(rbi.factorize(w, rng, m), rng).planes) for w in windows]
    banks = [obfuscate_cascade(qc, k_fakes, rng) for _ in windows]
    stride = qc.window_width + 1
    h, w = qc.window_height, qc.window_width

    def one_pass():
        for p, bank in zip(payloads, banks):
            cells = integral_cells(rbi.unpack_planes(p, m, h, w))
            for st in bank:
                st.table.cell_responses(cells, stride)

    one_pass()                              # warm-up (also builds the sparse tables)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        one_pass()
        times.append((time.perf_counter() - t0) / len(windows))
    return statistics.median(times)


def scaling_vs_slots(report: BenchReport, qc: QuantizedCascade, ks: Sequence[int],
                     windows: np.ndarray, repetitions: int = 5, rng=None) -> None:
    rng = as_rng(rng)
    n = sum(qc.weak_counts)
    for k in ks:
        slots = n + k * len(qc.stages)
        sec = server_window_seconds(qc, k, windows, repetitions, rng.spawn(f"k{k}"))
        report.scaling.append(ScalingPoint("slots", slots, sec, f"N+K={slots}"))


def scaling_vs_window_size(report: BenchReport, cascades: Sequence[QuantizedCascade],
                           repetitions: int = 5, windows_per: int = 8, rng=None) -> None:
    rng = as_rng(rng)
    for qc in cascades:
        wins = rng.integers(np.zeros((windows_per, qc.window_height, qc.window_width)), 255)
        sec = server_window_seconds(qc, 0, wins.astype(np.uint8), repetitions, rng.spawn(qc.name))
        report.scaling.append(ScalingPoint("window_size", qc.window_area, sec,
                                           f"{qc.window_width}x{qc.window_height}"))


def scaling_vs_windows(report: BenchReport, qc: QuantizedCascade, images: Sequence,
                       params: DetectParams, repetitions: int = 3, **secure_kw) -> None:
    for img in images:
        q = window_count(enumerate_windows(img, qc, params))
        samples, _ = _timed(lambda: secure_scan(img, qc, params, **secure_kw)[1], repetitions)
        report.scaling.append(ScalingPoint("windows", q, statistics.median(samples),
                                           f"Q={q} ({img.shape[1]}x{img.shape[0]})"))
