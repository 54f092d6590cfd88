"""A blind face scan, start to finish.

Alice holds a photo, Bob holds a trained cascade. Neither hands the other
their asset, yet Alice ends up with exactly the boxes the ordinary
detector would have drawn. This script plays both parts in one process.

    python3 demos/blind_scan_walkthrough.py
"""
import pathlib
import time

import numpy as np

from rbivision.cascade import cascade_stats, load_cascade
from rbivision.detector import DetectParams, detect, format_detections
from rbivision.integral import quantize
from rbivision.protocol import AliceSession, LocalServer, ServerConfig, alice_detect_secure
from rbivision.rng import StreamRandom
from rbivision.synth import scene

ROOT = pathlib.Path(__file__).resolve().parents[1]
FIX = ROOT / "tests" / "fixtures"

# Bob's side: a stock OpenCV cascade, converted to fixed point so that the
# comparisons can run on integers.
cascade = load_cascade(FIX / "haarcascade_frontalface_alt.xml")
qc = quantize(cascade)
st = cascade_stats(cascade)
print(f"Bob's cascade: {st.stage_count} stages, {st.total_weak} weak classifiers, "
      f"{st.window_width}x{st.window_height} window")

# Alice's side: a 64x64 noise image with two windows the cascade accepts.
faces = np.load(FIX / "accepted_frontalface_alt.npz")["windows"]
img, placed = scene(faces, 64, 64, StreamRandom("walkthrough"), count=2)
print(f"Alice's image: 64x64, accepted windows pasted at {placed}")
params = DetectParams(min_neighbors=1)

t0 = time.perf_counter()
plain = detect(img, qc, params)
t_plain = time.perf_counter() - t0
print(f"\nordinary detector ({t_plain * 1e3:.1f} ms):\n{format_detections(plain)}")

# Bob pads every stage with 8 zero-weight fake classifiers, so Alice learns
# only padded counts. Alice never sends pixels, only shuffled binary planes.
server = LocalServer({"faces": qc}, ServerConfig(k_fakes=8), StreamRandom("bob"))
alice = AliceSession(server.open(), "faces", rng=StreamRandom("alice")).connect()
print(f"counts Bob announced per stage: {alice.counts[:5]} ...")

t0 = time.perf_counter()
blind = alice_detect_secure(img, params, [alice], StreamRandom("order"))
t_blind = time.perf_counter() - t0
alice.close()
(summary,) = server.join()
print(f"\nblind detector ({t_blind:.2f} s):\n{format_detections(blind)}")
print("same boxes:", blind == plain)

w = summary.work
print(f"\nBob's work: {w.windows} windows, {w.integral_builds} integral images, "
      f"{w.stages} stage evaluations, {w.feature_responses} plane responses")
print(f"slowdown vs plain: {t_blind / t_plain:.0f}x")
