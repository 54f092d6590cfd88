"""Why the server must reshuffle its filter bank for every window.

A curious client sees each plane it sent and each response row it got back.
Every row is a linear equation in the unknown filter, so after a few windows
the system has full rank. If slot n always holds the same filter, the
solution is Bob's classifier. Drawing a fresh permutation and fresh fakes per
window makes the stacked equations contradict each other.

    python3 demos/filter_bank_recovery.py
"""
import pathlib

import numpy as np

from rbivision.audit import audit_transcript
from rbivision.cascade import load_cascade
from rbivision.channel import RecordingChannel, Transcript
from rbivision.integral import quantize, rasterize
from rbivision.protocol import CONSTANT_STAGES, AliceSession, LocalServer, ServerConfig
from rbivision.rng import StreamRandom

FIX = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures"
qc = quantize(load_cascade(FIX / "haarcascade_frontalface_default.xml"))
probes = np.random.default_rng(1).integers(200, 256, (3, 24, 24)).astype(np.uint8)


def record(reshuffle):
    t = Transcript(debug=True)
    server = LocalServer({"c": qc}, ServerConfig(k_fakes=4, reshuffle=reshuffle), StreamRandom("bob"))
    alice = AliceSession(RecordingChannel(server.open(), t), "c", CONSTANT_STAGES,
                         rng=StreamRandom("alice"), keep_windows=True).connect()
    for p in probes:
        alice.run_window(p)
    alice.close()
    server.join()
    return audit_transcript(t, alice.secrets), server.sessions[0]


for reshuffle in (False, True):
    report, bob = record(reshuffle)
    print(f"--- reshuffle {'on' if reshuffle else 'off'} ---")
    print(report.text())
    if not reshuffle:
        stage0 = bob._fixed[0]
        slot = int(np.flatnonzero(~stage0.is_fake)[0])
        truth = rasterize(qc.stages[0].weak[stage0.permutation[slot]].feature, 24, 24).ravel()
        guess = report.rank.solution[:, slot]
        print(f"slot {slot}: recovered filter matches Bob's to within "
              f"{np.abs(guess - truth).max():.1e}\n")
