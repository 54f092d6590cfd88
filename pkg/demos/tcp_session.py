"""Client and server talking over a real TCP socket.

Starts the blind server on a free loopback port in a background thread,
then runs a blind scan against it with two parallel sessions. The same
exchange happens between ``rbivision serve`` and
``rbivision detect --mode secure --server HOST:PORT``.

    python3 demos/tcp_session.py
"""
import pathlib
import threading

import numpy as np

from rbivision.cascade import load_cascade
from rbivision.channel import connect
from rbivision.detector import DetectParams, detect, format_detections
from rbivision.integral import quantize
from rbivision.protocol import AliceSession, BlindServer, ServerConfig, alice_detect_secure
from rbivision.rng import StreamRandom
from rbivision.synth import scene

FIX = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures"
qc = quantize(load_cascade(FIX / "haarcascade_frontalface_alt.xml"))
faces = np.load(FIX / "accepted_frontalface_alt.npz")["windows"]
img, _ = scene(faces, 48, 48, StreamRandom("tcp-demo"), count=1)

server = BlindServer(("127.0.0.1", 0), {"faces": qc}, ServerConfig(k_fakes=4), StreamRandom("bob"))
host, port = server.server_address[:2]
threading.Thread(target=server.serve_forever, daemon=True).start()
print(f"server listening on {host}:{port}")

sessions = [AliceSession(connect(f"{host}:{port}"), "faces", rng=StreamRandom(f"alice{i}")).connect()
            for i in range(2)]
params = DetectParams(min_neighbors=1)
try:
    found = alice_detect_secure(img, params, sessions, StreamRandom("order"))
finally:
    for s in sessions:
        s.close()
    server.shutdown()
    server.server_close()

print("blind result:\n" + format_detections(found), end="")
print("matches plain detector:", found == detect(img, qc, params))
