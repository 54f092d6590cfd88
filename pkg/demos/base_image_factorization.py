"""How a window is hidden in random base images.

Every pixel value v is split into distinct summands drawn from 1..255, and
summand i becomes a set bit in binary plane i. The planes are shuffled before
they leave the client. A Haar feature is linear, so the server's per-plane
responses can be recombined with the plane weights into the true response.

    python3 demos/base_image_factorization.py
"""
import pathlib

import numpy as np

from rbivision import rbi
from rbivision.cascade import load_cascade
from rbivision.integral import FeatureTable, features_of, integral_cells, quantize, rasterize
from rbivision.rng import StreamRandom

FIX = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures"
rng = StreamRandom("factorize-demo")

window = np.load(FIX / "accepted_frontalface_alt.npz")["windows"][0]
base = rbi.factorize(window, rng)
print("pixel (0, 0) =", int(window[0, 0]), "splits into",
      [i for i in range(1, 256) if base.planes[i, 0, 0]])
print("pixel (9, 9) =", int(window[9, 9]), "splits into",
      [i for i in range(1, 256) if base.planes[i, 9, 9]])

sent = rbi.shuffle(base, rng)
nonempty = int(np.count_nonzero(sent.planes.reshape(256, -1).any(axis=1)))
print(f"\n{sent.M} planes go on the wire, {nonempty} of them non-empty, "
      f"{len(rbi.pack_planes(sent.planes))} bytes in all")
print("first transmitted planes carry weights", sent.weights[:8].tolist(), "(kept by the client)")

# server side: one integral table per plane, then every feature on every plane
qc = quantize(load_cascade(FIX / "haarcascade_frontalface_alt.xml"))
feats = features_of(qc.stages[:1])
responses = FeatureTable(feats).cell_responses(integral_cells(sent.planes), 21)
print(f"\nserver returns a {responses.shape[0]} x {responses.shape[1]} response matrix")

# client side: weight the columns and compare against the direct dot product
recombined = rbi.recombine(responses, sent.weights)
direct = [int(rasterize(f, 20, 20).ravel() @ window.ravel().astype(np.int64)) for f in feats]
print("recombined:", recombined.tolist())
print("direct:    ", direct)
print("window restored from planes:", np.array_equal(rbi.reconstruct(rbi.unshuffle(sent)), window))
