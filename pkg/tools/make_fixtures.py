"""Regenerate the synthetic test fixtures under tests/fixtures.

    python3 tools/make_fixtures.py

Writes accepted windows for the two frontal-face cascades, a pinned 100x100
scene and the plain detector's output on it. The OpenCV reference boxes in
opencv_astronaut.json were produced separately with opencv-python-headless
4.8.1 (``CascadeClassifier.detectMultiScale(img, 1.25, 3)``) on
astronaut256.pgm and are not regenerated here.
"""
import pathlib

import numpy as np

from rbivision.cascade import load_cascade
from rbivision.detector import DetectParams, detect, format_detections
from rbivision.imageio import write_image
from rbivision.integral import quantize
from rbivision.synth import scene, search_windows

FIX = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def main():
    for name in ("frontalface_alt", "frontalface_default"):
        qc = quantize(load_cascade(FIX / f"haarcascade_{name}.xml"))
        wins = search_windows(qc, 16, rng=f"fixture-{name}")
        np.savez_compressed(FIX / f"accepted_{name}.npz", windows=wins)
        print(name, wins.shape)
    qc = quantize(load_cascade(FIX / "haarcascade_frontalface_alt.xml"))
    wins = np.load(FIX / "accepted_frontalface_alt.npz")["windows"]
    img, placed = scene(wins, 100, 100, rng="fixture-scene", count=3)
    write_image(FIX / "scene_alt.pgm", img)
    out = format_detections(detect(img, qc, DetectParams(min_neighbors=1)))
    (FIX / "scene_alt_plain.txt").write_text(out)
    print("scene windows at", placed)
    print(out, end="")


if __name__ == "__main__":
    main()
