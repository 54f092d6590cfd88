import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import naive_classify, window_count as window_count_oracle
from rbivision.cascade import (HaarFeature, RectWeight, Stage, WeakClassifier, build_cascade,
                               load_cascade)
from rbivision.detector import (DetectParams, Detection, classify_window, classify_windows,
                                detect, downscale, enumerate_windows, format_detections,
                                group_detections, iou, raw_detections, window_count)
from rbivision.imageio import read_image
from rbivision.integral import integral, quantize
from rbivision.synth import noise_image

RNG = np.random.default_rng(7)


class Box:
    window_width = window_height = 24


def test_single_window():
    levels = enumerate_windows(np.zeros((24, 24), np.uint8), Box, DetectParams(step=1))
    assert window_count(levels) == 1


def test_too_small_image(qalt):
    assert enumerate_windows(np.zeros((23, 23), np.uint8), Box, DetectParams()) == []
    assert detect(np.zeros((19, 19), np.uint8), qalt) == []


@pytest.mark.parametrize("size,scale,step", [((100, 100), 1.25, 2), ((100, 100), 1.1, 1),
                                             ((64, 37), 1.5, 3), ((24, 200), 1.2, 2)])
def test_window_count_closed_form(size, scale, step):
    w, h = size
    levels = enumerate_windows(np.zeros((h, w), np.uint8), Box, DetectParams(scale, step))
    assert window_count(levels) == window_count_oracle(w, h, 24, 24, scale, step)


def test_downscale_preserves_constant_and_mean():
    img = np.full((50, 70), 137, np.uint8)
    assert (downscale(img, 40, 33) == 137).all()
    rnd = RNG.integers(0, 256, (60, 60)).astype(np.uint8)
    half = downscale(rnd, 30, 30)
    blocks = rnd.reshape(30, 2, 30, 2).astype(int).sum(axis=(1, 3))
    assert np.array_equal(half, (2 * blocks + 4) // 8)     # round half up


def test_zero_window_rejected_at_pinned_stage(qalt):
    # pinned from the straight-line evaluator: the first stage rejects it
    z = np.zeros((20, 20), np.uint8)
    assert naive_classify(z, qalt) == (False, 1)
    assert classify_window(integral(z), qalt, (0, 0)) == (False, 1)


def test_always_accepting_cascade():
    f = HaarFeature((RectWeight(0, 0, 4, 4, -1.0), RectWeight(0, 0, 2, 4, 2.0)))
    weak = (WeakClassifier(f, 0.01, 0.5, -0.25), WeakClassifier(f, -0.02, -0.75, 0.125))
    c = quantize(build_cascade([Stage(weak, -0.25 - 0.75)], (4, 4)))
    img = RNG.integers(0, 256, (12, 12)).astype(np.uint8)
    offsets = np.array([(x, y) for y in range(9) for x in range(9)])
    acc, reached = classify_windows(integral(img), c, offsets)
    assert acc.all() and (reached == 1).all()


def test_random_windows_match_naive_evaluator(qalt, qdefault, faces_alt, faces_default):
    for qc, faces in ((qalt, faces_alt), (qdefault, faces_default)):
        size = qc.window_width
        wins = list(RNG.integers(0, 256, (480, size, size)).astype(np.uint8))
        # low-contrast windows reach much deeper stages than uniform noise
        wins += list(np.clip(128 + RNG.integers(-4, 5, (20, size, size)), 0, 255).astype(np.uint8))
        wins += list(faces[:4])
        img = np.concatenate(wins, axis=1)
        offsets = np.array([(i * size, 0) for i in range(len(wins))])
        acc, reached = classify_windows(integral(img), qc, offsets)
        for k, w in enumerate(wins):
            assert (bool(acc[k]), int(reached[k])) == naive_classify(w, qc)
        assert acc[-4:].all()


def test_short_circuit_matches_full_evaluation(qalt, faces_alt):
    img = noise_image(80, 60, rng=3)
    img[10:30, 20:40] = faces_alt[0]
    ii = integral(img)
    offsets = np.array([(x, y) for y in range(0, 41, 1) for x in range(0, 61, 1)])
    a1, r1 = classify_windows(ii, qalt, offsets, short_circuit=True)
    a2, r2 = classify_windows(ii, qalt, offsets, short_circuit=False)
    assert np.array_equal(a1, a2) and np.array_equal(r1, r2)
    assert a1.any()


def test_no_accepted_windows_means_no_detections(qalt):
    assert detect(np.zeros((60, 60), np.uint8), qalt) == []


def test_min_neighbors_zero_keeps_every_window(qalt, faces_alt):
    img = noise_image(100, 100, rng=11)
    img[4:24, 4:24] = faces_alt[1]
    img[50:70, 60:80] = faces_alt[2]
    raw = raw_detections(img, qalt, DetectParams())
    assert len(detect(img, qalt, DetectParams(min_neighbors=0))) == len(raw) >= 2


def test_single_pasted_window_gives_one_detection(qalt, faces_alt):
    img = noise_image(60, 50, rng=5)
    img[10:30, 24:44] = faces_alt[0]
    dets = detect(img, qalt, DetectParams(min_neighbors=1))
    assert dets == [Detection(24, 10, 20, 20, 1.0, 22)]


def test_golden_scene(qalt, fixtures):
    img = read_image(fixtures / "scene_alt.pgm")
    out = format_detections(detect(img, qalt, DetectParams(min_neighbors=1)))
    assert out == (fixtures / "scene_alt_plain.txt").read_text()


def test_detect_is_deterministic(qalt, fixtures):
    img = read_image(fixtures / "scene_alt.pgm")
    p = DetectParams(1.1, 1, 2)
    assert detect(img, qalt, p) == detect(img.copy(), qalt, p)


@pytest.mark.parametrize("cascade", ["frontalface_alt", "frontalface_default"])
def test_normalized_scan_agrees_with_opencv(fixtures, cascade):
    # reference boxes come from OpenCV's own detector on the same image
    ref = json.loads((fixtures / "opencv_astronaut.json").read_text())
    qc = quantize(load_cascade(fixtures / f"haarcascade_{cascade}.xml"))
    img = read_image(fixtures / "astronaut256.pgm")
    dets = detect(img, qc, DetectParams(ref["scale_factor"], 2, ref["min_neighbors"], True))
    (x, y, w, h), = ref[f"haarcascade_{cascade}"]
    assert len(dets) == 1
    assert iou(dets[0], Detection(x, y, w, h, 1.0, 0)) > 0.8


def test_detection_line_format():
    assert Detection(1, 2, 30, 31, 1.5625, 7).line() == "1 2 30 31 1.5625 7"
    assert format_detections([Detection(0, 0, 1, 1, 1.0, 1)]) == "0 0 1 1 1.0000 1\n"


def test_params_validated():
    for bad in (dict(scale_factor=1.0), dict(step=0), dict(min_neighbors=-1)):
        with pytest.raises(ValueError):
            DetectParams(**bad)


boxes = st.builds(Detection, st.integers(0, 60), st.integers(0, 60), st.integers(10, 30),
                  st.integers(10, 30), st.sampled_from([1.0, 1.25]), st.integers(1, 22))


@settings(max_examples=60, deadline=None)
@given(st.lists(boxes, max_size=12), st.integers(0, 3), st.randoms(use_true_random=False))
def test_grouping_ignores_input_order(dets, k, rnd):
    shuffled = list(dets)
    rnd.shuffle(shuffled)
    assert group_detections(dets, k) == group_detections(shuffled, k)


def test_grouping_merges_overlaps():
    a = Detection(10, 10, 20, 20, 1.0, 22)
    b = Detection(12, 10, 20, 20, 1.0, 22)
    far = Detection(60, 60, 20, 20, 1.0, 22)
    assert group_detections([a, b, far], 2) == [Detection(11, 10, 20, 20, 1.0, 22)]
    assert len(group_detections([a, b, far], 1)) == 2
