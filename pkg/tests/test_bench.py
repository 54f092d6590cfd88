import numpy as np
import pytest

from rbivision.bench import (MODES, PHASES, REFERENCE_RATIO, BenchReport, BenchRun, LinearFit,
                             ScalingPoint, bench_image, scaling_vs_slots, scaling_vs_window_size,
                             secure_scan, server_window_seconds)
from rbivision.detector import DetectParams, detect
from rbivision.rng import StreamRandom
from rbivision.synth import noise_image, scene


def test_linear_fit():
    f = LinearFit.of([1, 2, 3, 4], [3, 5, 7, 9])
    assert f.slope == pytest.approx(2) and f.intercept == pytest.approx(1)
    assert f.r2 == pytest.approx(1) and f.max_rel_dev < 1e-9


def test_reference_ratio():
    assert REFERENCE_RATIO == pytest.approx(378.56, abs=0.01)


def test_secure_scan_phases(qalt, faces_alt):
    img, _ = scene(faces_alt, 40, 40, StreamRandom(1), count=1)
    p = DetectParams(min_neighbors=1)
    dets, phases = secure_scan(img, qalt, p, k_fakes=2, seed=1)
    assert dets == detect(img, qalt, p)
    assert set(phases) == set(PHASES) and all(v >= 0 for v in phases.values())


def test_bench_report(qalt):
    img = noise_image(40, 40, 2)
    report = BenchReport()
    bench_image(report, "n40", img, qalt, DetectParams(), ["plain", "secure-mock"], repetitions=5)
    plain, sec = report.runs
    assert len(plain.samples) == 5 and plain.median == sorted(plain.samples)[2]
    total = sec.median
    assert sum(sec.phases.values()) <= max(sec.samples) * 1.05 and total > 0
    assert report.ratio("n40") == pytest.approx(sec.median / plain.median)
    assert report.ratio("n40") > 1
    text = report.text()
    assert "ratio secure-mock/plain on n40" in text and "378.6x" in text
    csv = report.csv().splitlines()
    assert csv[0].startswith("kind,mode,image") and len(csv) == 11
    with pytest.raises(ValueError):
        bench_image(report, "x", img, qalt, DetectParams(), ["bogus"])
    assert MODES == ("plain", "secure-mock", "secure-real")


def test_server_time_grows_with_slots(qalt):
    wins = np.random.default_rng(0).integers(0, 256, (2, 20, 20)).astype(np.uint8)
    report = BenchReport()
    scaling_vs_slots(report, qalt, [0, 64, 256], wins, repetitions=3, rng=StreamRandom(1))
    pts = [p for p in report.scaling if p.kind == "slots"]
    assert [p.x for p in pts] == [2135, 2135 + 64 * 22, 2135 + 256 * 22]
    assert pts[0].seconds < pts[-1].seconds
    assert report.fit("slots").slope > 0
    assert "scaling vs slots" in report.text()


def test_window_size_scaling(qalt, qdefault):
    report = BenchReport()
    scaling_vs_window_size(report, [qalt, qdefault], repetitions=2, windows_per=2, rng=StreamRandom(2))
    assert [p.label for p in report.scaling] == ["20x20", "24x24"]
    assert [p.x for p in report.scaling] == [400, 576]


def test_server_window_seconds_positive(qalt):
    wins = np.zeros((1, 20, 20), np.uint8)
    assert server_window_seconds(qalt, 0, wins, 1, StreamRandom(3)) > 0


def test_fit_needs_two_points():
    r = BenchReport(scaling=[ScalingPoint("slots", 1, 1.0)])
    assert r.fit("slots") is None and r.ratio("none") is None
    r.runs.append(BenchRun("plain", "a", 1, 1, 1, [0.1]))
    assert r.ratio("a") is None
