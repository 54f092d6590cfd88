import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_rect_sum, naive_classify, naive_feature, raster
from rbivision.cascade import HaarFeature, RectWeight, Stage, WeakClassifier, build_cascade
from rbivision.errors import QuantizationError
from rbivision.integral import (FeatureTable, QFeature, QRect, QStage, QWeak, eval_feature,
                                eval_stage, features_of, integral, integral_cells, integral_stack,
                                quantize, rasterize, rect_sum)

RNG = np.random.default_rng(20240601)


def one_weak_cascade(weights, theta=0.0, alpha=0.0, beta=0.0, threshold=0.0, size=(24, 24)):
    rects = tuple(RectWeight(0, 0, size[0], size[1], w) if i == 0 else
                  RectWeight(0, 0, size[0] // 2, size[1], w) for i, w in enumerate(weights))
    wc = WeakClassifier(HaarFeature(rects), theta, alpha, beta)
    return build_cascade([Stage((wc,), threshold)], size)


# -- integral images ---------------------------------------------------------

def test_zero_image():
    assert not integral(np.zeros((8, 8), np.uint8)).any()


def test_ones_closed_form():
    ii = integral(np.ones((8, 8), np.uint8))
    y, x = np.mgrid[0:9, 0:9]
    assert np.array_equal(ii, x * y)


def test_random_rects_against_brute_force():
    img = RNG.integers(0, 256, (24, 24)).astype(np.uint8)
    ii = integral(img)
    for _ in range(200):
        x, y = RNG.integers(0, 24, 2)
        w, h = RNG.integers(1, 25 - x), RNG.integers(1, 25 - y)
        assert rect_sum(ii, x, y, w, h) == brute_rect_sum(img, x, y, w, h)


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_every_rect_exhaustive(img):
    ii = integral(img)
    h, w = img.shape
    assert ii[0].sum() == 0 and ii[:, 0].sum() == 0
    assert (np.diff(ii, axis=0) >= 0).all() and (np.diff(ii, axis=1) >= 0).all()
    for y in range(h):
        for x in range(w):
            for rh in range(1, h - y + 1):
                for rw in range(1, w - x + 1):
                    assert rect_sum(ii, x, y, rw, rh) == brute_rect_sum(img, x, y, rw, rh)


def test_stack_and_cell_layouts_agree():
    planes = RNG.integers(0, 2, (5, 7, 9)).astype(bool)
    stack = integral_stack(planes)
    for m in range(5):
        assert np.array_equal(stack[m], integral(planes[m]))
    cells = integral_cells(planes)
    assert np.array_equal(cells, stack.reshape(5, -1).T)


# -- quantization ------------------------------------------------------------

def test_quantize_examples():
    qc = quantize(one_weak_cascade([-1.0, 2.0], theta=0.5, alpha=0.0, beta=0.25))
    wc = qc.stages[0].weak[0]
    assert wc.feature.rects[0].weight == -4096
    assert wc.feature.rects[1].weight == 8192
    assert wc.theta == 1_179_648                      # round(0.5 * 576 * 4096)
    assert wc.alpha == 0 and wc.beta == 16384
    assert (qc.q_feat, qc.q_leaf) == (4096, 65536)


def test_quantize_is_deterministic(alt):
    assert quantize(alt) == quantize(alt)


def test_quantize_overflow():
    with pytest.raises(QuantizationError):
        quantize(one_weak_cascade([-1.0, 1e6]))
    with pytest.raises(QuantizationError):
        quantize(one_weak_cascade([-1.0, 2.0], alpha=1e6))
    with pytest.raises(QuantizationError):
        quantize(one_weak_cascade([-1.0, 2.0], theta=1e8))


def test_quantize_needs_powers_of_two(alt):
    with pytest.raises(ValueError):
        quantize(alt, q_feat=3000)


def test_fixture_stays_inside_budget(qalt, qdefault):
    for qc in (qalt, qdefault):
        for f in features_of(qc.stages):
            assert f.bound() < 2 ** 41 + 2 ** 40
        for s in qc.stages:
            assert all(abs(w.alpha) < 2 ** 32 and abs(w.beta) < 2 ** 32 for w in s.weak)


@pytest.mark.parametrize("q", [2 ** k for k in range(6, 15)])
def test_quantized_comparisons_follow_real_ones(alt, q):
    # a comparison the real-valued evaluation makes with a clear margin is
    # reproduced by the fixed-point one at every precision
    qc = quantize(alt, q_feat=q)
    area = alt.window_area
    windows = RNG.integers(0, 256, (20, 20, 20))
    for real_wc, qwc in zip(alt.stages[2].weak, qc.stages[2].weak):
        for win in windows:
            sums = [int(win[r.y:r.y + r.h, r.x:r.x + r.w].sum()) for r in real_wc.feature.rects]
            f_real = sum(r.weight * s for r, s in zip(real_wc.feature.rects, sums))
            margin = (0.5 + 0.5 * sum(sums)) / q
            if abs(f_real - real_wc.theta * area) <= margin:
                continue
            assert (naive_feature(win, qwc.feature) > qwc.theta) == (f_real > real_wc.theta * area)


# -- evaluation --------------------------------------------------------------

def test_zero_window_gives_zero(qalt):
    ii = integral(np.zeros((20, 20), np.uint8))
    assert all(eval_feature(ii, f) == 0 for f in features_of(qalt.stages))


def test_full_window_closed_form():
    f = QFeature((QRect(0, 0, 24, 24, 4096),))
    ii = integral(np.full((24, 24), 255, np.uint8))
    assert eval_feature(ii, f) == 601_620_480
    assert eval_feature(ii, f) == 4096 * brute_rect_sum(np.full((24, 24), 255), 0, 0, 24, 24)


def test_features_equal_rasterized_dot_product(qalt):
    feats = features_of(qalt.stages)
    for i in RNG.choice(len(feats), 100, replace=False):
        img = RNG.integers(0, 256, (30, 34)).astype(np.uint8)
        ox, oy = RNG.integers(0, 14), RNG.integers(0, 10)
        win = img[oy:oy + 20, ox:ox + 20].astype(np.int64)
        y = raster(feats[i], 20, 20)
        assert np.array_equal(rasterize(feats[i], 20, 20), y)
        assert eval_feature(integral(img), feats[i], (ox, oy)) == int((win * y).sum())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2134), st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 2 ** 32 - 1))
def test_feature_is_linear(qalt, idx, a, b, seed):
    f = features_of(qalt.stages)[idx]
    r = np.random.default_rng(seed)
    x1, x2 = r.integers(0, 40, (2, 20, 20))
    # the integral table itself is plain integer arithmetic, so negative and
    # out-of-range combinations are fine here
    lhs = eval_feature(integral(a * x1 + b * x2), f)
    assert lhs == a * eval_feature(integral(x1), f) + b * eval_feature(integral(x2), f)


def test_eval_stage_examples():
    f = QFeature((QRect(0, 0, 4, 4, -4096), QRect(0, 0, 2, 4, 8192)))
    zero = integral(np.zeros((4, 4), np.uint8))
    assert eval_stage(zero, QStage((QWeak(f, -1, 1, 0),), 1)) == (True, 1)
    assert eval_stage(zero, QStage((QWeak(f, 5, 0, 0), QWeak(f, -5, 0, 0)), 0)) == (True, 0)


def test_eval_stage_matches_naive(qalt):
    for _ in range(200):
        win = RNG.integers(0, 256, (20, 20)).astype(np.uint8)
        s = RNG.integers(0, len(qalt.stages))
        stage = qalt.stages[s]
        ok, score = eval_stage(integral(win), stage)
        naive = sum(w.alpha if naive_feature(win, w.feature) > w.theta else w.beta for w in stage.weak)
        assert score == naive and ok == (naive >= stage.stage_threshold)


def test_batched_tables_match_scalar(qalt):
    stage = qalt.stages[5]
    img = RNG.integers(0, 256, (40, 40)).astype(np.uint8)
    ii = integral(img)
    oy, ox = RNG.integers(0, 21, (2, 30))
    got = stage.table.responses(ii, oy, ox)
    for k in range(30):
        for n, wc in enumerate(stage.weak):
            assert got[k, n] == eval_feature(ii, wc.feature, (ox[k], oy[k]))


def test_plane_responses_match_scalar(qalt):
    stage = qalt.stages[3]
    planes = RNG.integers(0, 2, (16, 20, 20)).astype(bool)
    got = stage.table.plane_responses(integral_stack(planes))
    assert got.shape == (len(stage.weak), 16)
    for m in range(16):
        ii = integral(planes[m])
        assert [eval_feature(ii, wc.feature) for wc in stage.weak] == got[:, m].tolist()
    assert stage.table.lookups == sum(4 * len(wc.feature.rects) for wc in stage.weak)


def test_feature_table_take():
    t = FeatureTable([QFeature((QRect(0, 0, 2, 2, k),)) for k in (1, 2, 3)])
    assert t.take([2, 0]).coef[:, 0].tolist() == [3, 1]


def test_naive_classifier_agrees_with_stages(qalt):
    win = RNG.integers(0, 256, (20, 20)).astype(np.uint8)
    ii = integral(win)
    ok, reached = naive_classify(win, qalt)
    for si, stage in enumerate(qalt.stages[:reached]):
        passed, _ = eval_stage(ii, stage)
        assert passed == (si + 1 < reached or ok)
