"""Integral images, fixed-point cascades and exact integer evaluation.

Everything on the evaluation path is integer arithmetic. A quantized feature
response is ``F = sum(weight_q * rect_sum)`` with ``weight_q = round(weight *
q_feat)``; it is compared against ``theta_q = round(theta * area * q_feat)``,
which is OpenCV's threshold test with the window standard deviation fixed
to 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sparse

from .cascade import Cascade, HaarFeature
from .errors import QuantizationError, UnsupportedCascade

Q_FEAT = 1 << 12
Q_LEAF = 1 << 16
COMPARE_BITS = 48
COMPARE_LIMIT = 1 << (COMPARE_BITS - 1)
LEAF_LIMIT = 1 << 32

# corner pattern of a rect sum: ii[y+h, x+w] - ii[y, x+w] - ii[y+h, x] + ii[y, x]
_CORNER_SIGNS = (1, -1, -1, 1)


def as_gray(img) -> np.ndarray:
    """Validate and return a 2-D uint8 view of ``img``."""
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {a.shape}")
    if a.dtype != np.uint8:
        if a.size and (a.min() < 0 or a.max() > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        a = a.astype(np.uint8)
    return a


def integral(img) -> np.ndarray:
    """(h+1, w+1) int64 table with ``ii[y, x] = img[:y, :x].sum()``."""
    a = np.asarray(img, dtype=np.int64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {a.shape}")
    ii = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=ii[1:, 1:])
    return ii


def integral_stack(planes: np.ndarray) -> np.ndarray:
    """Integral images of a (M, h, w) stack in one pass; shape (M, h+1, w+1)."""
    m, h, w = planes.shape
    ii = np.zeros((m, h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(planes, axis=1, dtype=np.int64), axis=2, out=ii[:, 1:, 1:])
    return ii


def integral_cells(planes: np.ndarray) -> np.ndarray:
    """Same tables as :func:`integral_stack`, laid out cell-major: shape
    ((h+1)*(w+1), M) so one cell of every plane is contiguous."""
    m, h, w = planes.shape
    ii = np.zeros((h + 1, w + 1, m), dtype=np.int64)
    np.cumsum(np.cumsum(np.moveaxis(planes, 0, -1), axis=0, dtype=np.int64), axis=1, out=ii[1:, 1:])
    return ii.reshape(-1, m)


def rect_sum(ii: np.ndarray, x: int, y: int, w: int, h: int) -> int:
    return int(ii[y + h, x + w] - ii[y, x + w] - ii[y + h, x] + ii[y, x])


# ---------------------------------------------------------------------------
# Quantized cascade

@dataclass(frozen=True)
class QRect:
    x: int
    y: int
    w: int
    h: int
    weight: int


@dataclass(frozen=True)
class QFeature:
    rects: tuple[QRect, ...]

    def bound(self) -> int:
        """Largest |response| over any uint8 window."""
        return sum(abs(r.weight) * r.w * r.h * 255 for r in self.rects)


@dataclass(frozen=True)
class QWeak:
    feature: QFeature
    theta: int
    alpha: int
    beta: int


class FeatureTable:
    """Vectorized corner lookups for a batch of features.

    ``dy``/``dx``/``coef`` have shape (n, 12): three rects of four corners,
    unused slots carry coefficient 0.
    """

    def __init__(self, features: Sequence[QFeature]):
        n = len(features)
        self.dy = np.zeros((n, 12), dtype=np.int64)
        self.dx = np.zeros((n, 12), dtype=np.int64)
        self.coef = np.zeros((n, 12), dtype=np.int64)
        for i, f in enumerate(features):
            for j, r in enumerate(f.rects):
                corners = ((r.y + r.h, r.x + r.w), (r.y, r.x + r.w), (r.y + r.h, r.x), (r.y, r.x))
                for k, ((cy, cx), sign) in enumerate(zip(corners, _CORNER_SIGNS)):
                    self.dy[i, 4 * j + k] = cy
                    self.dx[i, 4 * j + k] = cx
                    self.coef[i, 4 * j + k] = sign * r.weight

    @classmethod
    def from_arrays(cls, dy: np.ndarray, dx: np.ndarray, coef: np.ndarray) -> "FeatureTable":
        t = cls.__new__(cls)
        t.dy = np.ascontiguousarray(dy, dtype=np.int64).reshape(-1, 12)
        t.dx = np.ascontiguousarray(dx, dtype=np.int64).reshape(-1, 12)
        t.coef = np.ascontiguousarray(coef, dtype=np.int64).reshape(-1, 12)
        return t

    def take(self, order) -> "FeatureTable":
        return FeatureTable.from_arrays(self.dy[order], self.dx[order], self.coef[order])

    def __len__(self) -> int:
        return self.coef.shape[0]

    def flat_index(self, stride: int) -> np.ndarray:
        return self.dy * stride + self.dx

    def responses(self, ii: np.ndarray, oy: np.ndarray, ox: np.ndarray) -> np.ndarray:
        """Responses of every feature at every window origin; shape (windows, n)."""
        stride = ii.shape[1]
        flat = ii.ravel()
        base = (np.asarray(oy, dtype=np.int64) * stride + np.asarray(ox, dtype=np.int64))
        idx = base[:, None, None] + self.flat_index(stride)[None]
        return (flat[idx] * self.coef[None]).sum(axis=2)

    @property
    def lookups(self) -> int:
        """Integral-table reads per plane: four per rectangle."""
        return int(np.count_nonzero(self.coef))

    def corner_matrix(self, stride: int, size: int) -> sparse.csr_matrix:
        """Sparse (n, size) matrix holding each feature's signed corner weights."""
        key = (stride, size)
        cache = self.__dict__.setdefault("_corner_cache", {})
        if key not in cache:
            n = len(self)
            # fixed 12 slots per row; unused slots hold explicit zeros
            cache[key] = sparse.csr_matrix(
                (self.coef.ravel(), self.flat_index(stride).ravel().astype(np.int32),
                 np.arange(0, 12 * n + 1, 12, dtype=np.int32)), shape=(n, size))
        return cache[key]

    def cell_responses(self, cells: np.ndarray, stride: int) -> np.ndarray:
        """Responses on every plane from a cell-major table (see :func:`integral_cells`)."""
        return np.asarray(self.corner_matrix(stride, cells.shape[0]) @ cells, dtype=np.int64)

    def plane_responses(self, ii_stack: np.ndarray) -> np.ndarray:
        """Responses on every plane of a (M, h+1, w+1) stack at origin 0; shape (n, M).

        Each row of the corner matrix has four entries per rectangle, so the
        product reads exactly those integral cells on every plane."""
        m, h1, w1 = ii_stack.shape
        return self.cell_responses(np.ascontiguousarray(ii_stack.reshape(m, -1).T), w1)


@dataclass(frozen=True)
class QStage:
    weak: tuple[QWeak, ...]
    stage_threshold: int

    @cached_property
    def table(self) -> FeatureTable:
        return FeatureTable([wc.feature for wc in self.weak])

    @cached_property
    def thetas(self) -> np.ndarray:
        return np.array([wc.theta for wc in self.weak], dtype=np.int64)

    @cached_property
    def alphas(self) -> np.ndarray:
        return np.array([wc.alpha for wc in self.weak], dtype=np.int64)

    @cached_property
    def betas(self) -> np.ndarray:
        return np.array([wc.beta for wc in self.weak], dtype=np.int64)


@dataclass(frozen=True)
class QuantizedCascade:
    stages: tuple[QStage, ...]
    window_width: int
    window_height: int
    name: str
    q_feat: int
    q_leaf: int

    @property
    def window_area(self) -> int:
        return self.window_width * self.window_height

    @property
    def weak_counts(self) -> tuple[int, ...]:
        return tuple(len(s.weak) for s in self.stages)


def _is_pow2(v: int) -> bool:
    return isinstance(v, (int, np.integer)) and v > 0 and (v & (v - 1)) == 0


def _round(v: float) -> int:
    # round half away from zero, independent of float formatting
    return int(np.sign(v) * np.floor(abs(v) + 0.5))


def quantize_feature(f: HaarFeature, q_feat: int) -> QFeature:
    return QFeature(tuple(QRect(r.x, r.y, r.w, r.h, _round(r.weight * q_feat)) for r in f.rects))


def quantize(c: Cascade, q_feat: int = Q_FEAT, q_leaf: int = Q_LEAF) -> QuantizedCascade:
    """Fixed-point copy of ``c`` whose evaluation is exact integer arithmetic."""
    if not (_is_pow2(q_feat) and _is_pow2(q_leaf)):
        raise ValueError("q_feat and q_leaf must be powers of two")
    if c.uses_tilted:
        raise UnsupportedCascade(f"cascade {c.name!r} uses tilted features")
    area = c.window_area
    stages = []
    for si, st in enumerate(c.stages):
        weak = []
        for wi, wc in enumerate(st.weak):
            qf = quantize_feature(wc.feature, q_feat)
            qw = QWeak(qf, _round(wc.theta * area * q_feat),
                       _round(wc.alpha * q_leaf), _round(wc.beta * q_leaf))
            where = f"stage {si} weak {wi}"
            if qf.bound() >= COMPARE_LIMIT or abs(qw.theta) >= COMPARE_LIMIT:
                raise QuantizationError(f"{where}: response range exceeds {COMPARE_BITS} bits")
            if abs(qw.alpha) >= LEAF_LIMIT or abs(qw.beta) >= LEAF_LIMIT:
                raise QuantizationError(f"{where}: leaf value exceeds 32 bits")
            weak.append(qw)
        thr = _round(st.stage_threshold * q_leaf)
        if abs(thr) >= COMPARE_LIMIT:
            raise QuantizationError(f"stage {si}: threshold exceeds {COMPARE_BITS} bits")
        stages.append(QStage(tuple(weak), thr))
    return QuantizedCascade(tuple(stages), c.window_width, c.window_height, c.name, q_feat, q_leaf)


# ---------------------------------------------------------------------------
# Evaluation

def eval_feature(ii: np.ndarray, f: QFeature, offset: tuple[int, int] = (0, 0)) -> int:
    """Response of ``f`` for the window whose top-left corner is ``offset`` (x, y)."""
    ox, oy = offset
    return sum(r.weight * rect_sum(ii, ox + r.x, oy + r.y, r.w, r.h) for r in f.rects)


def eval_stage(ii: np.ndarray, stage: QStage, offset: tuple[int, int] = (0, 0)) -> tuple[bool, int]:
    score = 0
    for wc in stage.weak:
        score += wc.alpha if eval_feature(ii, wc.feature, offset) > wc.theta else wc.beta
    return score >= stage.stage_threshold, score


def window_stddev(ii: np.ndarray, sq_ii: np.ndarray, oy, ox, w: int, h: int) -> np.ndarray:
    """Per-window pixel standard deviation (1.0 where the window is flat)."""
    oy = np.asarray(oy, dtype=np.int64)
    ox = np.asarray(ox, dtype=np.int64)

    def box(t):
        return t[oy + h, ox + w] - t[oy, ox + w] - t[oy + h, ox] + t[oy, ox]

    area = w * h
    s = box(ii).astype(np.float64)
    sq = box(sq_ii).astype(np.float64)
    var = sq / area - (s / area) ** 2
    sd = np.sqrt(np.maximum(var, 0.0))
    return np.where(sd > 0, sd, 1.0)


def stage_scores(ii: np.ndarray, stage: QStage, oy, ox,
                 norm: Optional[np.ndarray] = None) -> np.ndarray:
    """Stage score for a batch of window origins."""
    f = stage.table.responses(ii, oy, ox)
    if norm is None:
        fired = f > stage.thetas[None, :]
    else:
        fired = f > stage.thetas[None, :] * norm[:, None]
    return np.where(fired, stage.alphas[None, :], stage.betas[None, :]).sum(axis=1)


def rasterize(f: QFeature, width: int, height: int) -> np.ndarray:
    """Per-pixel weight image ``y`` with ``x . y == eval_feature(x)``."""
    y = np.zeros((height, width), dtype=np.int64)
    for r in f.rects:
        y[r.y:r.y + r.h, r.x:r.x + r.w] += r.weight
    return y


def features_of(stages: Iterable[QStage]) -> list[QFeature]:
    return [wc.feature for st in stages for wc in st.weak]
