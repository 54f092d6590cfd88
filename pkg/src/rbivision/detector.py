"""Plain (non-private) Viola-Jones scan over an image pyramid.

The secure client reuses :func:`enumerate_windows` and
:func:`group_detections` so both paths see exactly the same windows and
post-processing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .integral import QuantizedCascade, as_gray, integral, stage_scores, window_stddev

GROUP_IOU = 0.4


@dataclass(frozen=True)
class DetectParams:
    scale_factor: float = 1.25
    step: int = 2
    min_neighbors: int = 3
    normalize: bool = False

    def __post_init__(self):
        if not self.scale_factor > 1:
            raise ValueError("scale_factor must be > 1")
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.min_neighbors < 0:
            raise ValueError("min_neighbors must be >= 0")


@dataclass(frozen=True)
class Detection:
    x: int
    y: int
    w: int
    h: int
    scale: float
    stage_reached: int

    def line(self) -> str:
        return f"{self.x} {self.y} {self.w} {self.h} {self.scale:.4f} {self.stage_reached}"


@dataclass
class PyramidLevel:
    index: int
    image: np.ndarray          # uint8, downscaled
    scale: float               # nominal scale_factor ** index
    offsets: np.ndarray        # (k, 2) int64 window origins (x, y) in this level

    def to_image_box(self, ox: int, oy: int, ww: int, wh: int, full_w: int, full_h: int):
        h, w = self.image.shape
        return (_ratio_round(ox * full_w, w), _ratio_round(oy * full_h, h),
                _ratio_round(ww * full_w, w), _ratio_round(wh * full_h, h))


def _ratio_round(num: int, den: int) -> int:
    return (2 * num + den) // (2 * den)


def _overlap_matrix(src: int, dst: int) -> np.ndarray:
    # source pixel i spans [i*dst, (i+1)*dst), target pixel j spans [j*src, (j+1)*src)
    i = np.arange(src, dtype=np.int64)
    j = np.arange(dst, dtype=np.int64)
    lo = np.maximum(i[None, :] * dst, j[:, None] * src)
    hi = np.minimum((i[None, :] + 1) * dst, (j[:, None] + 1) * src)
    return np.maximum(hi - lo, 0)


def downscale(img: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Box-filter resample with exact integer weights and round-half-up."""
    h, w = img.shape
    if (new_w, new_h) == (w, h):
        return img.copy()
    ay = _overlap_matrix(h, new_h)
    ax = _overlap_matrix(w, new_w)
    num = ay @ img.astype(np.int64) @ ax.T
    den = w * h
    return ((2 * num + den) // (2 * den)).astype(np.uint8)


def pyramid_sizes(width: int, height: int, win_w: int, win_h: int, scale_factor: float):
    sizes = []
    k = 0
    while True:
        f = scale_factor ** k
        w, h = int(width / f), int(height / f)
        if w < win_w or h < win_h:
            return sizes
        sizes.append((w, h, f))
        k += 1


def enumerate_windows(img, c, params: DetectParams) -> list[PyramidLevel]:
    """Pyramid levels with their window origins. ``c`` is any object with
    ``window_width``/``window_height``."""
    img = as_gray(img)
    H, W = img.shape
    ww, wh = c.window_width, c.window_height
    levels = []
    for k, (w, h, f) in enumerate(pyramid_sizes(W, H, ww, wh, params.scale_factor)):
        xs = np.arange(0, w - ww + 1, params.step, dtype=np.int64)
        ys = np.arange(0, h - wh + 1, params.step, dtype=np.int64)
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        offs = np.stack([gx.ravel(), gy.ravel()], axis=1)
        levels.append(PyramidLevel(k, downscale(img, w, h), f, offs))
    return levels


def window_count(levels: Iterable[PyramidLevel]) -> int:
    return sum(len(lv.offsets) for lv in levels)


def classify_windows(ii: np.ndarray, qc: QuantizedCascade, offsets: np.ndarray,
                     sq_ii: Optional[np.ndarray] = None,
                     short_circuit: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Batch cascade evaluation.

    Returns ``(accepted, stage_reached)`` where ``stage_reached`` is the
    1-based index of the first failing stage, or the stage count when every
    stage passes.
    """
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)
    n = len(offsets)
    nstages = len(qc.stages)
    reached = np.full(n, nstages, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    norm = None
    if sq_ii is not None:
        norm = window_stddev(ii, sq_ii, offsets[:, 1], offsets[:, 0],
                             qc.window_width, qc.window_height)
    for si, st in enumerate(qc.stages):
        idx = np.flatnonzero(alive) if short_circuit else np.arange(n)
        if idx.size == 0:
            break
        scores = stage_scores(ii, st, offsets[idx, 1], offsets[idx, 0],
                              None if norm is None else norm[idx])
        failed = idx[scores < st.stage_threshold]
        newly = failed[alive[failed]]
        reached[newly] = si + 1
        alive[newly] = False
    return alive, reached


def classify_window(ii: np.ndarray, qc: QuantizedCascade, offset: tuple[int, int],
                    sq_ii: Optional[np.ndarray] = None) -> tuple[bool, int]:
    acc, reached = classify_windows(ii, qc, np.array([offset]), sq_ii)
    return bool(acc[0]), int(reached[0])


def level_integrals(level: PyramidLevel, normalize: bool):
    ii = integral(level.image)
    sq = integral(level.image.astype(np.int64) ** 2) if normalize else None
    return ii, sq


def raw_detections(img, qc: QuantizedCascade, params: DetectParams) -> list[Detection]:
    """Every accepted window, mapped to image coordinates, before grouping."""
    img = as_gray(img)
    H, W = img.shape
    out = []
    for lv in enumerate_windows(img, qc, params):
        ii, sq = level_integrals(lv, params.normalize)
        acc, reached = classify_windows(ii, qc, lv.offsets, sq)
        for (ox, oy), r in zip(lv.offsets[acc], reached[acc]):
            x, y, w, h = lv.to_image_box(int(ox), int(oy), qc.window_width, qc.window_height, W, H)
            out.append(Detection(x, y, w, h, lv.scale, int(r)))
    return out


def detect(img, qc: QuantizedCascade, params: DetectParams = DetectParams()) -> list[Detection]:
    return group_detections(raw_detections(img, qc, params), params.min_neighbors)


# ---------------------------------------------------------------------------
# Grouping

def iou(a: Detection, b: Detection) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union else 0.0


def _sort_key(d: Detection):
    return (d.y, d.x, d.h, d.w, d.scale, d.stage_reached)


def group_detections(dets: Sequence[Detection], min_neighbors: int,
                     threshold: float = GROUP_IOU) -> list[Detection]:
    """Cluster boxes connected by IoU >= threshold; emit one mean box per
    cluster of at least ``min_neighbors`` members. ``min_neighbors == 0``
    disables grouping."""
    dets = sorted(dets, key=_sort_key)
    if min_neighbors == 0:
        return dets
    parent = list(range(len(dets)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(dets)):
        for j in range(i + 1, len(dets)):
            if iou(dets[i], dets[j]) >= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    clusters: dict[int, list[Detection]] = {}
    for i, d in enumerate(dets):
        clusters.setdefault(find(i), []).append(d)
    out = []
    for members in clusters.values():
        n = len(members)
        if n < min_neighbors:
            continue
        mean = [_ratio_round(sum(getattr(d, k) for d in members), n) for k in "xywh"]
        out.append(Detection(*mean, scale=sum(d.scale for d in members) / n,
                             stage_reached=max(d.stage_reached for d in members)))
    return sorted(out, key=_sort_key)


def format_detections(dets: Iterable[Detection]) -> str:
    return "".join(d.line() + "\n" for d in dets)
