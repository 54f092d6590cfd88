"""Synthetic test data: accepted windows, scenes and random cascades.

Real face datasets are not shipped. Instead a hill climber nudges
low-contrast windows until the quantized cascade accepts them; such windows
pasted into noise give scenes with a realistic mix of early rejections,
deep partial passes and detections.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .cascade import Cascade, HaarFeature, RectWeight, Stage, WeakClassifier, build_cascade
from .integral import QuantizedCascade, integral_cells
from .rng import StreamRandom, as_rng


def cascade_progress(qc: QuantizedCascade, windows: np.ndarray) -> np.ndarray:
    """Per window: number of stages passed plus a [0, 1) credit for how close
    the first failing stage came to its threshold."""
    windows = np.asarray(windows)
    cells = integral_cells(windows.astype(np.int64))
    stride = qc.window_width + 1
    out = np.zeros(len(windows))
    alive = np.ones(len(windows), dtype=bool)
    for st in qc.stages:
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        r = st.table.cell_responses(cells[:, idx], stride)
        score = np.where(r > st.thetas[:, None], st.alphas[:, None], st.betas[:, None]).sum(axis=0)
        ok = score >= st.stage_threshold
        span = max(int(np.abs(st.alphas - st.betas).sum()), 1)
        out[idx[ok]] += 1.0
        out[idx[~ok]] += np.clip(1.0 + (score[~ok] - st.stage_threshold) / span, 0.0, 0.999)
        alive[idx[~ok]] = False
    return out


def search_windows(qc: QuantizedCascade, count: int, rng=None, population: int = 128,
                   max_steps: int = 20000, level: int = 128, spread: int = 2) -> np.ndarray:
    """Hill-climb ``count`` distinct windows that pass every stage.

    Climbers start as ``level`` +- ``spread`` noise; each step perturbs a few
    pixels by +-1 or +-2 and keeps the change unless progress drops.
    """
    rng = as_rng(rng)
    h, w = qc.window_height, qc.window_width
    full = len(qc.stages)
    x = np.clip(level + rng.integers(np.full((population, h, w), -spread), spread), 0, 255)
    fit = cascade_progress(qc, x)
    found: dict[bytes, np.ndarray] = {}
    rows = np.arange(population)
    for _ in range(max_steps):
        y = x.copy()
        for _ in range(1 + int(rng.randbelow(3))):
            i = rng.integers(np.zeros(population), h - 1)
            j = rng.integers(np.zeros(population), w - 1)
            d = np.array([-2, -1, 1, 2])[rng.integers(np.zeros(population), 3)]
            y[rows, i, j] = np.clip(y[rows, i, j] + d, 0, 255)
        g = cascade_progress(qc, y)
        keep = g >= fit
        x[keep], fit[keep] = y[keep], g[keep]
        for k in np.flatnonzero(fit >= full):
            win = x[k].astype(np.uint8)
            found.setdefault(win.tobytes(), win)
        if len(found) >= count:
            break
    if len(found) < count:
        raise RuntimeError(f"found only {len(found)} accepted windows in {max_steps} steps")
    return np.stack(list(found.values())[:count])


def noise_image(width: int, height: int, rng=None, level: int = 128, spread: int = 3) -> np.ndarray:
    rng = as_rng(rng)
    return np.clip(level + rng.integers(np.full((height, width), -spread), spread), 0, 255).astype(np.uint8)


def scene(windows: np.ndarray, width: int = 100, height: int = 100, rng=None,
          count: Optional[int] = None, step: int = 2, spread: int = 3) -> tuple[np.ndarray, list]:
    """Noise image with ``count`` windows pasted on the scan grid (no overlap).

    Returns the image and the list of ``(x, y)`` paste positions.
    """
    rng = as_rng(rng)
    img = noise_image(width, height, rng, spread=spread)
    n, wh, ww = windows.shape
    count = int(rng.randint(1, 3)) if count is None else count
    placed: list[tuple[int, int]] = []
    for _ in range(count * 20):
        if len(placed) == count:
            break
        x = step * int(rng.randbelow((width - ww) // step + 1))
        y = step * int(rng.randbelow((height - wh) // step + 1))
        if any(abs(x - px) < ww and abs(y - py) < wh for px, py in placed):
            continue
        img[y:y + wh, x:x + ww] = windows[int(rng.randbelow(n))]
        placed.append((x, y))
    return img, placed


def random_cascade(width: int, height: int, stage_sizes: Sequence[int], rng=None,
                   name: str = "synthetic") -> Cascade:
    """Random cascade of two-rectangle Haar-like stumps (for benchmarks)."""
    rng = as_rng(rng)
    stages = []
    for n in stage_sizes:
        weak = []
        for _ in range(n):
            vertical = bool(rng.randbelow(2))
            parts = 2 + int(rng.randbelow(2))
            span, other = (height, width) if vertical else (width, height)
            cell = 1 + int(rng.randbelow(max(span // parts, 1)))
            length = 1 + int(rng.randbelow(other))
            fw, fh = (length, cell * parts) if vertical else (cell * parts, length)
            x = int(rng.randbelow(width - fw + 1))
            y = int(rng.randbelow(height - fh + 1))
            sub = (x, y + cell, fw, cell) if vertical else (x + cell, y, cell, fh)
            feat = HaarFeature((RectWeight(x, y, fw, fh, -1.0), RectWeight(*sub, float(parts))))
            theta = (rng.randbelow(2001) - 1000) / 1e5
            alpha = (rng.randbelow(2001) - 1000) / 1000
            beta = (rng.randbelow(2001) - 1000) / 1000
            weak.append(WeakClassifier(feat, theta, alpha, beta))
        stages.append(Stage(tuple(weak), -0.5 * n))
    return build_cascade(stages, (width, height), name)
