"""Random base image (RBI) codec.

A window ``x`` is written as ``x = sum_i w_i * B_i`` with ``M`` binary planes
and fixed weights ``w_i = i``. Each pixel value ``p`` is split into random
distinct summands; plane ``k`` has a 1 at that pixel iff ``k`` is one of the
summands. Plane 0 carries weight 0 and is filled with decoy noise so that it
does not stand out once the planes are shuffled.

Summand draw for a pixel with residual ``r`` and used set ``U``::

    k uniform over { k in [1, r] : k not in U and (k == r or r-k not in U + {k}) }

The second condition keeps the residual itself unused, so ``k = r`` is always
available and the split terminates with distinct summands.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CorruptBaseImages, RangeError
from .integral import COMPARE_LIMIT
from .rng import StreamRandom

M_DEFAULT = 256


@dataclass
class BaseImageSet:
    planes: np.ndarray                 # (M, h, w) bool
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.arange(self.planes.shape[0], dtype=np.int64)

    @property
    def M(self) -> int:
        return self.planes.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1], self.planes.shape[2]


@dataclass
class ShuffledBaseImages:
    """Planes in transmitted order. ``permutation`` stays with the client:
    transmitted plane ``j`` is original plane ``permutation[j]``, so its
    weight is ``permutation[j]``."""
    planes: np.ndarray
    permutation: Optional[np.ndarray] = None

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.permutation, dtype=np.int64)

    @property
    def M(self) -> int:
        return self.planes.shape[0]


def summand_sets(pixels: np.ndarray, rng: StreamRandom, m: int = M_DEFAULT) -> np.ndarray:
    """Boolean (len(pixels), m) matrix: row p marks the distinct summands of pixel p."""
    p = np.asarray(pixels, dtype=np.int64).ravel()
    if p.size and (p.min() < 0 or p.max() > m - 1):
        raise ValueError(f"pixel values must lie in [0, {m - 1}]")
    used = np.zeros((p.size, m), dtype=bool)
    resid = p.copy()
    active = np.flatnonzero(resid > 0)
    while active.size:
        r = resid[active]
        k = rng.integers(1, r)
        rem = r - k
        ok = ~used[active, k] & ((rem == 0) | (~used[active, rem] & (rem != k)))
        acc = active[ok]
        used[acc, k[ok]] = True
        resid[acc] -= k[ok]
        active = active[resid[active] > 0]
    return used


def factorize(window, rng: StreamRandom, m: int = M_DEFAULT) -> BaseImageSet:
    """Split a grayscale window into ``m`` random binary base images."""
    win = np.asarray(window)
    if win.ndim != 2:
        raise ValueError("window must be 2-D")
    h, w = win.shape
    used = summand_sets(win.ravel(), rng, m)
    planes = np.ascontiguousarray(used.T.reshape(m, h, w))
    planes[0] = rng.bits((h, w))
    return BaseImageSet(planes)


def reconstruct(b: BaseImageSet) -> np.ndarray:
    """Pixelwise ``sum_i w_i * B_i``; must land in [0, 255]."""
    x = np.tensordot(np.asarray(b.weights, dtype=np.int64), b.planes.astype(np.int64), axes=1)
    if x.size and (x.min() < 0 or x.max() > 255):
        raise CorruptBaseImages(f"reconstructed pixel range [{x.min()}, {x.max()}] outside [0, 255]")
    return x.astype(np.uint8)


def shuffle(b: BaseImageSet, rng: StreamRandom,
            permutation: Optional[np.ndarray] = None) -> ShuffledBaseImages:
    """Reorder planes by a uniform permutation (or a forced one, for tests)."""
    perm = rng.permutation(b.M) if permutation is None else np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(b.M)):
        raise ValueError("permutation is not a bijection on range(M)")
    return ShuffledBaseImages(b.planes[perm], np.asarray(b.weights)[perm])


def unshuffle(s: ShuffledBaseImages) -> BaseImageSet:
    """Client-side inverse of :func:`shuffle` (needs the permutation)."""
    order = np.argsort(s.weights)
    return BaseImageSet(s.planes[order], s.weights[order])


def recombine(responses, weights) -> np.ndarray:
    """``F(n) = sum_m F_m(n) * w'_m`` for a (n, M) response matrix (or one row)."""
    r = np.asarray(responses, dtype=np.int64)
    w = np.asarray(weights, dtype=np.int64)
    if r.shape[-1] != w.shape[0]:
        raise ValueError(f"response rows have {r.shape[-1]} entries, expected {w.shape[0]}")
    f = r @ w
    if np.any(np.abs(f) >= COMPARE_LIMIT):
        raise RangeError("recombined response exceeds the comparison bit budget")
    return f


# ---------------------------------------------------------------------------
# Wire form: each plane row-major, MSB-first, ceil(w*h/8) bytes.

def plane_bytes(h: int, w: int) -> int:
    return (h * w + 7) // 8


def pack_planes(planes: np.ndarray) -> bytes:
    m = planes.shape[0]
    return np.packbits(planes.reshape(m, -1), axis=1, bitorder="big").tobytes()


def unpack_planes(data: bytes, m: int, h: int, w: int) -> np.ndarray:
    nb = plane_bytes(h, w)
    if len(data) != m * nb:
        raise ValueError(f"plane payload is {len(data)} bytes, expected {m * nb}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(m, nb)
    bits = np.unpackbits(raw, axis=1, count=h * w, bitorder="big")
    return bits.reshape(m, h, w).astype(bool)


def set_plane_counts(planes: np.ndarray) -> np.ndarray:
    """Per-pixel number of set planes (the summand count ``S`` plus decoys)."""
    return planes.sum(axis=0)
