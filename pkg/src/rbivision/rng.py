"""Deterministic cryptographic random stream (ChaCha20 keystream).

A 32-byte seed fixes the whole stream, so a session can be replayed from
its seed; without a seed the key comes from ``os.urandom``.
"""
from __future__ import annotations

import hashlib
import os
from typing import Optional, Union

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

SeedLike = Union[None, int, bytes, str]


def normalize_seed(seed: SeedLike) -> bytes:
    if seed is None:
        return os.urandom(32)
    if isinstance(seed, bytes):
        if len(seed) == 32:
            return seed
        return hashlib.sha256(seed).digest()
    if isinstance(seed, int):
        return hashlib.sha256(b"rbivision-seed:" + str(seed).encode()).digest()
    return hashlib.sha256(seed.encode("utf-8")).digest()


class StreamRandom:
    """Random source backed by a ChaCha20 keystream."""

    def __init__(self, seed: SeedLike = None):
        self.seed = normalize_seed(seed)
        cipher = Cipher(algorithms.ChaCha20(self.seed, b"\x00" * 16), mode=None)
        self._enc = cipher.encryptor()

    def spawn(self, label: str) -> "StreamRandom":
        """Independent child stream derived from this seed and ``label``."""
        return StreamRandom(hashlib.sha256(self.seed + b"/" + label.encode()).digest())

    def random_bytes(self, n: int) -> bytes:
        return self._enc.update(bytes(n))

    def _u32(self, n: int) -> np.ndarray:
        return np.frombuffer(self.random_bytes(4 * n), dtype="<u4").astype(np.uint64)

    def randbits(self, k: int) -> int:
        if k <= 0:
            return 0
        v = int.from_bytes(self.random_bytes((k + 7) // 8), "big")
        return v >> ((8 - k % 8) % 8)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow needs n > 0")
        k = n.bit_length()
        while True:
            v = self.randbits(k)
            if v < n:
                return v

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        return lo + self.randbelow(hi - lo + 1)

    def uniform_below(self, bounds) -> np.ndarray:
        """Exactly uniform draws in [0, b) for each bound 1 <= b < 2**63."""
        b = np.asarray(bounds, dtype=np.int64)
        if b.size and b.min() < 1:
            raise ValueError("bounds must be >= 1")
        if b.size and b.max() >= 1 << 32:
            return self._uniform_below64(b)
        b = b.astype(np.uint64)
        out = np.empty(b.shape, dtype=np.uint64)
        flat_b = b.ravel()
        flat_out = out.reshape(-1)
        todo = np.arange(b.size)
        while todo.size:
            # Lemire: reject the low product words that would bias the result
            bb = flat_b[todo]
            m = self._u32(todo.size) * bb
            low = m & 0xFFFFFFFF
            reject = low < ((1 << 32) - bb) % bb
            keep = ~reject
            flat_out[todo[keep]] = m[keep] >> 32
            todo = todo[reject]
        return out.astype(np.int64)

    def _uniform_below64(self, b: np.ndarray) -> np.ndarray:
        flat_b = b.ravel().astype(np.uint64)
        out = np.empty(flat_b.shape, dtype=np.uint64)
        todo = np.arange(flat_b.size)
        while todo.size:
            bb = flat_b[todo]
            u = np.frombuffer(self.random_bytes(8 * todo.size), dtype="<u8")
            floor = (np.uint64(0) - bb) % bb          # 2**64 mod b
            keep = u >= floor
            out[todo[keep]] = u[keep] % bb[keep]
            todo = todo[~keep]
        return out.astype(np.int64).reshape(b.shape)

    def integers(self, low, high) -> np.ndarray:
        """Uniform integers in [low, high] (inclusive), broadcasting."""
        low = np.asarray(low, dtype=np.int64)
        high = np.asarray(high, dtype=np.int64)
        low, high = np.broadcast_arrays(low, high)
        return low + self.uniform_below(high - low + 1)

    def bits(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        raw = np.frombuffer(self.random_bytes((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw)[:n].reshape(shape).astype(bool)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of range(n): argsort of distinct 64-bit keys."""
        while True:
            keys = np.frombuffer(self.random_bytes(8 * n), dtype="<u8")
            if np.unique(keys).size == n:
                return np.argsort(keys, kind="stable").astype(np.int64)

    def shuffle_list(self, items: list) -> list:
        return [items[i] for i in self.permutation(len(items))]


def as_rng(rng: Optional[Union[StreamRandom, SeedLike]]) -> StreamRandom:
    return rng if isinstance(rng, StreamRandom) else StreamRandom(rng)
