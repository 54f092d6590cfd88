"""Grayscale image files: binary PGM (P5) natively, PNG and others via Pillow."""
from __future__ import annotations

import os
import re
from typing import Union

import numpy as np

PathLike = Union[str, os.PathLike]

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


class ImageFormatError(ValueError):
    pass


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a P5 file with maxval <= 255 (comments allowed in the header)."""
    return parse_pgm_maxval(data)[0]


def parse_pgm_maxval(data: bytes) -> tuple[np.ndarray, int]:
    if data[:2] != b"P5":
        raise ImageFormatError("not a binary PGM (P5) file")
    pos, fields = 2, []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ImageFormatError("truncated PGM header")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise ImageFormatError(f"bad PGM header field {m.group(1)!r}") from None
        pos = m.end()
    w, h, maxval = fields
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise ImageFormatError(f"unsupported PGM geometry {w}x{h} maxval {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError("missing whitespace after PGM header")
    pos += 1
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise ImageFormatError(f"PGM body has {len(body)} bytes, expected {w * h}")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
    if img.max(initial=0) > maxval:
        raise ImageFormatError("PGM sample exceeds maxval")
    return img, maxval


def encode_pgm(img, maxval: int = 255) -> bytes:
    """Canonical P5 encoding: ``P5\\n<w> <h>\\n<maxval>\\n`` then the samples."""
    a = np.asarray(img)
    if a.ndim != 2 or a.dtype != np.uint8:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    if not 0 < maxval < 256 or a.max(initial=0) > maxval:
        raise ValueError("maxval must lie in [max sample, 255]")
    h, w = a.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode() + a.tobytes()


def read_image(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P5":
        return parse_pgm(data)
    try:
        from PIL import Image
    except ImportError:                      # pragma: no cover - Pillow is a dependency
        raise ImageFormatError("only PGM P5 is readable without Pillow") from None
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except OSError as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from None


def write_image(path: PathLike, img) -> None:
    if str(path).lower().endswith((".pgm", ".pnm")):
        with open(path, "wb") as fh:
            fh.write(encode_pgm(img))
        return
    from PIL import Image
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path)
