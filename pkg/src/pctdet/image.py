"""Gray images, square windows and fixed-point window coordinates.

Images are plain 2-D ``numpy`` arrays of ``uint8`` intensities, indexed
``[row, col]``.  There is no integral image and no pyramid; every other
module works directly on this representation.

A window is a square given by an integer center ``(row, col)`` and an
integer side length ``size``.  The window spans the half-open square
``[row - size/2, row + size/2) x [col - size/2, col + size/2)``, so it sits
inside an image exactly when ``2*row >= size``, ``2*row + size <= 2*height``
and likewise for columns.  Note that an odd-sized window equal to the image
side has no valid integer center.

Locations inside a window are stored as signed 8-bit pairs ``(qr, qc)`` with
components in [-127, +127].  A stored component ``q`` maps to the pixel
offset ``trunc(q * size / 256)``, i.e. a coordinate on the window's unit
square scaled at evaluation time.  Division truncates toward zero, which
keeps the mapped offset strictly inside the half-window on both sides of
zero and makes the mapping symmetric under negation.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ImageFormatError
from .seeds import substream, NOISE

MAX_PIXELS = 1 << 31  # refuse absurd headers before allocating


class NormLoc(NamedTuple):
    """Fixed-point location on the window square, components in [-127, 127]."""

    qr: int
    qc: int


class Window(NamedTuple):
    """Square image region: integer center and side length in pixels."""

    row: int
    col: int
    size: int


def check_gray(img) -> np.ndarray:
    """Validate and return an image as a 2-D uint8 array.

    Accepts any array-like of shape (height, width) with values
    representable as uint8. Raises ``ValueError`` otherwise.
    """
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D gray image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty image")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"expected integer intensities, got {arr.dtype}")
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("intensities outside [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def trunc_div_256(p: int) -> int:
    """Divide by 256 truncating toward zero (sign-symmetric)."""
    return p // 256 if p >= 0 else -((-p) // 256)


def trunc_div_256_arr(p: np.ndarray) -> np.ndarray:
    """Vectorized :func:`trunc_div_256` for integer arrays."""
    neg = p < 0
    out = np.abs(p) >> 8
    np.negative(out, where=neg, out=out)
    return out


def map_location(window: Window, loc: NormLoc) -> tuple[int, int]:
    """Map a fixed-point location to absolute pixel coordinates.

    The offset along each axis is ``trunc(q * size / 256)``; for every
    ``size >= 1`` its magnitude stays below ``size / 2``, so the mapped
    pixel lies inside the window.
    """
    row, col, size = window
    return (row + trunc_div_256(loc.qr * size),
            col + trunc_div_256(loc.qc * size))


def window_inside(window: Window, height: int, width: int) -> bool:
    """True iff the window's half-open span lies inside the image."""
    row, col, size = window
    return (size >= 1
            and 2 * row >= size and 2 * row + size <= 2 * height
            and 2 * col >= size and 2 * col + size <= 2 * width)


def center_bounds(size: int, dim: int) -> tuple[int, int]:
    """Inclusive range of valid window centers along one axis, lo > hi if none."""
    return (size + 1) // 2, (2 * dim - size) // 2


def largest_fitting_size(size: int, height: int, width: int) -> int:
    """Largest side <= size that admits a valid integer center in the image."""
    s = min(size, height, width)
    lo, hi = center_bounds(s, min(height, width))
    if lo > hi:  # odd size equal to the image side has no integer center
        s -= 1
    return max(s, 1)


def clamp_window(window: Window, height: int, width: int) -> Window:
    """Shift a window inward until it fits; shrink only if it cannot.

    Raises ``ValueError`` for images too small to hold any window.
    """
    if height < 1 or width < 1:
        raise ValueError("image has no pixels")
    row, col, size = window
    size = largest_fitting_size(size, height, width)
    rlo, rhi = center_bounds(size, height)
    clo, chi = center_bounds(size, width)
    return Window(min(max(row, rlo), rhi), min(max(col, clo), chi), size)


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


@dataclass(frozen=True)
class OrientationTable:
    """Fixed-point cosine/sine pairs for n evenly spaced orientations.

    Entry k holds ``round(256 * cos(2*pi*k/n))`` and the matching sine;
    entry 0 is always the exact identity (256, 0).
    """

    n: int
    cos: np.ndarray = field(repr=False)
    sin: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n: int) -> "OrientationTable":
        if n < 1:
            raise ValueError("need at least one orientation")
        angles = [2.0 * math.pi * k / n for k in range(n)]
        cos = np.array([_round_half_away(256.0 * math.cos(a)) for a in angles],
                       dtype=np.int32)
        sin = np.array([_round_half_away(256.0 * math.sin(a)) for a in angles],
                       dtype=np.int32)
        cos[0], sin[0] = 256, 0
        return cls(n=n, cos=cos, sin=sin)


def rotate_location(loc: NormLoc, table: OrientationTable, k: int) -> NormLoc:
    """Rotate a fixed-point location by orientation ``k`` of the table.

    Orientation k corresponds to image content turned counter-clockwise
    (the ``np.rot90`` direction) by ``2*pi*k/n``:

        qr' = (cos*qr - sin*qc) / 256
        qc' = (sin*qr + cos*qc) / 256

    rounded half away from zero and clamped to [-127, +127].  Entry 0
    returns the location unchanged.
    """
    if not 0 <= k < table.n:
        raise ValueError(f"orientation index {k} outside [0, {table.n})")
    c = int(table.cos[k])
    s = int(table.sin[k])
    qr = _round_half_away((c * loc.qr - s * loc.qc) / 256.0)
    qc = _round_half_away((s * loc.qr + c * loc.qc) / 256.0)
    return NormLoc(min(max(qr, -127), 127), min(max(qc, -127), 127))


def add_gaussian_noise(img, sigma: float, seed) -> np.ndarray:
    """Add zero-mean Gaussian noise of the given standard deviation.

    Each output pixel is ``clamp(input + round(noise), 0, 255)``.  The result
    is a deterministic function of (image, sigma, seed); ``sigma == 0``
    returns an identical copy.
    """
    img = check_gray(img)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.copy()
    rng = substream(seed, NOISE)
    noise = np.rint(rng.normal(0.0, sigma, size=img.shape))
    out = img.astype(np.int32) + noise.astype(np.int32)
    return np.clip(out, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# File formats: binary PGM (P5, maxval 255) and a raw format with an 8-byte
# little-endian header (u32 width, u32 height) followed by row-major bytes.

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pgm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    m = _PGM_TOKEN.match(buf, pos)
    if not m:
        raise ImageFormatError("unexpected end of PGM header")
    return m.group(1), m.end()


def _decode_pgm(buf: bytes) -> np.ndarray:
    tok, pos = _read_pgm_token(buf, 0)
    if tok != b"P5":
        raise ImageFormatError(f"not a binary PGM file (magic {tok!r})")
    fields = []
    for _ in range(3):
        tok, pos = _read_pgm_token(buf, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"malformed PGM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval} (need 255)")
    _check_dims(width, height)
    pos += 1  # single whitespace after maxval
    data = buf[pos:pos + width * height]
    if len(data) < width * height:
        raise ImageFormatError("truncated PGM pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def _decode_raw(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise ImageFormatError("raw image shorter than its 8-byte header")
    width, height = struct.unpack("<II", buf[:8])
    _check_dims(width, height)
    data = buf[8:8 + width * height]
    if len(data) < width * height:
        raise ImageFormatError("truncated raw pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def _check_dims(width: int, height: int) -> None:
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid dimensions {width}x{height}")
    if width * height > MAX_PIXELS:
        raise ImageFormatError(f"dimensions {width}x{height} overflow")


def load_image(path) -> np.ndarray:
    """Load a gray image from a PGM (P5) or raw file, sniffing the format."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] == b"P5":
        return _decode_pgm(buf)
    return _decode_raw(buf)


def save_image(img, path) -> None:
    """Write a gray image; ``.pgm`` paths get PGM (P5), anything else raw."""
    img = check_gray(img)
    height, width = img.shape
    with open(path, "wb") as f:
        if str(path).lower().endswith(".pgm"):
            f.write(b"P5\n%d %d\n255\n" % (width, height))
        else:
            f.write(struct.pack("<II", width, height))
        f.write(img.tobytes())
