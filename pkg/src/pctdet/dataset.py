"""Annotations, positive-sample augmentation and synthetic corpora.

The annotation file format is plain text, one object per line:

    image_path center_row center_col size

with ``#`` comments and blank lines ignored.  Paths must not contain
whitespace; they are resolved relative to the annotation file.

The synthetic generator replaces real datasets for desk-scale training and
verification.  Backgrounds are multi-octave value noise; objects are flat
discs of controlled contrast against their local surroundings with a soft
one-pixel edge.  Discs are rotation-symmetric on purpose: comparing
upright against rotated scanning then measures the scanning machinery
rather than object asymmetry.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AnnotationError
from .image import Window, check_gray, clamp_window, load_image
from .seeds import SYNTH, substream


@dataclass(frozen=True)
class Annotation:
    """Ground-truth object: image path, center (row, col) and size."""

    path: str
    row: int
    col: int
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("annotation size must be >= 1")

    @property
    def window(self) -> Window:
        return Window(self.row, self.col, self.size)


def parse_annotations(text: str) -> list[Annotation]:
    out = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise AnnotationError(
                f"expected 'image_path row col size', got {raw.strip()!r}",
                line=ln)
        try:
            out.append(Annotation(parts[0], int(parts[1]), int(parts[2]),
                                  int(parts[3])))
        except ValueError as e:
            raise AnnotationError(str(e), line=ln) from e
    return out


def load_annotations(path) -> list[Annotation]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_annotations(f.read())


def format_annotations(annotations) -> str:
    lines = [f"{a.path} {a.row} {a.col} {a.size}" for a in annotations]
    return "\n".join(lines) + ("\n" if lines else "")


def save_annotations(annotations, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_annotations(annotations))


def augment(annotation: Annotation, image_shape, n: int = 15,
            pos_jitter: float = 0.05, scale_jitter: float = 0.10,
            rng=None) -> list[Window]:
    """Jittered copies of an annotated window, clamped inside the image.

    Center offsets are uniform in +-pos_jitter*size per axis and the size
    is scaled by a factor uniform in [1 - scale_jitter, 1 + scale_jitter],
    both rounded to whole pixels.  Windows are shifted inward to fit and
    shrunk only when the image itself is smaller than the window.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    height, width = image_shape[0], image_shape[1]
    size = annotation.size
    dr = rng.uniform(-pos_jitter * size, pos_jitter * size, n)
    dc = rng.uniform(-pos_jitter * size, pos_jitter * size, n)
    f = rng.uniform(1.0 - scale_jitter, 1.0 + scale_jitter, n)
    out = []
    for i in range(n):
        win = Window(annotation.row + int(np.rint(dr[i])),
                     annotation.col + int(np.rint(dc[i])),
                     max(1, int(np.rint(f[i] * size))))
        out.append(clamp_window(win, height, width))
    return out


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corpus generator.

    Objects are filled discs; images are additionally strewn with
    non-object clutter (elongated ellipses, discs far below the contrast
    floor, discs far below the size floor) so that background windows are
    not trivially separable from objects.
    """

    width: int = 128
    height: int = 128
    objects_per_image: int = 1
    size_range: tuple[int, int] = (28, 72)
    contrast_range: tuple[float, float] = (40.0, 110.0)
    clutter_range: tuple[int, int] = (6, 12)
    texture_seed: int = 0
    rotation_safe: bool = False  # keep discs inside the inscribed circle

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("images must be at least 8x8")
        if self.objects_per_image not in (0, 1):
            raise ValueError("objects_per_image must be 0 or 1")
        lo, hi = self.size_range
        if not 4 <= lo <= hi:
            raise ValueError("bad object size range")
        if hi + 8 > min(self.width, self.height):
            raise ValueError("objects do not fit in the image")
        clo, chi = self.contrast_range
        if not 1 <= clo <= chi <= 124:
            raise ValueError("contrast range must satisfy 1 <= lo <= hi <= 124")
        if not 0 <= self.clutter_range[0] <= self.clutter_range[1]:
            raise ValueError("bad clutter range")


class SynthImage(NamedTuple):
    name: str
    pixels: np.ndarray
    annotation: Annotation | None


def _value_noise(rng, height, width, cell, amplitude) -> np.ndarray:
    """One octave: a random grid bilinearly interpolated to full size."""
    gh = height // cell + 2
    gw = width // cell + 2
    grid = rng.uniform(-amplitude, amplitude, size=(gh, gw))
    r = np.arange(height) / cell
    c = np.arange(width) / cell
    i0 = r.astype(np.int64)
    j0 = c.astype(np.int64)
    fr = (r - i0)[:, None]
    fc = (c - j0)[None, :]
    g00 = grid[i0][:, j0]
    g01 = grid[i0][:, j0 + 1]
    g10 = grid[i0 + 1][:, j0]
    g11 = grid[i0 + 1][:, j0 + 1]
    top = g00 * (1 - fc) + g01 * fc
    bot = g10 * (1 - fc) + g11 * fc
    return top * (1 - fr) + bot * fr


def _background(rng, height, width) -> np.ndarray:
    level = rng.uniform(80.0, 176.0)
    img = np.full((height, width), level, dtype=np.float64)
    cell = max(4, min(height, width) // 3)
    amp = 45.0
    for _ in range(3):
        img += _value_noise(rng, height, width, cell, amp)
        cell = max(2, cell // 2)
        amp /= 2.0
    return img


def _pick_object_center(rng, spec, radius):
    height, width = spec.height, spec.width
    margin = int(math.ceil(radius)) + 2
    if spec.rotation_safe:
        lim = min(height, width) / 2.0 - radius - 2.0
        dist = lim * math.sqrt(rng.uniform())
        ang = rng.uniform(0.0, 2.0 * math.pi)
        return (int(np.rint(height / 2.0 + dist * math.cos(ang))),
                int(np.rint(width / 2.0 + dist * math.sin(ang))))
    return (int(rng.integers(margin, height - margin + 1)),
            int(rng.integers(margin, width - margin + 1)))


def _paint_ellipse(img, r0, c0, ra, rb, angle, value) -> None:
    """Flat-fill an ellipse with a soft one-pixel edge, in place."""
    height, width = img.shape
    reach = max(ra, rb) + 1.5
    rlo = max(0, int(r0 - reach))
    rhi = min(height, int(r0 + reach) + 2)
    clo = max(0, int(c0 - reach))
    chi = min(width, int(c0 + reach) + 2)
    if rlo >= rhi or clo >= chi:
        return
    rr = np.arange(rlo, rhi, dtype=np.float64)[:, None] - r0
    cc = np.arange(clo, chi, dtype=np.float64)[None, :] - c0
    ca, sa = math.cos(angle), math.sin(angle)
    u = (rr * ca + cc * sa) / ra
    v = (-rr * sa + cc * ca) / rb
    d = np.sqrt(u * u + v * v)
    alpha = np.clip((1.0 - d) * min(ra, rb) + 0.5, 0.0, 1.0)
    region = img[rlo:rhi, clo:chi]
    region *= 1.0 - alpha
    region += alpha * value


def _paint_clutter(rng, img, spec, keepout) -> None:
    """Strew non-object shapes over the image.

    ``keepout`` is (row, col, radius) of a zone to leave untouched, or
    None.  Each distractor is flat-filled like an object, but is either
    clearly non-circular, far below the contrast floor, or far below the
    size floor, so none qualifies as an object.
    """
    height, width = img.shape
    lo, hi = spec.size_range
    n = int(rng.integers(spec.clutter_range[0], spec.clutter_range[1] + 1))
    for _ in range(n):
        kind = int(rng.integers(0, 3))
        if kind == 0:  # elongated ellipse, object-like contrast
            rb = rng.uniform(0.35 * lo, 0.55 * hi)
            ra = rb * rng.uniform(1.4, 2.8)
            contrast = rng.uniform(*spec.contrast_range)
        elif kind == 1:  # disc well below the contrast floor
            ra = rb = rng.uniform(0.5 * lo, 0.5 * hi)
            contrast = rng.uniform(0.3, 0.6) * spec.contrast_range[0]
        else:  # disc well below the size floor
            ra = rb = rng.uniform(0.2, 0.35) * lo
            contrast = rng.uniform(*spec.contrast_range)
        angle = rng.uniform(0.0, math.pi)
        reach = max(ra, rb)
        placed = None
        for _ in range(40):
            r0 = rng.uniform(2.0, height - 2.0)
            c0 = rng.uniform(2.0, width - 2.0)
            if keepout is not None:
                kr, kc, krad = keepout
                if math.hypot(r0 - kr, c0 - kc) < krad + reach + 3.0:
                    continue
            placed = (r0, c0)
            break
        if placed is None:
            continue
        r0, c0 = placed
        rlo = max(0, int(r0 - reach - 2))
        rhi = min(height, int(r0 + reach) + 3)
        clo = max(0, int(c0 - reach - 2))
        chi = min(width, int(c0 + reach) + 3)
        local = float(np.mean(img[rlo:rhi, clo:chi]))
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        value = min(252.0, max(3.0, local + sign * contrast))
        _paint_ellipse(img, r0, c0, ra, rb, angle, value)


def _draw_disc(rng, img, spec, r0, c0, size) -> Annotation:
    """Paint the object disc with exact contrast against its annulus."""
    height, width = img.shape
    radius = size / 2.0
    rr = np.arange(height)[:, None] - r0
    cc = np.arange(width)[None, :] - c0
    d = np.sqrt(rr * rr + cc * cc)
    ring = (d >= radius + 2) & (d <= radius + 6)
    local = float(np.mean(img[ring]))
    # +1 headroom keeps the achieved contrast at or above the floor even
    # after the faint sensor noise added at the end.
    delta = rng.uniform(min(spec.contrast_range[0] + 1.0,
                            spec.contrast_range[1]), spec.contrast_range[1])
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    if (sign > 0 and local + delta > 252) or (sign < 0 and local - delta < 3):
        sign = -sign
    value = math.ceil(local + delta) if sign > 0 else math.floor(local - delta)
    alpha = np.clip(radius + 0.5 - d, 0.0, 1.0)
    img *= 1.0 - alpha
    img += alpha * value
    return Annotation("", r0, c0, size)


def generate_synthetic(spec: SynthSpec, count: int, seed=0) -> list[SynthImage]:
    """Deterministic corpus of ``count`` images (and annotations if the
    spec places an object per image)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    out = []
    for i in range(count):
        rng = substream(seed, SYNTH, spec.texture_seed, i)
        img = _background(rng, spec.height, spec.width)
        keepout = None
        place = None
        if spec.objects_per_image == 1:
            size = int(rng.integers(spec.size_range[0],
                                    spec.size_range[1] + 1))
            r0, c0 = _pick_object_center(rng, spec, size / 2.0)
            place = (r0, c0, size)
            keepout = (r0, c0, size / 2.0 + 7.0)  # clear of the contrast ring
        _paint_clutter(rng, img, spec, keepout)
        # Quantize before painting the object so its contrast against the
        # measured ring mean survives the final rounding exactly.
        img = np.clip(np.rint(img), 0, 255)
        annotation = None
        if place is not None:
            annotation = _draw_disc(rng, img, spec, *place)
        # Faint sensor noise: flat fills would otherwise make exact pixel
        # equality a giveaway no camera provides.
        img += rng.normal(0.0, 2.0, size=img.shape)
        name = f"synth_{i:05d}.pgm"
        pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        if annotation is not None:
            annotation = Annotation(name, annotation.row, annotation.col,
                                    annotation.size)
        out.append(SynthImage(name, pixels, annotation))
    return out


def write_corpus(images, out_dir, annotations_name="annotations.txt") -> str:
    """Write PGM files plus one annotation file; returns the file's path."""
    from .image import save_image

    os.makedirs(out_dir, exist_ok=True)
    annos = []
    for item in images:
        save_image(item.pixels, os.path.join(out_dir, item.name))
        if item.annotation is not None:
            annos.append(item.annotation)
    path = os.path.join(out_dir, annotations_name)
    save_annotations(annos, path)
    return path


def load_corpus(annotations_path, images_dir=None):
    """Load an annotation file and its images.

    Returns ``(pairs, images_by_path)`` where pairs are (image, Annotation)
    and images are cached by path.  Relative paths resolve against
    ``images_dir`` (default: the annotation file's directory).
    """
    annos = load_annotations(annotations_path)
    base = images_dir if images_dir is not None \
        else os.path.dirname(os.path.abspath(annotations_path))
    cache: dict[str, np.ndarray] = {}
    pairs = []
    for a in annos:
        full = a.path if os.path.isabs(a.path) else os.path.join(base, a.path)
        if full not in cache:
            cache[full] = check_gray(load_image(full))
        pairs.append((cache[full], a))
    return pairs, cache
