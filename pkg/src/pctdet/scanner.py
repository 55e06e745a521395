"""Multi-scale, multi-orientation sliding-window scanning.

The scan never resamples the image: window growth happens through the
fixed-point coordinate mapping, and orientations are handled by building
one pre-rotated copy of the cascade per table entry, trading a little
memory for zero per-window trigonometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cascade import Cascade, Stage, classify_flat
from .image import OrientationTable, center_bounds, check_gray
from .tree import DecisionTree


@dataclass(frozen=True)
class ScanParams:
    """Scan geometry: size sweep, stride and number of orientations."""

    min_size: int = 24
    max_size: int | None = None
    scale_factor: float = 1.2
    stride_factor: float = 0.1
    n_orientations: int = 1

    def __post_init__(self):
        if self.min_size < 2:
            raise ValueError("min_size must be >= 2")
        if self.max_size is not None and self.max_size < self.min_size:
            raise ValueError("max_size must be >= min_size")
        if self.scale_factor <= 1:
            raise ValueError("scale_factor must be > 1")
        if not 0 < self.stride_factor <= 1:
            raise ValueError("stride_factor must be in (0, 1]")
        if self.n_orientations < 1:
            raise ValueError("n_orientations must be >= 1")


class RawDetection(NamedTuple):
    """One passing window: geometry, accumulated confidence, orientation."""

    row: int
    col: int
    size: int
    score: float
    orientation: int


@dataclass
class ScanStats:
    """Early-rejection accounting for one or more scans."""

    trees_per_stage: list[int]
    n_windows: int = 0
    n_accepted: int = 0
    rejected_by_stage: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rejected_by_stage is None:
            self.rejected_by_stage = np.zeros(len(self.trees_per_stage),
                                              dtype=np.int64)

    def rejected_within(self, n_stages: int) -> float:
        """Fraction of windows rejected by one of the first n stages."""
        if self.n_windows == 0:
            return 0.0
        return float(np.sum(self.rejected_by_stage[:n_stages])) / self.n_windows

    @property
    def mean_trees_evaluated(self) -> float:
        if self.n_windows == 0:
            return 0.0
        cum = np.cumsum(self.trees_per_stage)
        total = float(np.dot(self.rejected_by_stage, cum))
        total += self.n_accepted * float(cum[-1]) if len(cum) else 0.0
        return total / self.n_windows


def scan_sizes(params: ScanParams, height: int, width: int) -> list[int]:
    """Integer window sides visited by the scan, smallest first.

    The side grows geometrically as a float and is rounded half-up per
    step; consecutive duplicates after rounding are emitted once.
    """
    limit = min(height, width)
    if params.max_size is not None:
        limit = min(limit, params.max_size)
    sizes = []
    s = float(params.min_size)
    while True:
        size = int(s + 0.5)
        if size > limit:
            break
        if not sizes or sizes[-1] != size:
            sizes.append(size)
        s *= params.scale_factor
    return sizes


def _rotate_tests(tests: np.ndarray, cos: int, sin: int) -> np.ndarray:
    """Rotate both locations of every test by a fixed-point table entry."""
    q = tests.astype(np.int64)
    out = np.empty_like(q)
    for qr, qc in ((0, 1), (2, 3)):
        vr = cos * q[:, qr] - sin * q[:, qc]
        vc = sin * q[:, qr] + cos * q[:, qc]
        out[:, qr] = np.sign(vr) * ((np.abs(vr) + 128) >> 8)
        out[:, qc] = np.sign(vc) * ((np.abs(vc) + 128) >> 8)
    return np.clip(out, -127, 127).astype(np.int8)


def build_rotated_cascades(cascade: Cascade,
                           table: OrientationTable) -> list[Cascade]:
    """One cascade copy per orientation, with every test location rotated.

    Structure, leaf values and thresholds are unchanged; entry 0 rotates
    by the exact identity, so copy 0 equals the input.
    """
    out = []
    for k in range(table.n):
        cos, sin = int(table.cos[k]), int(table.sin[k])
        stages = []
        for stage in cascade.stages:
            trees = tuple(
                DecisionTree(t.depth, _rotate_tests(t.tests, cos, sin),
                             t.leaves)
                for t in stage.trees)
            stages.append(Stage(trees, stage.threshold))
        out.append(Cascade(cascade.depth, tuple(stages)))
    return out


def scan_with_stats(cascade: Cascade, image, params: ScanParams,
                    rotated: list[Cascade] | None = None
                    ) -> tuple[list[RawDetection], ScanStats]:
    """Scan an image, also returning early-rejection statistics.

    Every fully-inside window at every visited size is evaluated once per
    orientation; passing evaluations become raw detections.  Output is
    ordered by (size, row, col, orientation) and is a pure function of
    (cascade, image, params).
    """
    img = check_gray(image)
    height, width = img.shape
    if rotated is None:
        if params.n_orientations == 1:
            rotated = [cascade]
        else:
            table = OrientationTable.build(params.n_orientations)
            rotated = build_rotated_cascades(cascade, table)
    elif len(rotated) != params.n_orientations:
        raise ValueError("rotated cascade count != n_orientations")

    flat = img.ravel()
    stats = ScanStats([len(s.trees) for s in cascade.stages])
    detections: list[RawDetection] = []
    for size in scan_sizes(params, height, width):
        step = max(1, int(params.stride_factor * size))
        rlo, rhi = center_bounds(size, height)
        clo, chi = center_bounds(size, width)
        rows = np.arange(rlo, rhi + 1, step, dtype=np.int64)
        cols = np.arange(clo, chi + 1, step, dtype=np.int64)
        if rows.size == 0 or cols.size == 0:
            continue
        rr, cc = (a.ravel() for a in np.meshgrid(rows, cols, indexing="ij"))
        base = rr * width + cc
        wid = np.full(rr.shape, width, dtype=np.int64)
        szs = np.full(rr.shape, size, dtype=np.int64)

        hit_r, hit_c, hit_s, hit_k = [], [], [], []
        for k, rot in enumerate(rotated):
            scores, rejected_at = classify_flat(rot, flat, base, wid, szs)
            stats.n_windows += len(base)
            passed = rejected_at == -1
            stats.n_accepted += int(np.sum(passed))
            hist = np.bincount(rejected_at[~passed],
                               minlength=len(cascade.stages))
            stats.rejected_by_stage += hist.astype(np.int64)
            hit_r.append(rr[passed])
            hit_c.append(cc[passed])
            hit_s.append(scores[passed])
            hit_k.append(np.full(int(np.sum(passed)), k, dtype=np.int64))
        hr = np.concatenate(hit_r)
        hc = np.concatenate(hit_c)
        hs = np.concatenate(hit_s)
        hk = np.concatenate(hit_k)
        for j in np.lexsort((hk, hc, hr)):
            detections.append(RawDetection(int(hr[j]), int(hc[j]), size,
                                           float(hs[j]), int(hk[j])))
    return detections, stats


def scan(cascade: Cascade, image, params: ScanParams,
         rotated: list[Cascade] | None = None) -> list[RawDetection]:
    """Scan an image; see :func:`scan_with_stats`."""
    return scan_with_stats(cascade, image, params, rotated)[0]
