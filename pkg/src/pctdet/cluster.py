"""Grouping of overlapping raw detections into final detections.

Raw detections form an undirected graph with an edge wherever the overlap
of two detection squares exceeds the threshold (strictly).  Connected
components are found by depth-first search; each component collapses into
one final detection whose position and size are the plain means of its
members and whose score is the sum of member scores, so mutually
supporting detections outrank isolated ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def square_iou(r1, c1, s1, r2, c2, s2) -> float:
    """Intersection over union of two axis-aligned squares given by
    center (row, col) and side length.

    Extents are computed from center offsets, not absolute corners, so
    identical squares overlap at exactly 1.0.
    """
    h1, h2 = s1 / 2.0, s2 / 2.0
    dr, dc = r2 - r1, c2 - c1
    ih = min(h1, dr + h2) - max(-h1, dr - h2)
    iw = min(h1, dc + h2) - max(-h1, dc - h2)
    if ih <= 0 or iw <= 0:
        return 0.0
    inter = ih * iw
    return inter / (s1 * s1 + s2 * s2 - inter)


def overlap(a, b) -> float:
    """Overlap ratio of two detections (squares; orientation ignored)."""
    return square_iou(a.row, a.col, a.size, b.row, b.col, b.size)


@dataclass(frozen=True)
class FinalDetection:
    """One clustered detection: component means, summed score, cardinality."""

    row: float
    col: float
    size: float
    score: float
    count: int
    orientation: int = 0


def cluster_detections(raw, threshold: float = 0.3) -> list[FinalDetection]:
    """Merge raw detections whose pairwise overlap exceeds ``threshold``.

    Components are transitive: a chain of pairwise overlaps merges even if
    its endpoints barely overlap.  An overlap exactly equal to the
    threshold does not connect.  Output is ordered by descending score,
    then (row, col).
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    raw = list(raw)
    if not raw:
        return []
    rows = np.array([d.row for d in raw], dtype=np.float64)
    cols = np.array([d.col for d in raw], dtype=np.float64)
    sizes = np.array([d.size for d in raw], dtype=np.float64)
    scores = np.array([d.score for d in raw], dtype=np.float64)
    half = sizes / 2.0
    r0, r1 = rows - half, rows + half
    c0, c1 = cols - half, cols + half
    areas = sizes * sizes

    visited = np.zeros(len(raw), dtype=bool)
    out = []
    for i in range(len(raw)):
        if visited[i]:
            continue
        visited[i] = True
        stack = [i]
        comp = []
        while stack:
            j = stack.pop()
            comp.append(j)
            ih = np.minimum(r1, r1[j]) - np.maximum(r0, r0[j])
            iw = np.minimum(c1, c1[j]) - np.maximum(c0, c0[j])
            inter = np.where((ih > 0) & (iw > 0), ih * iw, 0.0)
            iou = inter / (areas + areas[j] - inter)
            nb = (iou > threshold) & ~visited
            visited[nb] = True
            stack.extend(np.nonzero(nb)[0].tolist())
        comp.sort()
        comp_scores = scores[comp]
        top = comp[int(np.argmax(comp_scores))]
        out.append(FinalDetection(
            row=float(np.mean(rows[comp])),
            col=float(np.mean(cols[comp])),
            size=float(np.mean(sizes[comp])),
            score=float(np.sum(comp_scores)),
            count=len(comp),
            orientation=int(getattr(raw[top], "orientation", 0)),
        ))
    out.sort(key=lambda d: (-d.score, d.row, d.col))
    return out
