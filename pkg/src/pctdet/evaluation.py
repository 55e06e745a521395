"""Detection scoring: matching, ROC sweeps, noise sweeps, throughput."""

from __future__ import annotations

import time
from typing import NamedTuple, Sequence

import numpy as np

from .cluster import cluster_detections, square_iou
from .image import add_gaussian_noise
from .scanner import ScanParams, scan


def match_detections(detections, truths, min_overlap: float = 0.3):
    """Greedy one-to-one matching of detections against ground truth.

    Detections are visited in descending score order (stable on ties);
    each takes the unmatched truth square with the highest overlap if that
    overlap exceeds ``min_overlap``.  Returns ``(matched truth count,
    unmatched detection count)``.
    """
    order = sorted(range(len(detections)),
                   key=lambda i: -detections[i].score)
    taken = [False] * len(truths)
    matched = 0
    false_pos = 0
    for i in order:
        d = detections[i]
        best_iou = 0.0
        best_j = -1
        for j, t in enumerate(truths):
            if taken[j]:
                continue
            iou = square_iou(d.row, d.col, d.size, t.row, t.col, t.size)
            if iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0 and best_iou > min_overlap:
            taken[best_j] = True
            matched += 1
        else:
            false_pos += 1
    return matched, false_pos


class RocPoint(NamedTuple):
    threshold: float
    tpr: float
    false_positives: int


def roc_curve(detections_per_image, truths_per_image,
              min_overlap: float = 0.3) -> list[RocPoint]:
    """Sweep the score threshold over every distinct detection score.

    For each threshold, detections with score >= threshold are matched
    per image and aggregated into one point.  Points come back ordered by
    ascending threshold; both the true-positive rate and the false-positive
    count are non-increasing along the sweep.
    """
    n_truth = sum(len(t) for t in truths_per_image)
    scores = sorted({float(d.score)
                     for dets in detections_per_image for d in dets})
    points = []
    for t in scores:
        matched = 0
        false_pos = 0
        for dets, truths in zip(detections_per_image, truths_per_image):
            kept = [d for d in dets if d.score >= t]
            m, f = match_detections(kept, truths, min_overlap)
            matched += m
            false_pos += f
        tpr = matched / n_truth if n_truth else 0.0
        points.append(RocPoint(t, tpr, false_pos))
    return points


def roc_csv(points: Sequence[RocPoint]) -> str:
    lines = ["threshold,tpr,false_positives"]
    lines += [f"{p.threshold:.9g},{p.tpr:.6f},{p.false_positives}"
              for p in points]
    return "\n".join(lines) + "\n"


def detect_image(cascade, image, params: ScanParams,
                 cluster_threshold: float = 0.3, rotated=None):
    """Scan one image and cluster the raw detections."""
    return cluster_detections(scan(cascade, image, params, rotated),
                              cluster_threshold)


def noise_sweep(cascade, corpus, sigmas, params: ScanParams, seed=0,
                cluster_threshold: float = 0.3, min_overlap: float = 0.3,
                rotated=None) -> list[tuple[float, float]]:
    """Detection rate after corrupting the corpus at each noise level.

    ``corpus`` is a list of (image, truths) pairs; ``sigmas`` must be
    sorted ascending.  Every image is corrupted with its own substream, so
    the sweep is reproducible; sigma 0 leaves images untouched.
    """
    sigmas = list(sigmas)
    if sigmas != sorted(sigmas):
        raise ValueError("sigmas must be sorted ascending")
    n_truth = sum(len(t) for _, t in corpus)
    out = []
    for si, sigma in enumerate(sigmas):
        matched = 0
        for j, (image, truths) in enumerate(corpus):
            noisy = add_gaussian_noise(image, sigma, seed=(seed, si, j))
            dets = detect_image(cascade, noisy, params, cluster_threshold,
                                rotated)
            m, _ = match_detections(dets, truths, min_overlap)
            matched += m
        out.append((float(sigma), matched / n_truth if n_truth else 0.0))
    return out


def sweep_csv(rates) -> str:
    lines = ["sigma,detection_rate"]
    lines += [f"{s:g},{r:.6f}" for s, r in rates]
    return "\n".join(lines) + "\n"


def throughput(cascade, images, params: ScanParams,
               repetitions: int = 5) -> float:
    """Mean wall-clock milliseconds per image, single lane.

    One warm-up pass runs before timing; ``repetitions`` full passes are
    averaged.
    """
    if repetitions < 3:
        raise ValueError("need at least 3 repetitions")
    images = list(images)
    for img in images:
        scan(cascade, img, params)
    start = time.perf_counter()
    for _ in range(repetitions):
        for img in images:
            scan(cascade, img, params)
    elapsed = time.perf_counter() - start
    return elapsed * 1000.0 / (repetitions * len(images))
