"""Scikit-learn style estimator wrapping training and detection."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .cascade import StageConfig, default_schedule, train_cascade
from .dataset import Annotation, augment
from .errors import TrainingError
from .image import OrientationTable, check_gray
from .scanner import ScanParams, build_rotated_cascades
from .seeds import AUGMENT, substream
from .evaluation import detect_image


class CascadeDetector(BaseEstimator):
    """Sliding-window detector built on a boosted comparison-tree cascade.

    Follows the scikit-learn estimator protocol: construction only stores
    parameters, ``fit`` learns the cascade, ``predict`` returns per-image
    detection lists, and ``get_params``/``set_params``/``clone`` work as
    usual.

    Parameters
    ----------
    depth : tree depth shared by every stage.
    n_candidates : candidate tests drawn per tree node.
    schedule : list of StageConfig, or None for the stock 20-stage one.
    n_augment, pos_jitter, scale_jitter : positive-sample augmentation.
    mining_size_range : (lo, hi) negative window sizes; None derives the
        range from the positive windows.
    draw_budget : mining draw cap per stage; None picks a generous default.
    min_size, max_size, scale_factor, stride_factor, n_orientations :
        scan geometry used by ``predict``.
    cluster_threshold : overlap above which raw detections merge.
    random_state : seed for every randomized step.
    """

    def __init__(self, depth=6, n_candidates=256, schedule=None,
                 n_augment=15, pos_jitter=0.05, scale_jitter=0.10,
                 mining_size_range=None, draw_budget=None,
                 min_size=24, max_size=None, scale_factor=1.2,
                 stride_factor=0.1, n_orientations=1,
                 cluster_threshold=0.3, random_state=0):
        self.depth = depth
        self.n_candidates = n_candidates
        self.schedule = schedule
        self.n_augment = n_augment
        self.pos_jitter = pos_jitter
        self.scale_jitter = scale_jitter
        self.mining_size_range = mining_size_range
        self.draw_budget = draw_budget
        self.min_size = min_size
        self.max_size = max_size
        self.scale_factor = scale_factor
        self.stride_factor = stride_factor
        self.n_orientations = n_orientations
        self.cluster_threshold = cluster_threshold
        self.random_state = random_state

    def _scan_params(self) -> ScanParams:
        return ScanParams(min_size=self.min_size, max_size=self.max_size,
                          scale_factor=self.scale_factor,
                          stride_factor=self.stride_factor,
                          n_orientations=self.n_orientations)

    def fit(self, X, y, progress=None):
        """Learn a cascade from images and their object boxes.

        ``X`` is a sequence of gray images; ``y[i]`` lists image i's
        objects as ``(row, col, size)`` tuples or :class:`Annotation`
        objects.  Images whose list is empty or None serve as the
        background pool for hard-negative mining.
        """
        if len(X) != len(y):
            raise ValueError(f"got {len(X)} images but {len(y)} label lists")
        images = [check_gray(img) for img in X]
        positives = []
        backgrounds = []
        idx = 0
        for img, boxes in zip(images, y):
            if not boxes:
                backgrounds.append(img)
                continue
            for box in boxes:
                if isinstance(box, Annotation):
                    row, col, size = box.row, box.col, box.size
                else:
                    row, col, size = box
                anno = Annotation("", int(row), int(col), int(size))
                rng = substream(self.random_state, AUGMENT, idx)
                idx += 1
                for win in augment(anno, img.shape, self.n_augment,
                                   self.pos_jitter, self.scale_jitter, rng):
                    positives.append((img, win))
        if not positives:
            raise TrainingError("no annotated objects in the training set")
        if not backgrounds:
            raise TrainingError("no background images to mine negatives from")

        schedule = self.schedule
        if schedule is None:
            schedule = default_schedule()
        schedule = [cfg if isinstance(cfg, StageConfig) else StageConfig(*cfg)
                    for cfg in schedule]
        result = train_cascade(
            positives, backgrounds, schedule, depth=self.depth,
            n_candidates=self.n_candidates, seed=self.random_state,
            size_range=self.mining_size_range, draw_budget=self.draw_budget,
            progress=progress)
        self.cascade_ = result.cascade
        self.reports_ = result.reports
        self.n_positives_ = len(positives)
        return self

    def _rotated(self):
        if self.n_orientations == 1:
            return [self.cascade_]
        table = OrientationTable.build(self.n_orientations)
        return build_rotated_cascades(self.cascade_, table)

    def predict(self, X):
        """Detections for each image, as lists of FinalDetection."""
        if not hasattr(self, "cascade_"):
            raise TrainingError("this detector has not been fitted")
        params = self._scan_params()
        rotated = self._rotated()
        return [detect_image(self.cascade_, check_gray(img), params,
                             self.cluster_threshold, rotated)
                for img in X]

    def detect(self, image):
        """Detections for a single image."""
        return self.predict([image])[0]
