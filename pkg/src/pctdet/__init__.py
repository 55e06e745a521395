"""Cascaded comparison-tree object detection.

Train boosted cascades of pixel-comparison decision trees, scan images at
multiple scales and orientations with early rejection, cluster the raw
hits, and serialize models to a compact bit-exact format.
"""

from .cascade import (Cascade, ClassifyResult, Stage, StageConfig,
                      boost_fit_stage, calibrate_threshold, classify_window,
                      default_schedule, mine_negatives, train_cascade)
from .cluster import FinalDetection, cluster_detections, overlap
from .dataset import (Annotation, SynthSpec, augment, generate_synthetic,
                      load_annotations, save_annotations)
from .detector import CascadeDetector
from .errors import (AnnotationError, ImageFormatError, MiningBudgetError,
                     ModelFormatError, PctError, TrainingError,
                     WeightCollapseError)
from .evaluation import (RocPoint, detect_image, match_detections,
                         noise_sweep, roc_curve, throughput)
from .image import (NormLoc, OrientationTable, Window, add_gaussian_noise,
                    load_image, map_location, rotate_location, save_image)
from .model_io import deserialize, load_model, save_model, serialize
from .scanner import (RawDetection, ScanParams, build_rotated_cascades,
                      scan, scan_with_stats)
from .tree import (CompTest, DecisionTree, Sample, eval_bintest, eval_tree,
                   train_tree, wmse_split_score)

__version__ = "0.1.0"

__all__ = [
    "Annotation", "AnnotationError", "Cascade", "CascadeDetector",
    "ClassifyResult", "CompTest", "DecisionTree", "FinalDetection",
    "ImageFormatError", "MiningBudgetError", "ModelFormatError", "NormLoc",
    "OrientationTable", "PctError", "RawDetection", "RocPoint", "Sample",
    "ScanParams", "Stage", "StageConfig", "SynthSpec", "TrainingError",
    "WeightCollapseError", "Window", "add_gaussian_noise", "augment",
    "boost_fit_stage", "build_rotated_cascades", "calibrate_threshold",
    "classify_window", "cluster_detections", "default_schedule",
    "deserialize", "detect_image", "eval_bintest", "eval_tree",
    "generate_synthetic", "load_annotations", "load_image", "load_model",
    "map_location", "match_detections", "mine_negatives", "noise_sweep",
    "overlap", "roc_curve", "rotate_location", "save_annotations",
    "save_image", "save_model", "scan", "scan_with_stats", "serialize",
    "throughput", "train_cascade", "train_tree", "wmse_split_score",
]
