"""Boosted rejection cascades over comparison-tree ensembles.

A cascade is an ordered list of stages, each an ensemble of trees plus a
rejection threshold.  The score of a window accumulates across stages: a
stage adds its trees' outputs to the running total and rejects the window
when the total drops below the stage threshold.  Early stages are small,
so most windows are discarded cheaply; the final total of a surviving
window is its detection confidence.

Per-stage ensembles are fitted with a gentle boosting loop: sample weights
start at 1/P for positives and 1/N for negatives, each tree is fitted by
weighted least squares to the labels, and weights are multiplied by
exp(-label * tree output) and renormalized after every tree.

Stage thresholds are set from the positives' accumulated scores at a
configured true-positive fraction, then widened downward to the nearest
float32 so that a serialized model preserves the calibration guarantee
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AnnotationError, TrainingError, WeightCollapseError, \
    MiningBudgetError
from .image import Window, check_gray
from .seeds import MINING, normalize_seed, substream
from .tree import DecisionTree, PackedSamples, eval_tree, eval_tree_flat, \
    eval_tree_packed, train_tree

DEFAULT_DEPTH = 6
DEFAULT_CANDIDATES = 256

# Stock 20-stage schedule: tree counts 1,2,3,4,5,10 then 20 per stage, with
# per-stage true-positive targets rising from 0.975 to 0.999.
DEFAULT_TREE_COUNTS = (1, 2, 3, 4, 5, 10) + (20,) * 14
DEFAULT_TPR_TARGETS = (0.975, 0.98, 0.985, 0.99, 0.995, 0.997) + (0.999,) * 14

_MINE_BATCH = 16384


@dataclass(frozen=True)
class Stage:
    """One cascade stage: its trees and the accumulated-score threshold."""

    trees: tuple[DecisionTree, ...]
    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if not self.trees:
            raise ValueError("a stage needs at least one tree")
        if not math.isfinite(self.threshold):
            raise ValueError("stage threshold must be finite")


@dataclass(frozen=True)
class Cascade:
    """Ordered rejection stages sharing one tree depth."""

    depth: int
    stages: tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        for stage in self.stages:
            for tree in stage.trees:
                if tree.depth != self.depth:
                    raise ValueError("all trees must share the cascade depth")

    @property
    def n_trees(self) -> int:
        return sum(len(s.trees) for s in self.stages)


@dataclass(frozen=True)
class StageConfig:
    """Training knobs for one stage.

    ``negatives_to_mine=None`` mines as many negatives as there are
    surviving positives.
    """

    tree_count: int
    tpr_target: float
    negatives_to_mine: int | None = None

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if not 0 < self.tpr_target <= 1:
            raise ValueError("tpr_target must be in (0, 1]")


def default_schedule() -> list[StageConfig]:
    return [StageConfig(k, t)
            for k, t in zip(DEFAULT_TREE_COUNTS, DEFAULT_TPR_TARGETS)]


def parse_schedule(text: str) -> list[StageConfig]:
    """Parse a schedule file: one ``tree_count tpr_target negatives`` per line."""
    schedule = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise AnnotationError(
                f"expected 'tree_count tpr_target negatives_to_mine', "
                f"got {raw.strip()!r}", line=ln)
        try:
            cfg = StageConfig(int(parts[0]), float(parts[1]), int(parts[2]))
        except ValueError as e:
            raise AnnotationError(str(e), line=ln) from e
        schedule.append(cfg)
    return schedule


def format_schedule(schedule: Sequence[StageConfig],
                    default_negatives: int = 0) -> str:
    lines = ["# tree_count tpr_target negatives_to_mine"]
    for cfg in schedule:
        n = cfg.negatives_to_mine if cfg.negatives_to_mine is not None \
            else default_negatives
        lines.append(f"{cfg.tree_count} {cfg.tpr_target:g} {n}")
    return "\n".join(lines) + "\n"


class ClassifyResult(NamedTuple):
    score: float
    rejected_at: int | None
    trees_evaluated: int


def classify_window(cascade: Cascade, image, window: Window) -> ClassifyResult:
    """Run the cascade on one window with early rejection.

    Each stage adds its tree outputs to the accumulator and rejects as
    soon as the total falls below the stage threshold; the returned score
    of an accepted window equals the full sum over every tree.
    """
    total = 0.0
    n_eval = 0
    for si, stage in enumerate(cascade.stages):
        for tree in stage.trees:
            total += eval_tree(tree, image, window)
            n_eval += 1
        if total < stage.threshold:
            return ClassifyResult(total, si, n_eval)
    return ClassifyResult(total, None, n_eval)


def classify_flat(cascade: Cascade, flat, base, width, size):
    """Vectorized cascade evaluation over many windows.

    Arguments mirror :func:`pctdet.tree.eval_tree_flat`; ``base``, ``width``
    and ``size`` must be equal-length arrays.  Returns ``(scores,
    rejected_at)`` where ``rejected_at[i]`` is the stage that rejected
    window i, or -1 if it passed the whole cascade.  Tree outputs are added
    in stage order then tree order, matching :func:`classify_window` bit
    for bit.
    """
    n = len(base)
    scores = np.zeros(n, dtype=np.float64)
    rejected_at = np.full(n, -1, dtype=np.int32)
    alive = np.arange(n)
    for si, stage in enumerate(cascade.stages):
        if alive.size == 0:
            break
        sub = scores[alive]
        b, w, s = base[alive], width[alive], size[alive]
        for tree in stage.trees:
            sub += eval_tree_flat(tree, flat, b, w, s)
        scores[alive] = sub
        fail = sub < stage.threshold
        rejected_at[alive[fail]] = si
        alive = alive[~fail]
    return scores, rejected_at


def accumulate_scores(cascade: Cascade, packed: PackedSamples) -> np.ndarray:
    """Full accumulated score of every packed sample, without early exit."""
    scores = np.zeros(packed.n, dtype=np.float64)
    for stage in cascade.stages:
        for tree in stage.trees:
            scores += eval_tree_packed(tree, packed)
    return scores


def calibrate_threshold(scores, tpr_target: float) -> float:
    """Largest threshold keeping at least the target fraction of scores.

    Returns the k-th largest score with ``k = ceil(tpr_target * len)``,
    computed exactly, so the kept fraction ``k / len`` is always >= the
    target.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot calibrate on an empty score list")
    if not 0 < tpr_target <= 1:
        raise ValueError("tpr_target must be in (0, 1]")
    k = math.ceil(Fraction(tpr_target) * scores.size)
    return float(np.sort(scores)[scores.size - k])


def narrow_threshold(theta: float) -> float:
    """Round a threshold down to the nearest float32.

    Stage thresholds are stored as float32 in the model format; rounding
    toward -inf means narrowing can only let more windows through, so a
    calibrated true-positive guarantee survives serialization exactly.
    """
    t32 = np.float32(theta)
    if float(t32) > theta:
        t32 = np.nextafter(t32, np.float32(-np.inf))
    return float(t32)


class StageFit(NamedTuple):
    trees: tuple[DecisionTree, ...]
    stage_scores: np.ndarray        # per sample, this stage's trees only
    accumulated_scores: np.ndarray  # prior + stage scores
    weights: np.ndarray             # boosting weights after the last tree


def boost_fit_stage(positives, negatives, n_trees: int, depth: int,
                    n_candidates: int = DEFAULT_CANDIDATES, seed=0,
                    prior_scores=None) -> StageFit:
    """Fit one stage ensemble by gentle boosting.

    ``positives`` and ``negatives`` are (image, window) pairs.  Weights are
    initialized to 1/P and 1/N; after each tree they are scaled by
    exp(-label * output) and renormalized to sum 1.  ``prior_scores``
    (accumulated score per sample from earlier stages, zeros if omitted)
    passes through into the returned accumulated scores; it does not alter
    the weight schedule.
    """
    n_pos, n_neg = len(positives), len(negatives)
    if n_pos == 0 or n_neg == 0:
        raise TrainingError(
            f"need positives and negatives, got {n_pos}/{n_neg}")
    packed = PackedSamples.from_windows(
        list(positives) + list(negatives),
        labels=[1.0] * n_pos + [-1.0] * n_neg)
    labels = packed.labels
    weights = np.where(labels > 0, 1.0 / n_pos, 1.0 / n_neg)
    stage_scores = np.zeros(packed.n, dtype=np.float64)
    key = normalize_seed(seed)
    trees = []
    for k in range(n_trees):
        tree = train_tree(packed, depth, n_candidates, seed=key + (k,),
                          weights=weights)
        trees.append(tree)
        out = eval_tree_packed(tree, packed)
        stage_scores += out
        weights = weights * np.exp(-labels * out)
        total = float(np.sum(weights))
        if total < 1e-300:
            raise WeightCollapseError(
                f"boosting weights underflowed after tree {k + 1}")
        weights /= total
    if prior_scores is None:
        accumulated = stage_scores.copy()
    else:
        accumulated = np.asarray(prior_scores, np.float64) + stage_scores
    return StageFit(tuple(trees), stage_scores, accumulated, weights)


class MiningResult(NamedTuple):
    samples: list            # (image, Window) pairs that passed the cascade
    scores: np.ndarray       # accumulated score of each kept window
    acceptance_ratio: float  # kept / inspected draws; the stage FPR estimate
    exhausted: bool          # budget ran out before reaching the count
    n_drawn: int


class _ImageBank:
    """Backgrounds concatenated into one flat buffer for batch evaluation."""

    def __init__(self, images):
        self.images = [check_gray(im) for im in images]
        self.heights = np.array([im.shape[0] for im in self.images], np.int64)
        self.widths = np.array([im.shape[1] for im in self.images], np.int64)
        sizes = np.array([im.size for im in self.images], np.int64)
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]) \
            if len(self.images) else np.empty(0, np.int64)
        self.flat = np.concatenate([im.ravel() for im in self.images]) \
            if len(self.images) else np.empty(0, np.uint8)


def mine_negatives(cascade: Cascade, backgrounds, count: int, size_range,
                   seed=0, draw_budget: int | None = None) -> MiningResult:
    """Collect background windows that the cascade does not reject.

    Windows are drawn with the center uniform over valid positions and the
    side log-uniform over ``size_range``, from backgrounds chosen uniformly
    per draw.  Draws stop at ``count`` kept windows or when the budget runs
    out (then ``exhausted`` is set and the result is partial).  The
    acceptance ratio kept/inspected estimates the cascade's false-positive
    rate on this background set.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = int(size_range[0]), int(size_range[1])
    if not 1 <= lo <= hi:
        raise ValueError(f"bad size range [{lo}, {hi}]")
    bank = _ImageBank(backgrounds)
    if not bank.images:
        raise ValueError("no background images")
    if draw_budget is None:
        draw_budget = max(100_000, 1000 * count)
    rng = substream(seed, MINING)

    kept: list = []
    kept_scores: list = []
    inspected = 0
    while len(kept) < count and inspected < draw_budget:
        batch = min(_MINE_BATCH, draw_budget - inspected)
        img_idx = rng.integers(0, len(bank.images), size=batch)
        sizes = np.rint(np.exp(rng.uniform(math.log(lo), math.log(hi),
                                           size=batch))).astype(np.int64)
        sizes = np.clip(sizes, lo, hi)
        h = bank.heights[img_idx]
        w = bank.widths[img_idx]
        m = np.minimum(h, w)
        sizes = np.minimum(sizes, m)
        sizes -= ((sizes + 1) // 2 > (2 * m - sizes) // 2)  # odd == image side
        rows = rng.integers((sizes + 1) // 2, (2 * h - sizes) // 2 + 1)
        cols = rng.integers((sizes + 1) // 2, (2 * w - sizes) // 2 + 1)

        base = bank.starts[img_idx] + rows * w + cols
        scores, rejected_at = classify_flat(cascade, bank.flat, base,
                                            w, sizes)
        accept = rejected_at == -1
        cum = np.cumsum(accept)
        need = count - len(kept)
        if cum.size and cum[-1] >= need:
            last = int(np.searchsorted(cum, need))  # draw index of the hit
            accept[last + 1:] = False
            inspected += last + 1
        else:
            inspected += batch
        for j in np.nonzero(accept)[0]:
            kept.append((bank.images[img_idx[j]],
                         Window(int(rows[j]), int(cols[j]), int(sizes[j]))))
            kept_scores.append(scores[j])

    ratio = len(kept) / inspected if inspected else 0.0
    return MiningResult(kept, np.array(kept_scores, dtype=np.float64),
                        ratio, len(kept) < count, inspected)


@dataclass(frozen=True)
class StageReport:
    """Per-stage training outcome, one row of the final report."""

    stage: int
    n_trees: int
    tpr_target: float
    tpr_achieved: float
    fpr_estimate: float
    threshold: float
    n_positives: int
    n_negatives: int
    n_drawn: int


class TrainResult(NamedTuple):
    cascade: Cascade
    reports: list[StageReport]


def format_report(reports: Sequence[StageReport]) -> str:
    """Render stage statistics as three aligned rows (trees, TPR%, FPR%)."""
    cells = [[f"{r.n_trees}" for r in reports],
             [f"{100 * r.tpr_achieved:.1f}" for r in reports],
             [f"{100 * r.fpr_estimate:.1f}" for r in reports]]
    names = ["num. trees", "TPR [%]", "FPR [%]"]
    widths = [max(len(col[i]) for col in cells) for i in range(len(reports))]
    lines = []
    for name, row in zip(names, cells):
        body = "  ".join(c.rjust(w) for c, w in zip(row, widths))
        lines.append(f"{name:<11}  {body}")
    return "\n".join(lines)


def train_cascade(positives, backgrounds, schedule: Sequence[StageConfig],
                  depth: int = DEFAULT_DEPTH,
                  n_candidates: int = DEFAULT_CANDIDATES, seed=0,
                  size_range=None, draw_budget: int | None = None,
                  progress=None) -> TrainResult:
    """Train a full cascade with per-stage hard negative mining.

    For each stage: mine negatives that survive the cascade built so far,
    fit the stage ensemble by boosting, set the stage threshold from the
    surviving positives' accumulated scores at the stage's true-positive
    target, then drop positives falling below it from later stages.

    ``positives`` are (image, window) pairs; ``backgrounds`` are images
    assumed to contain no objects.  ``size_range`` defaults to the range
    of positive window sizes.  ``progress`` is an optional callable
    receiving each :class:`StageReport` as it is produced.
    """
    if not schedule:
        raise TrainingError("schedule is empty")
    if not positives:
        raise TrainingError("no positive samples")
    key = normalize_seed(seed)
    if size_range is None:
        sizes = [win.size for _, win in positives]
        size_range = (min(sizes), max(sizes))

    alive = np.arange(len(positives))
    prior = np.zeros(len(positives), dtype=np.float64)
    stages: list[Stage] = []
    reports: list[StageReport] = []
    for si, cfg in enumerate(schedule):
        prefix = Cascade(depth, tuple(stages))
        n_mine = cfg.negatives_to_mine if cfg.negatives_to_mine is not None \
            else len(alive)
        mined = mine_negatives(prefix, backgrounds, n_mine, size_range,
                               seed=key + (si,), draw_budget=draw_budget)
        if mined.exhausted:
            raise MiningBudgetError(
                f"collected {len(mined.samples)}/{n_mine} negatives "
                f"in {mined.n_drawn} draws", stage=si)
        pos_alive = [positives[i] for i in alive]
        fit = boost_fit_stage(
            pos_alive, mined.samples, cfg.tree_count, depth, n_candidates,
            seed=key + (si,),
            prior_scores=np.concatenate([prior[alive], mined.scores]))
        new_pos = fit.accumulated_scores[:len(alive)]
        theta = narrow_threshold(calibrate_threshold(new_pos, cfg.tpr_target))
        keep = new_pos >= theta
        stages.append(Stage(fit.trees, theta))
        report = StageReport(
            stage=si, n_trees=cfg.tree_count, tpr_target=cfg.tpr_target,
            tpr_achieved=float(np.mean(keep)), fpr_estimate=mined.acceptance_ratio,
            threshold=theta, n_positives=len(alive),
            n_negatives=len(mined.samples), n_drawn=mined.n_drawn)
        reports.append(report)
        if progress is not None:
            progress(report)
        prior[alive] = new_pos
        alive = alive[keep]
        if alive.size == 0:
            raise TrainingError("all positives rejected", stage=si)
    return TrainResult(Cascade(depth, tuple(stages)), reports)
