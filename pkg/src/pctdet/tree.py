"""Depth-limited regression trees over two-pixel intensity comparisons.

A tree node holds one comparison test: two fixed-point window locations.
The test emits bit 0 when the first intensity is <= the second, bit 1
otherwise.  Trees are always complete: depth D means exactly 2**D - 1
internal nodes in level order (children of node i at 2i+1 and 2i+2) and
2**D scalar leaves.

Training greedily picks, per node, the candidate test with the smallest
weighted squared error of the induced two-way split; the first candidate
drawn wins ties.  Candidate draws come from a per-node substream, so the
result does not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .image import NormLoc, Window, check_gray, map_location, trunc_div_256_arr
from .seeds import TREE_NODE, substream

# Cap on elements per (candidates x samples) work array.
_CHUNK_ELEMS = 1 << 21


class CompTest(NamedTuple):
    """Two-pixel comparison: fixed-point locations packed flat."""

    qr1: int
    qc1: int
    qr2: int
    qc2: int

    @property
    def loc1(self) -> NormLoc:
        return NormLoc(self.qr1, self.qc1)

    @property
    def loc2(self) -> NormLoc:
        return NormLoc(self.qr2, self.qc2)


@dataclass(frozen=True)
class Sample:
    """One training region: an image window with its label and weight."""

    image: np.ndarray
    window: Window
    label: int
    weight: float = 1.0

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")


class PackedSamples:
    """Struct-of-arrays view of training samples for vectorized evaluation.

    All referenced images are concatenated into one flat byte buffer;
    each sample keeps its center's flat index, its image width and its
    window size, which is all the comparison tests need.
    """

    def __init__(self, flat, base, width, size, labels, weights):
        self.flat = flat
        self.base = base
        self.width = width
        self.size = size
        self.labels = labels
        self.weights = weights
        self.n = len(base)

    @classmethod
    def from_windows(cls, pairs, labels, weights=None) -> "PackedSamples":
        """Pack (image, window) pairs; images deduplicated by identity."""
        starts: dict[int, tuple[int, int]] = {}
        chunks: list[np.ndarray] = []
        offset = 0
        base = np.empty(len(pairs), dtype=np.int64)
        width = np.empty(len(pairs), dtype=np.int64)
        size = np.empty(len(pairs), dtype=np.int64)
        for i, (img, win) in enumerate(pairs):
            key = id(img)
            if key not in starts:
                arr = check_gray(img)
                starts[key] = (offset, arr.shape[1])
                chunks.append(arr.ravel())
                offset += arr.size
            start, w = starts[key]
            base[i] = start + win.row * w + win.col
            width[i] = w
            size[i] = win.size
        flat = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.uint8)
        labels = np.ascontiguousarray(labels, dtype=np.float64)
        if weights is None:
            weights = np.ones(len(pairs), dtype=np.float64)
        else:
            weights = np.ascontiguousarray(weights, dtype=np.float64)
        return cls(flat, base, width, size, labels, weights)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "PackedSamples":
        pairs = [(s.image, s.window) for s in samples]
        labels = [s.label for s in samples]
        weights = [s.weight for s in samples]
        return cls.from_windows(pairs, labels, weights)


def as_packed(samples) -> PackedSamples:
    if isinstance(samples, PackedSamples):
        return samples
    return PackedSamples.from_samples(list(samples))


@dataclass(frozen=True)
class DecisionTree:
    """Complete comparison tree: level-order tests and scalar leaves."""

    depth: int
    tests: np.ndarray = field(repr=False)   # (2**depth - 1, 4) int8
    leaves: np.ndarray = field(repr=False)  # (2**depth,) float32

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.tests.shape != (2 ** self.depth - 1, 4):
            raise ValueError("tests array does not match depth")
        if self.leaves.shape != (2 ** self.depth,):
            raise ValueError("leaves array does not match depth")


def eval_bintest(image, window: Window, test: CompTest) -> int:
    """Evaluate one comparison: 0 iff intensity at loc1 <= intensity at loc2."""
    r1, c1 = map_location(window, test.loc1)
    r2, c2 = map_location(window, test.loc2)
    return 1 if image[r1, c1] > image[r2, c2] else 0


def eval_tree(tree: DecisionTree, image, window: Window) -> float:
    """Descend the tree for one window; exactly ``depth`` comparisons."""
    row, col, size = window
    idx = 0
    for _ in range(tree.depth):
        a, b, c, d = (int(x) for x in tree.tests[idx])
        i1 = image[row + _tdiv(a * size), col + _tdiv(b * size)]
        i2 = image[row + _tdiv(c * size), col + _tdiv(d * size)]
        idx = 2 * idx + 1 + (1 if i1 > i2 else 0)
    return float(tree.leaves[idx - (2 ** tree.depth - 1)])


def _tdiv(p: int) -> int:
    return p // 256 if p >= 0 else -((-p) // 256)


def eval_tree_flat(tree: DecisionTree, flat, base, width, size) -> np.ndarray:
    """Vectorized descent: leaf values for many windows as float64.

    ``flat`` is a 1-D uint8 buffer; ``base`` holds each window center's
    flat index; ``width`` and ``size`` broadcast against ``base``.
    """
    n_internal = 2 ** tree.depth - 1
    idx = np.zeros(np.shape(base), dtype=np.int64)
    for _ in range(tree.depth):
        t = tree.tests[idx].astype(np.int64)
        p1 = base + trunc_div_256_arr(t[..., 0] * size) * width \
            + trunc_div_256_arr(t[..., 1] * size)
        p2 = base + trunc_div_256_arr(t[..., 2] * size) * width \
            + trunc_div_256_arr(t[..., 3] * size)
        idx = 2 * idx + 1 + (flat[p1] > flat[p2])
    return tree.leaves[idx - n_internal].astype(np.float64)


def eval_tree_packed(tree: DecisionTree, packed: PackedSamples,
                     idx=None) -> np.ndarray:
    """Leaf values for packed samples (or a subset given by ``idx``)."""
    if idx is None:
        return eval_tree_flat(tree, packed.flat, packed.base,
                              packed.width, packed.size)
    return eval_tree_flat(tree, packed.flat, packed.base[idx],
                          packed.width[idx], packed.size[idx])


def _candidate_bits(packed: PackedSamples, idx, cands) -> np.ndarray:
    """Comparison bits of each candidate on each sample, shape (B, S)."""
    base = packed.base[idx]
    width = packed.width[idx]
    size = packed.size[idx]
    flat = packed.flat
    q = np.asarray(cands, dtype=np.int64)
    out = np.empty((len(q), len(base)), dtype=bool)
    step = max(1, _CHUNK_ELEMS // max(1, len(base)))
    for lo in range(0, len(q), step):
        qc = q[lo:lo + step]
        dr1 = trunc_div_256_arr(qc[:, 0:1] * size)
        dc1 = trunc_div_256_arr(qc[:, 1:2] * size)
        dr2 = trunc_div_256_arr(qc[:, 2:3] * size)
        dc2 = trunc_div_256_arr(qc[:, 3:4] * size)
        i1 = flat[base + dr1 * width + dc1]
        i2 = flat[base + dr2 * width + dc2]
        np.greater(i1, i2, out=out[lo:lo + step])
    return out


def _split_sums(bits, labels, weights):
    """Per-candidate weight and weighted-label sums of the bit-1 cluster."""
    f = bits.astype(np.float64)
    sw1 = f @ weights
    swv1 = f @ (weights * labels)
    return sw1, swv1


def _score_candidates(packed, idx, cands, labels, weights):
    """Split error of every candidate on the samples in ``idx``."""
    sw = float(np.sum(weights))
    swv = float(np.sum(weights * labels))
    swv2 = float(np.sum(weights * labels * labels))
    scores = np.empty(len(cands), dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, len(idx)))
    for lo in range(0, len(cands), step):
        bits = _candidate_bits(packed, idx, cands[lo:lo + step])
        sw1, swv1 = _split_sums(bits, labels, weights)
        scores[lo:lo + step] = _score_from_sums(sw, swv, swv2, sw1, swv1)
    return scores


def _score_from_sums(sw, swv, swv2, sw1, swv1):
    """Weighted squared error of the split, via the variance decomposition.

    Empty clusters and clusters of zero total weight contribute with a
    cluster mean of zero, matching the direct two-pass definition.  The
    error is non-negative by definition; clamping removes the tiny
    negative residue the decomposition can leave on perfect splits, so
    they tie at exactly zero.
    """
    sw0 = sw - sw1
    swv0 = swv - swv1
    t1 = np.where(sw1 > 0, np.square(swv1) / np.where(sw1 > 0, sw1, 1.0), 0.0)
    t0 = np.where(sw0 > 0, np.square(swv0) / np.where(sw0 > 0, sw0, 1.0), 0.0)
    return np.maximum(swv2 - t0 - t1, 0.0)


def wmse_split_score(samples, test, weights=None):
    """Score one candidate test over a sample set.

    Returns ``(score, mean0, mean1)``: the weighted squared error of the
    two clusters around their weighted label means, and those means
    (0 for an empty or zero-weight cluster).
    """
    packed = as_packed(samples)
    w = packed.weights if weights is None else np.asarray(weights, np.float64)
    v = packed.labels
    if packed.n == 0:
        return 0.0, 0.0, 0.0
    idx = np.arange(packed.n)
    bits = _candidate_bits(packed, idx, np.asarray([tuple(test)], np.int8))
    sw = float(np.sum(w))
    swv = float(np.sum(w * v))
    swv2 = float(np.sum(w * v * v))
    sw1, swv1 = _split_sums(bits, v, w)
    score = float(_score_from_sums(sw, swv, swv2, sw1, swv1)[0])
    sw1 = float(sw1[0])
    swv1 = float(swv1[0])
    sw0 = sw - sw1
    swv0 = swv - swv1
    mean0 = swv0 / sw0 if sw0 > 0 else 0.0
    mean1 = swv1 / sw1 if sw1 > 0 else 0.0
    return score, mean0, mean1


def _leaf_value(labels, weights, idx) -> float:
    if len(idx) == 0:
        return 0.0
    sw = float(np.sum(weights[idx]))
    if sw <= 0:
        return 0.0
    m = float(np.sum(weights[idx] * labels[idx])) / sw
    return min(1.0, max(-1.0, m))


def train_tree(samples, depth: int, n_candidates: int = 256, seed=0,
               weights=None) -> DecisionTree:
    """Grow a complete tree of the given depth.

    Per internal node, ``n_candidates`` tests are drawn with every
    coordinate uniform over [-127, +127] (with replacement) from the
    substream keyed by ``(seed, node index)``; the draw with the lowest
    split error wins, first drawn on ties.  Leaves hold the weighted mean
    of the labels that reach them, 0 when none do.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if n_candidates < 1:
        raise ValueError("need at least one candidate test per node")
    packed = as_packed(samples)
    v = packed.labels
    w = packed.weights if weights is None else \
        np.ascontiguousarray(weights, dtype=np.float64)
    n_internal = 2 ** depth - 1
    tests = np.zeros((n_internal, 4), dtype=np.int8)
    leaves = np.zeros(2 ** depth, dtype=np.float32)
    empty = np.empty(0, dtype=np.int64)
    members = {0: np.arange(packed.n, dtype=np.int64)}

    for node in range(n_internal):
        idx = members.pop(node, empty)
        rng = substream(seed, TREE_NODE, node)
        cands = rng.integers(-127, 128, size=(n_candidates, 4)).astype(np.int8)
        if idx.size == 0:
            best = 0
            go_right = np.empty(0, dtype=bool)
        else:
            scores = _score_candidates(packed, idx, cands, v[idx], w[idx])
            best = int(np.argmin(scores))
            go_right = _candidate_bits(packed, idx, cands[best:best + 1])[0]
        tests[node] = cands[best]
        members[2 * node + 1] = idx[~go_right]
        members[2 * node + 2] = idx[go_right]

    for j in range(2 ** depth):
        leaves[j] = _leaf_value(v, w, members.pop(n_internal + j, empty))
    return DecisionTree(depth=depth, tests=tests, leaves=leaves)
