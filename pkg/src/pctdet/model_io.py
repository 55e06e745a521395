"""Bit-exact binary model format (the on-disk ``.pct`` file).

Layout, all multi-byte integers little-endian:

    header   magic "PCT1", version u16 = 1, tree depth u8, reserved u8 = 0,
             stage count u32, total tree count u32           (16 bytes)
    stages   per stage: tree count u16, threshold float32    (6 bytes each)
    trees    per tree, grouped by stage in order:
             2**D - 1 nodes in level order, 4 signed bytes each
             (loc1.qr, loc1.qc, loc2.qr, loc2.qc), then
             2**D leaves as float32

Deserializing a valid blob and serializing the result reproduces the blob
byte for byte.  Any truncation, trailing garbage or invalid field is
rejected with :class:`ModelFormatError`.
"""

from __future__ import annotations

import struct

import numpy as np

from .cascade import Cascade, Stage
from .errors import ModelFormatError
from .tree import DecisionTree

MAGIC = b"PCT1"
VERSION = 1
_HEADER = struct.Struct("<4sHBBII")


def tree_n_bytes(depth: int) -> int:
    return (2 ** depth - 1) * 4 + 2 ** depth * 4


def serialize(cascade: Cascade) -> bytes:
    """Encode a cascade; raises ``ModelFormatError`` on out-of-range fields."""
    n_stages = len(cascade.stages)
    if not 1 <= cascade.depth <= 16:
        raise ModelFormatError(f"depth {cascade.depth} outside [1, 16]")
    if not 1 <= n_stages <= 256:
        raise ModelFormatError(f"stage count {n_stages} outside [1, 256]")
    parts = [_HEADER.pack(MAGIC, VERSION, cascade.depth, 0, n_stages,
                          cascade.n_trees)]
    for stage in cascade.stages:
        if not np.isfinite(stage.threshold):
            raise ModelFormatError("non-finite stage threshold")
        parts.append(struct.pack("<Hf", len(stage.trees), stage.threshold))
    for stage in cascade.stages:
        for tree in stage.trees:
            if not np.all(np.isfinite(tree.leaves)):
                raise ModelFormatError("non-finite leaf value")
            parts.append(np.ascontiguousarray(tree.tests, dtype=np.int8)
                         .tobytes())
            parts.append(np.ascontiguousarray(tree.leaves, dtype="<f4")
                         .tobytes())
    return b"".join(parts)


def deserialize(blob: bytes) -> Cascade:
    """Decode a model blob, validating every field and the exact length."""
    if len(blob) < _HEADER.size:
        raise ModelFormatError(
            f"blob of {len(blob)} bytes is shorter than the header")
    magic, version, depth, reserved, n_stages, n_trees = \
        _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    if reserved != 0:
        raise ModelFormatError(f"reserved byte is {reserved}, expected 0")
    if not 1 <= depth <= 16:
        raise ModelFormatError(f"depth {depth} outside [1, 16]")
    if not 1 <= n_stages <= 256:
        raise ModelFormatError(f"stage count {n_stages} outside [1, 256]")

    pos = _HEADER.size
    if len(blob) < pos + 6 * n_stages:
        raise ModelFormatError("truncated stage table")
    counts = []
    thresholds = []
    for _ in range(n_stages):
        count, threshold = struct.unpack_from("<Hf", blob, pos)
        pos += 6
        if count == 0:
            raise ModelFormatError("stage with zero trees")
        if not np.isfinite(threshold):
            raise ModelFormatError("non-finite stage threshold")
        counts.append(count)
        thresholds.append(float(threshold))
    if sum(counts) != n_trees:
        raise ModelFormatError(
            f"stage tree counts sum to {sum(counts)}, header says {n_trees}")

    per_tree = tree_n_bytes(depth)
    expected = pos + n_trees * per_tree
    if len(blob) < expected:
        raise ModelFormatError(
            f"truncated blob: {len(blob)} bytes, need {expected}")
    if len(blob) > expected:
        raise ModelFormatError(
            f"{len(blob) - expected} trailing bytes after the model")

    n_nodes = 2 ** depth - 1
    n_leaves = 2 ** depth
    stages = []
    for count, threshold in zip(counts, thresholds):
        trees = []
        for _ in range(count):
            tests = np.frombuffer(blob, dtype=np.int8, count=n_nodes * 4,
                                  offset=pos).reshape(n_nodes, 4).copy()
            pos += n_nodes * 4
            leaves = np.frombuffer(blob, dtype="<f4", count=n_leaves,
                                   offset=pos).astype(np.float32)
            pos += n_leaves * 4
            if not np.all(np.isfinite(leaves)):
                raise ModelFormatError("non-finite leaf value")
            trees.append(DecisionTree(depth, tests, leaves))
        stages.append(Stage(tuple(trees), threshold))
    return Cascade(depth, tuple(stages))


def save_model(cascade: Cascade, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(cascade))


def load_model(path) -> Cascade:
    with open(path, "rb") as f:
        return deserialize(f.read())
