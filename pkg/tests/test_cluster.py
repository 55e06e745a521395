import numpy as np
import pytest

from pctdet.cluster import FinalDetection, cluster_detections, overlap, \
    square_iou
from pctdet.scanner import RawDetection


def _det(row, col, size, score=1.0, orientation=0):
    return RawDetection(row, col, size, score, orientation)


def oracle_components(dets, threshold):
    """Union-find over all pairs, independent of the DFS path."""
    parent = list(range(len(dets)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rows = np.array([d.row for d in dets], float)
    cols = np.array([d.col for d in dets], float)
    sizes = np.array([d.size for d in dets], float)
    half = sizes / 2
    for i in range(len(dets)):
        ih = np.minimum(rows + half, rows[i] + half[i]) - \
            np.maximum(rows - half, rows[i] - half[i])
        iw = np.minimum(cols + half, cols[i] + half[i]) - \
            np.maximum(cols - half, cols[i] - half[i])
        inter = np.where((ih > 0) & (iw > 0), ih * iw, 0.0)
        iou = inter / (sizes ** 2 + sizes[i] ** 2 - inter)
        for j in np.nonzero(iou > threshold)[0]:
            ri, rj = find(i), find(int(j))
            if ri != rj:
                parent[ri] = rj
    groups = {}
    for i in range(len(dets)):
        groups.setdefault(find(i), []).append(i)
    return sorted(sorted(g) for g in groups.values())


class TestOverlap:
    def test_identical_squares(self):
        assert overlap(_det(10, 10, 8), _det(10, 10, 8)) == 1.0

    def test_disjoint_squares(self):
        assert overlap(_det(0, 0, 4), _det(100, 100, 4)) == 0.0

    def test_half_shift_gives_one_third(self):
        # equal squares offset by half their side: inter s^2/2, union 3s^2/2
        assert overlap(_det(0, 0, 8), _det(4, 0, 8)) == \
            pytest.approx(1.0 / 3.0)
        assert overlap(_det(0, 0, 8), _det(4, 0, 8)) > 0.3

    def test_exact_threshold_value(self):
        # sizes 13 offset 7 along one axis: 78/260 = 0.3 exactly
        a, b = _det(0, 0, 13), _det(7, 0, 13)
        assert overlap(a, b) == 0.3

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            a = _det(*rng.uniform(0, 50, 2), rng.uniform(1, 30))
            b = _det(*rng.uniform(0, 50, 2), rng.uniform(1, 30))
            ab, ba = overlap(a, b), overlap(b, a)
            assert ab == ba
            assert 0.0 <= ab <= 1.0
        assert overlap(a, a) == 1.0


class TestClusterDetections:
    def test_empty_input(self):
        assert cluster_detections([]) == []

    def test_two_identical_merge(self):
        out = cluster_detections([_det(5, 6, 10, score=1.0),
                                  _det(5, 6, 10, score=2.0)])
        assert len(out) == 1
        d = out[0]
        assert (d.row, d.col, d.size) == (5.0, 6.0, 10.0)
        assert d.score == 3.0
        assert d.count == 2

    def test_chain_is_transitive(self):
        # A-B and B-C overlap well; A-C barely at all: one component
        a, b, c = _det(0, 0, 10), _det(4, 0, 10), _det(8, 0, 10)
        assert overlap(a, b) > 0.3 and overlap(b, c) > 0.3
        assert overlap(a, c) < 0.3
        out = cluster_detections([a, b, c])
        assert len(out) == 1
        assert out[0].count == 3

    def test_exact_threshold_makes_no_edge(self):
        out = cluster_detections([_det(0, 0, 13), _det(7, 0, 13)],
                                 threshold=0.3)
        assert len(out) == 2

    def test_ordering_by_score_descending(self):
        dets = [_det(0, 0, 5, 1.0), _det(50, 0, 5, 4.0), _det(100, 0, 5, 2.0)]
        out = cluster_detections(dets)
        assert [d.score for d in out] == [4.0, 2.0, 1.0]

    def test_geometry_within_member_hull(self):
        rng = np.random.default_rng(1)
        dets = [_det(float(r), float(c), float(s), float(v))
                for r, c, s, v in zip(rng.uniform(0, 40, 50),
                                      rng.uniform(0, 40, 50),
                                      rng.uniform(5, 20, 50),
                                      rng.uniform(0, 3, 50))]
        comps = oracle_components(dets, 0.3)
        out = cluster_detections(dets)
        assert len(out) == len(comps)
        for comp in comps:
            rows = [dets[i].row for i in comp]
            cols = [dets[i].col for i in comp]
            sizes = [dets[i].size for i in comp]
            match = [d for d in out if d.count == len(comp)
                     and min(rows) <= d.row <= max(rows)
                     and min(cols) <= d.col <= max(cols)
                     and min(sizes) <= d.size <= max(sizes)]
            assert match

    def test_matches_union_find_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            n = int(rng.integers(1, 200))
            span = float(rng.uniform(20, 200))
            dets = [_det(float(r), float(c), float(s))
                    for r, c, s in zip(rng.uniform(0, span, n),
                                       rng.uniform(0, span, n),
                                       rng.uniform(4, 30, n))]
            got = cluster_detections(dets)
            want = oracle_components(dets, 0.3)
            assert sorted(d.count for d in got) == \
                sorted(len(g) for g in want)
            got_means = sorted((round(d.row, 6), round(d.col, 6))
                               for d in got)
            want_means = sorted(
                (round(float(np.mean([dets[i].row for i in g])), 6),
                 round(float(np.mean([dets[i].col for i in g])), 6))
                for g in want)
            assert got_means == want_means

    def test_orientation_of_top_scoring_member(self):
        dets = [_det(0, 0, 10, 1.0, orientation=3),
                _det(1, 0, 10, 5.0, orientation=7)]
        out = cluster_detections(dets)
        assert out[0].orientation == 7

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            cluster_detections([], threshold=0.0)


def test_square_iou_basic():
    assert square_iou(0, 0, 2, 0, 0, 2) == 1.0
    assert square_iou(0, 0, 2, 10, 0, 2) == 0.0
