import math
from fractions import Fraction

import numpy as np
import pytest

from pctdet.cascade import (Cascade, Stage, StageConfig, boost_fit_stage,
                            calibrate_threshold, classify_flat,
                            classify_window, default_schedule, format_report,
                            mine_negatives, narrow_threshold, parse_schedule,
                            train_cascade)
from pctdet.errors import (AnnotationError, MiningBudgetError, TrainingError)
from pctdet.image import Window
from pctdet.tree import DecisionTree, PackedSamples, eval_tree
from pctdet.dataset import SynthSpec, generate_synthetic
from pctdet.seeds import substream, AUGMENT
from pctdet.dataset import augment


def _zero_tree(depth=1):
    return DecisionTree(depth,
                        np.zeros((2 ** depth - 1, 4), np.int8),
                        np.zeros(2 ** depth, np.float32))


def _random_cascade(rng, depth=2, n_stages=3, trees_per_stage=2,
                    threshold=-10.0):
    stages = []
    for _ in range(n_stages):
        trees = []
        for _ in range(trees_per_stage):
            tests = rng.integers(-127, 128, (2 ** depth - 1, 4)).astype(np.int8)
            leaves = rng.uniform(-1, 1, 2 ** depth).astype(np.float32)
            trees.append(DecisionTree(depth, tests, leaves))
        stages.append(Stage(tuple(trees), threshold))
    return Cascade(depth, tuple(stages))


def _flat_pair(rng, n=40, img_size=64):
    img = rng.integers(0, 256, (img_size, img_size)).astype(np.uint8)
    wins = []
    for _ in range(n):
        size = int(rng.integers(8, 30))
        lo, hi = (size + 1) // 2, (2 * img_size - size) // 2
        wins.append(Window(int(rng.integers(lo, hi + 1)),
                           int(rng.integers(lo, hi + 1)), size))
    return img, wins


class TestCalibrateThreshold:
    def test_keep_all(self):
        assert calibrate_threshold([3, 2, 1], 1.0) == 1.0

    def test_rank_arithmetic(self):
        # ceil(0.34 * 3) = 2, so the threshold is the 2nd largest
        assert calibrate_threshold([3, 2, 1], 0.34) == 2.0

    def test_rank_oracle_randomized(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(1, 400))
            scores = rng.normal(0, 5, n)
            target = float(rng.uniform(0.01, 1.0))
            got = calibrate_threshold(scores, target)
            k = math.ceil(Fraction(target) * n)
            want = sorted(scores, reverse=True)[k - 1]
            assert got == want
            achieved = np.mean(scores >= got)
            assert achieved >= target

    def test_achieved_tpr_meets_table_style_target(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(2, 3, 1000)
        theta = calibrate_threshold(scores, 0.975)
        assert np.mean(scores >= theta) >= 0.975

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            calibrate_threshold([], 0.5)
        with pytest.raises(ValueError):
            calibrate_threshold([1.0], 0.0)
        with pytest.raises(ValueError):
            calibrate_threshold([1.0], 1.5)


class TestNarrowThreshold:
    def test_never_raises_threshold(self):
        rng = np.random.default_rng(10)
        for x in rng.normal(0, 100, 1000):
            t = narrow_threshold(float(x))
            assert t <= x
            assert np.float32(t) == np.float32(t)  # f32-representable
            assert float(np.float32(t)) == t

    def test_exact_f32_passthrough(self):
        assert narrow_threshold(1.5) == 1.5
        assert narrow_threshold(0.0) == 0.0


class TestClassifyWindow:
    def test_zero_tree_zero_threshold_passes(self):
        cascade = Cascade(1, (Stage((_zero_tree(),), 0.0),))
        img = np.zeros((32, 32), np.uint8)
        res = classify_window(cascade, img, Window(16, 16, 8))
        assert res.rejected_at is None
        assert res.score == 0.0

    def test_positive_threshold_rejects_everything(self):
        cascade = Cascade(1, (Stage((_zero_tree(),), 0.1),))
        img = np.zeros((32, 32), np.uint8)
        res = classify_window(cascade, img, Window(16, 16, 8))
        assert res.rejected_at == 0
        assert res.trees_evaluated == 1

    def test_score_matches_full_sum_oracle_when_passing(self):
        rng = np.random.default_rng(12)
        cascade = _random_cascade(rng, depth=3, n_stages=4)
        img, wins = _flat_pair(rng)
        for win in wins:
            res = classify_window(cascade, img, win)
            naive = 0.0
            for stage in cascade.stages:
                for tree in stage.trees:
                    naive += eval_tree(tree, img, win)
            if res.rejected_at is None:
                assert res.score == naive

    def test_prefix_rejection_consistency(self):
        rng = np.random.default_rng(14)
        cascade = _random_cascade(rng, depth=2, n_stages=5, threshold=0.0)
        img, wins = _flat_pair(rng)
        for win in wins:
            res = classify_window(cascade, img, win)
            if res.rejected_at is not None:
                k = res.rejected_at
                prefix = Cascade(cascade.depth, cascade.stages[:k + 1])
                pres = classify_window(prefix, img, win)
                assert pres.rejected_at == k
                assert pres.score == res.score

    def test_flat_batch_matches_scalar(self):
        rng = np.random.default_rng(15)
        cascade = _random_cascade(rng, depth=3, n_stages=4, threshold=0.0)
        img, wins = _flat_pair(rng)
        base = np.array([w.row * img.shape[1] + w.col for w in wins])
        width = np.full(len(wins), img.shape[1], np.int64)
        size = np.array([w.size for w in wins], np.int64)
        scores, rejected = classify_flat(cascade, img.ravel(), base, width,
                                         size)
        for i, win in enumerate(wins):
            res = classify_window(cascade, img, win)
            assert scores[i] == res.score
            assert rejected[i] == (-1 if res.rejected_at is None
                                   else res.rejected_at)


class TestBoostFitStage:
    def test_one_positive_one_negative_weights(self):
        # constant image: every tree is neutral (all-zero leaves), so the
        # exp update is a no-op and renormalization halves both weights
        img = np.full((16, 16), 60, np.uint8)
        fit = boost_fit_stage([(img, Window(8, 8, 8))],
                              [(img, Window(8, 8, 8))],
                              n_trees=1, depth=2, n_candidates=4, seed=0)
        assert np.allclose(fit.weights, [0.5, 0.5])
        assert np.all(fit.stage_scores == 0.0)

    def test_neutral_tree_keeps_weights(self):
        img = np.full((16, 16), 60, np.uint8)
        fit = boost_fit_stage([(img, Window(8, 8, 8))] * 3,
                              [(img, Window(8, 8, 8))] * 2,
                              n_trees=2, depth=2, n_candidates=4, seed=0)
        # init: 1/3 each positive, 1/2 each negative; neutral trees only
        # renormalize: total = 2, so weights halve
        assert np.allclose(fit.weights, [1 / 6, 1 / 6, 1 / 6, 1 / 4, 1 / 4])

    def test_weight_sums_stay_one_after_each_iteration(self):
        rng = np.random.default_rng(16)
        img = rng.integers(0, 256, (64, 64)).astype(np.uint8)
        pos = [(img, Window(int(rng.integers(10, 50)),
                            int(rng.integers(10, 50)), 12))
               for _ in range(12)]
        neg = [(img, Window(int(rng.integers(10, 50)),
                            int(rng.integers(10, 50)), 12))
               for _ in range(12)]
        for k in range(1, 6):
            fit = boost_fit_stage(pos, neg, n_trees=k, depth=2,
                                  n_candidates=8, seed=4)
            assert abs(float(np.sum(fit.weights)) - 1.0) <= 1e-9

    def test_separable_toy_reaches_zero_training_error(self):
        img = np.full((32, 32), 10, np.uint8)
        img[:, 16:] = 200
        pos = [(img, Window(r, 16, 8)) for r in (8, 12, 16, 20)]
        neg = [(img, Window(r, 7, 8)) for r in (8, 12, 16, 20)]
        fit = boost_fit_stage(pos, neg, n_trees=3, depth=2, n_candidates=64,
                              seed=1)
        margin = fit.stage_scores * np.array([1] * 4 + [-1] * 4)
        assert np.all(margin > 0)

    def test_requires_both_classes(self):
        img = np.zeros((8, 8), np.uint8)
        with pytest.raises(TrainingError):
            boost_fit_stage([(img, Window(4, 4, 4))], [], 1, 1)

    def test_prior_scores_flow_into_accumulated(self):
        img = np.full((16, 16), 60, np.uint8)
        prior = np.array([2.0, -3.0])
        fit = boost_fit_stage([(img, Window(8, 8, 8))],
                              [(img, Window(8, 8, 8))],
                              n_trees=1, depth=1, n_candidates=2, seed=0,
                              prior_scores=prior)
        assert np.array_equal(fit.accumulated_scores,
                              prior + fit.stage_scores)


class TestMineNegatives:
    def test_empty_cascade_accepts_everything(self):
        rng = np.random.default_rng(18)
        bg = [rng.integers(0, 256, (64, 64)).astype(np.uint8)]
        res = mine_negatives(Cascade(2, ()), bg, 50, (8, 32), seed=3)
        assert len(res.samples) == 50
        assert res.acceptance_ratio == 1.0
        assert not res.exhausted
        assert res.n_drawn == 50

    def test_reject_all_exhausts_budget(self):
        rng = np.random.default_rng(19)
        bg = [rng.integers(0, 256, (64, 64)).astype(np.uint8)]
        cascade = Cascade(1, (Stage((_zero_tree(),), 0.5),))
        res = mine_negatives(cascade, bg, 10, (8, 32), seed=3,
                             draw_budget=5000)
        assert res.exhausted
        assert len(res.samples) == 0
        assert res.n_drawn == 5000

    def test_windows_are_inside_and_in_range(self):
        rng = np.random.default_rng(20)
        bg = [rng.integers(0, 256, (48, 80)).astype(np.uint8),
              rng.integers(0, 256, (100, 40)).astype(np.uint8)]
        res = mine_negatives(Cascade(2, ()), bg, 300, (8, 60), seed=5)
        from pctdet.image import window_inside
        for img, win in res.samples:
            assert window_inside(win, *img.shape)
            assert 8 <= win.size <= 60

    def test_acceptance_matches_monte_carlo_fpr(self):
        # train a 1-stage cascade, then compare its mining acceptance with
        # an independent estimate from fresh random windows
        spec = SynthSpec(width=96, height=96, size_range=(24, 48))
        pos_items = generate_synthetic(spec, 30, seed=5)
        bg_items = generate_synthetic(
            SynthSpec(width=96, height=96, objects_per_image=0), 10, seed=6)
        positives = []
        for i, item in enumerate(pos_items):
            for w in augment(item.annotation, item.pixels.shape, n=5,
                             rng=substream(3, AUGMENT, i)):
                positives.append((item.pixels, w))
        backgrounds = [b.pixels for b in bg_items]
        result = train_cascade(positives, backgrounds,
                               [StageConfig(2, 0.98, 200)],
                               depth=3, n_candidates=32, seed=7)
        cascade = result.cascade
        mined = mine_negatives(cascade, backgrounds, 400, (24, 48), seed=21)
        fresh = mine_negatives(cascade, backgrounds, 10 ** 9, (24, 48),
                               seed=22, draw_budget=100_000)
        p1 = mined.acceptance_ratio
        p2 = fresh.acceptance_ratio
        se = math.sqrt(p2 * (1 - p2)) * math.sqrt(
            1 / mined.n_drawn + 1 / fresh.n_drawn)
        assert abs(p1 - p2) <= 3 * se


class TestTrainCascade:
    def _toy_corpus(self):
        spec = SynthSpec(width=96, height=96, size_range=(24, 48))
        pos_items = generate_synthetic(spec, 25, seed=50)
        bg_items = generate_synthetic(
            SynthSpec(width=96, height=96, objects_per_image=0), 8, seed=51)
        positives = []
        for i, item in enumerate(pos_items):
            for w in augment(item.annotation, item.pixels.shape, n=4,
                             rng=substream(9, AUGMENT, i)):
                positives.append((item.pixels, w))
        return positives, [b.pixels for b in bg_items]

    def test_single_stage_full_tpr_drops_no_positives(self):
        positives, backgrounds = self._toy_corpus()
        result = train_cascade(positives, backgrounds,
                               [StageConfig(1, 1.0, 100)],
                               depth=3, n_candidates=16, seed=2)
        assert result.reports[0].tpr_achieved == 1.0

    def test_stagewise_tpr_meets_targets(self):
        positives, backgrounds = self._toy_corpus()
        sched = [StageConfig(1, 0.98, 150), StageConfig(2, 0.98, 150),
                 StageConfig(3, 0.99, 150)]
        result = train_cascade(positives, backgrounds, sched,
                               depth=3, n_candidates=32, seed=3)
        for cfg, report in zip(sched, result.reports):
            assert report.tpr_achieved >= cfg.tpr_target

    def test_deterministic(self):
        positives, backgrounds = self._toy_corpus()
        sched = [StageConfig(1, 0.98, 100), StageConfig(2, 0.99, 100)]
        a = train_cascade(positives, backgrounds, sched, depth=3,
                          n_candidates=16, seed=4)
        b = train_cascade(positives, backgrounds, sched, depth=3,
                          n_candidates=16, seed=4)
        from pctdet.model_io import serialize
        assert serialize(a.cascade) == serialize(b.cascade)

    def test_empty_schedule_rejected(self):
        positives, backgrounds = self._toy_corpus()
        with pytest.raises(TrainingError):
            train_cascade(positives, backgrounds, [], depth=2)

    def test_mining_exhaustion_propagates(self):
        positives, backgrounds = self._toy_corpus()
        # stage 2 cannot find negatives against an easy stage-1 rejector
        # within a tiny budget
        sched = [StageConfig(4, 0.98, 200), StageConfig(2, 0.98, 100_000)]
        with pytest.raises(MiningBudgetError):
            train_cascade(positives, backgrounds, sched, depth=4,
                          n_candidates=64, seed=5, draw_budget=120_000)


class TestSchedule:
    def test_default_schedule_shape(self):
        sched = default_schedule()
        assert len(sched) == 20
        assert [c.tree_count for c in sched[:6]] == [1, 2, 3, 4, 5, 10]
        assert all(c.tree_count == 20 for c in sched[6:])
        assert sum(c.tree_count for c in sched) == 305
        assert [c.tpr_target for c in sched[:6]] == \
            [0.975, 0.98, 0.985, 0.99, 0.995, 0.997]
        assert all(c.tpr_target == 0.999 for c in sched[6:])

    def test_parse_roundtrip(self):
        text = "# comment\n1 0.975 5000\n\n2 0.98 5000  # inline\n"
        sched = parse_schedule(text)
        assert sched == [StageConfig(1, 0.975, 5000),
                         StageConfig(2, 0.98, 5000)]

    def test_parse_error_names_line(self):
        with pytest.raises(AnnotationError) as e:
            parse_schedule("1 0.9 100\nbogus line\n")
        assert "line 2" in str(e.value)

    def test_format_report_rows(self):
        from pctdet.cascade import StageReport
        rows = [StageReport(0, 1, 0.975, 0.98, 0.464, 0.0, 100, 100, 200),
                StageReport(1, 2, 0.98, 0.985, 0.323, 0.0, 98, 100, 300)]
        text = format_report(rows)
        lines = text.splitlines()
        assert lines[0].startswith("num. trees")
        assert lines[1].startswith("TPR [%]")
        assert lines[2].startswith("FPR [%]")
        assert "98.0" in lines[1] and "46.4" in lines[2]