"""Detection scoring, event merging, and metric correctness.

The PR curve is checked against an exhaustive oracle that recomputes
precision/recall (and the rational average precision) at every distinct
threshold from scratch.
"""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sawnet import evaluation, models
from sawnet.errors import ConfigError, TooShort, UndefinedMetric
from sawnet.evaluation import SecondScore, accuracy_f1, merge_events, pr_curve, score_stream
from sawnet.frontend import AudioClip


def pr_reference(scored):
    """Exhaustive oracle: at every distinct threshold, count from scratch."""
    thresholds = sorted({s for s, _ in scored}, reverse=True)
    total_pos = sum(1 for _, l in scored if l)
    points = []
    ap = Fraction(0)
    prev_recall = Fraction(0)
    for t in thresholds:
        tp = sum(1 for s, l in scored if s >= t and l)
        fp = sum(1 for s, l in scored if s >= t and not l)
        precision = Fraction(tp, tp + fp)
        recall = Fraction(tp, total_pos)
        points.append((t, precision, recall))
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return points, ap


def scores_from(probabilities, clip_id="clip"):
    return [SecondScore(clip_id=clip_id, second_index=i, probability=p)
            for i, p in enumerate(probabilities)]


class TestPRCurve:
    def test_matches_oracle_on_random_sets(self):
        rng = np.random.default_rng(50)
        for trial in range(60):
            n = int(rng.integers(1, 200))
            # quantized scores force plenty of ties
            scores = np.round(rng.uniform(0, 1, n), 2)
            labels = rng.integers(0, 2, n)
            if labels.sum() == 0:
                labels[int(rng.integers(n))] = 1
            scored = list(zip(scores.tolist(), labels.tolist()))
            curve = pr_curve(scored)
            want_points, want_ap = pr_reference(scored)
            assert len(curve.points) == len(want_points)
            for (t, p, r), (wt, wp, wr) in zip(curve.points, want_points):
                assert t == wt
                assert p == wp.numerator / wp.denominator
                assert r == wr.numerator / wr.denominator
            assert curve.average_precision == float(want_ap)

    def test_worked_three_item_example(self):
        curve = pr_curve([(0.9, 1), (0.8, 0), (0.7, 1)])
        assert curve.points == ((0.9, 1.0, 0.5), (0.8, 0.5, 0.5), (0.7, 2 / 3, 1.0))
        assert curve.average_precision == 5 / 6

    def test_perfect_ranking(self):
        scored = [(0.9, 1), (0.8, 1), (0.3, 0), (0.2, 0)]
        assert pr_curve(scored).average_precision == 1.0

    def test_all_scores_tied(self):
        curve = pr_curve([(0.5, 1), (0.5, 0), (0.5, 0), (0.5, 1)])
        assert curve.points == ((0.5, 0.5, 1.0),)
        assert curve.average_precision == 0.5

    def test_input_order_irrelevant(self):
        rng = np.random.default_rng(51)
        scored = [(round(float(s), 1), int(l))
                  for s, l in zip(rng.uniform(0, 1, 40), rng.integers(0, 2, 40))]
        if not any(l for _, l in scored):
            scored[0] = (scored[0][0], 1)
        shuffled = list(scored)
        rng.shuffle(shuffled)
        assert pr_curve(scored) == pr_curve(shuffled)

    def test_zero_positives_rejected(self):
        with pytest.raises(UndefinedMetric):
            pr_curve([(0.9, 0), (0.1, 0)])
        with pytest.raises(UndefinedMetric):
            pr_curve([])

    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=80))
    @settings(max_examples=60)
    def test_curve_invariants(self, scored):
        if not any(l for _, l in scored):
            scored = scored + [(0.5, 1)]
        curve = pr_curve(scored)
        thresholds = [t for t, _, _ in curve.points]
        recalls = [r for _, _, r in curve.points]
        precisions = [p for _, p, _ in curve.points]
        assert all(a > b for a, b in zip(thresholds, thresholds[1:]))  # strictly decreasing
        assert all(a <= b for a, b in zip(recalls, recalls[1:]))       # non-decreasing
        assert all(0 <= p <= 1 for p in precisions)
        assert 0.0 <= curve.average_precision <= 1.0
        assert recalls[-1] == 1.0


class TestMergeEvents:
    def test_single_run(self):
        events = merge_events(scores_from([0.9] * 5), threshold=0.5, max_gap_s=0)
        assert len(events) == 1
        event = events[0]
        assert (event.start_s, event.end_s, event.peak_probability) == (0, 5, 0.9)

    def test_run_split_by_dip(self):
        events = merge_events(scores_from([0.9, 0.1, 0.9]), threshold=0.5, max_gap_s=0)
        assert [(e.start_s, e.end_s) for e in events] == [(0, 1), (2, 3)]

    def test_gap_bridging(self):
        events = merge_events(scores_from([0.9, 0.1, 0.9]), threshold=0.5, max_gap_s=1)
        assert [(e.start_s, e.end_s) for e in events] == [(0, 3)]

    def test_criterion_pattern(self):
        probs = [0.9, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9, 0.9]
        assert len(merge_events(scores_from(probs), 0.5, max_gap_s=0)) == 2
        merged = merge_events(scores_from(probs), 0.5, max_gap_s=2)
        assert [(e.start_s, e.end_s) for e in merged] == [(0, 10)]

    def test_peak_probability_is_run_maximum(self):
        events = merge_events(scores_from([0.6, 0.95, 0.7]), threshold=0.5)
        assert events[0].peak_probability == 0.95

    def test_clips_do_not_merge_across_ids(self):
        scores = scores_from([0.9], "a") + scores_from([0.9], "b")
        events = merge_events(scores, 0.5, max_gap_s=5)
        assert [e.clip_id for e in events] == ["a", "b"]

    def test_nothing_above_threshold(self):
        assert merge_events(scores_from([0.2, 0.3]), 0.5) == []

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60),
           st.floats(0.05, 0.95))
    @settings(max_examples=80)
    def test_union_at_gap_zero_is_above_threshold_set(self, probs, threshold):
        events = merge_events(scores_from(probs), threshold, max_gap_s=0)
        covered = set()
        for e in events:
            span = set(range(e.start_s, e.end_s))
            assert not span & covered  # disjoint
            covered |= span
        want = {i for i, p in enumerate(probs) if p >= threshold}
        assert covered == want
        starts = [e.start_s for e in events]
        assert starts == sorted(starts)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60),
           st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=40)
    def test_threshold_monotonicity(self, probs, t1, t2):
        lo, hi = min(t1, t2), max(t1, t2)
        n_lo = sum(1 for p in probs if p >= lo)
        n_hi = sum(1 for p in probs if p >= hi)
        assert n_hi <= n_lo


class TestAccuracyF1:
    def test_all_correct(self):
        assert accuracy_f1([(0, 0), (1, 1), (2, 2)], 3) == (1.0, 1.0)

    def test_worked_binary_example(self):
        accuracy, macro = accuracy_f1([(1, 1), (1, 0), (0, 0), (0, 0)], 2)
        assert accuracy == 0.75
        assert macro == pytest.approx((2 / 3 + 0.8) / 2, abs=1e-12)

    def test_constant_predictor_base_rate(self):
        preds = [(0, true) for true in range(50) for _ in range(4)]
        accuracy, macro = accuracy_f1(preds, 50)
        assert accuracy == pytest.approx(0.02, abs=1e-12)
        assert macro < 0.01  # only class 0 has nonzero F1

    def test_absent_class_counts_as_zero(self):
        accuracy, macro = accuracy_f1([(0, 0), (1, 1)], 4)
        assert accuracy == 1.0
        assert macro == 0.5  # classes 2 and 3 contribute F1 = 0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(52)
        preds = [(int(rng.integers(3)), int(rng.integers(3))) for _ in range(60)]
        shuffled = list(preds)
        rng.shuffle(shuffled)
        assert accuracy_f1(preds, 3) == accuracy_f1(shuffled, 3)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            accuracy_f1([], 2)

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            accuracy_f1([(0, 5)], 2)


@pytest.fixture(scope="module")
def zero_bundle():
    return models.init_bundle(models.build_aug_vggish(2), init="zeros")


class TestScoreStream:

    def test_five_second_clip_five_scores(self, zero_bundle):
        clip = AudioClip(np.zeros(80000, np.float32), 16000, "clip")
        scores = score_stream(zero_bundle, clip, positive_class=1)
        assert [s.second_index for s in scores] == [0, 1, 2, 3, 4]
        assert all(s.clip_id == "clip" for s in scores)

    def test_uniform_probability_for_zero_weights(self, zero_bundle):
        clip = AudioClip(np.zeros(32000, np.float32), 16000, "clip")
        for s in score_stream(zero_bundle, clip, positive_class=1):
            assert s.probability == pytest.approx(0.5, abs=1e-12)

    def test_fractional_tail_dropped(self, zero_bundle):
        clip = AudioClip(np.zeros(16000 + 8000, np.float32), 16000, "clip")
        assert len(score_stream(zero_bundle, clip, positive_class=1)) == 1

    def test_too_short_rejected(self, zero_bundle):
        with pytest.raises(TooShort):
            score_stream(zero_bundle, AudioClip(np.zeros(15999, np.float32), 16000), 1)

    def test_resampling_applied(self, zero_bundle):
        clip = AudioClip(np.zeros(48000 * 2, np.float32), 48000, "hi-rate")
        assert len(score_stream(zero_bundle, clip, positive_class=1)) == 2

    def test_identical_seconds_identical_probabilities(self):
        bundle = models.init_bundle(models.build_aug_vggish(2), init="random", seed=60)
        rng = np.random.default_rng(61)
        second = rng.uniform(-0.3, 0.3, 16000).astype(np.float32)
        clip = AudioClip(np.tile(second, 3), 16000, "loop")
        scores = score_stream(bundle, clip, positive_class=1)
        assert len({s.probability for s in scores}) == 1

    def test_single_logit_bundle_uses_sigmoid(self):
        layers = (
            models.LayerDef("conv1", "conv", in_ch=1, out_ch=4, kernel=3, relu=True),
            models.LayerDef("gap", "global_avg_pool"),
            models.LayerDef("head", "dense", in_units=4, out_units=1),
        )
        spec = models.ModelSpec(arch_id="aug_vggish", num_classes=1, layers=layers,
                                embedding_layer="gap", embedding_dim=4)
        bundle = models.init_bundle(spec, init="zeros")
        clip = AudioClip(np.zeros(16000, np.float32), 16000, "sig")
        scores = score_stream(bundle, clip, positive_class=0)
        assert scores[0].probability == 0.5  # sigmoid(0)

    def test_positive_class_out_of_range(self, zero_bundle):
        clip = AudioClip(np.zeros(16000, np.float32), 16000)
        with pytest.raises(ConfigError):
            score_stream(zero_bundle, clip, positive_class=7)


class TestPRCsv:
    def test_file_layout(self, tmp_path):
        curve = pr_curve([(0.9, 1), (0.8, 0), (0.7, 1)])
        path = tmp_path / "curve.csv"
        evaluation.write_pr_csv(path, curve)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "threshold,precision,recall"
        assert len(lines) == 5
        assert lines[-1].startswith("# average_precision=0.8333")
