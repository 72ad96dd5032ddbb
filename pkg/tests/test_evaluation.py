import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cyclestart.evaluation import (
    FN, FP, TP, EmptyScene, NoTruePositives, SceneAnnotation, SceneOutcome, SweepCurve, classify_scene,
    default_thresholds, mean_detection_time, scores_from_counts, select_operating_point, sweep,
    write_curve_csv, write_trace_csv,
)
from oracles import classify_scan, naive_mean

ANN = SceneAnnotation.from_boundaries(10, 4, 7)


def random_scene(rng):
    n = int(rng.integers(5, 501))
    t2 = int(rng.integers(1, n))
    t3 = int(rng.integers(t2, n))
    ann = SceneAnnotation.from_boundaries(n, t2, t3, float(rng.choice([25.0, 50.0])))
    trace = np.round(rng.random(n) ** rng.uniform(0.3, 3), 2)
    return trace, ann


class TestAnnotation:
    def test_boundaries(self):
        assert (ANN.t_II, ANN.t_III, len(ANN)) == (4, 7, 10)

    def test_phase_order_enforced(self):
        with pytest.raises(ValueError):
            SceneAnnotation(50.0, ("waiting", "moving", "starting"))

    def test_empty_starting_phase(self):
        ann = SceneAnnotation.from_boundaries(6, 3, 3)
        assert ann.t_II == ann.t_III == 3

    def test_slicing(self):
        assert ANN.sliced(5).t_III == 2


class TestClassify:
    def test_never_reached(self):
        assert classify_scene(np.full(10, 0.4), ANN, 0.5) == SceneOutcome(FN)

    def test_first_crossing_in_waiting(self):
        p = np.zeros(10)
        p[1] = p[8] = 0.9
        assert classify_scene(p, ANN, 0.5).kind == FP

    def test_crossing_at_t_iii(self):
        p = np.zeros(10)
        p[7:] = 0.5
        assert classify_scene(p, ANN, 0.5) == SceneOutcome(TP, 7, 0.0)

    def test_early_detection_is_negative(self):
        p = np.zeros(10)
        p[5:] = 1.0
        out = classify_scene(p, ANN, 0.5)
        assert out.kind == TP and out.detection_delay == pytest.approx(-2 / 50)

    def test_errors(self):
        with pytest.raises(EmptyScene):
            classify_scene([], ANN, 0.5)
        with pytest.raises(ValueError):
            classify_scene(np.zeros(3), ANN, 0.5)

    def test_matches_frame_scan(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            trace, ann = random_scene(rng)
            s = float(rng.choice(default_thresholds()))
            out = classify_scene(trace, ann, s)
            kind, frame, delay = classify_scan(list(trace), list(ann.phase_labels), s, ann.frame_rate)
            assert (out.kind, out.detection_frame, out.detection_delay) == (kind, frame, delay)


class TestMeanDelay:
    def test_examples(self):
        assert mean_detection_time([SceneOutcome(TP, 1, 0.2), SceneOutcome(TP, 2, 0.4)]) == pytest.approx(0.3)
        assert mean_detection_time([SceneOutcome(TP, 1, -0.038), SceneOutcome(FN)]) == -0.038
        assert mean_detection_time([SceneOutcome(TP, 1, 0.0)] * 3) == 0.0

    def test_no_true_positives(self):
        with pytest.raises(NoTruePositives):
            mean_detection_time([SceneOutcome(FP), SceneOutcome(FN)])

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=50))
    def test_naive_average(self, delays):
        outs = [SceneOutcome(TP, 0, d) for d in delays]
        assert mean_detection_time(outs) == pytest.approx(naive_mean(delays), abs=1e-12)

    @given(st.integers(0, 10 ** 6), st.integers(-40, 40))
    def test_time_shift_invariance(self, seed, shift):
        rng = np.random.default_rng(seed)
        trace, ann = random_scene(rng)
        out = classify_scene(trace, ann, 0.5)
        if out.kind == TP:
            n = len(ann)
            lead = max(shift, 0)
            padded = SceneAnnotation.from_boundaries(n + lead, ann.t_II + lead, ann.t_III + lead, ann.frame_rate)
            shifted = classify_scene(np.concatenate([np.zeros(lead), trace]), padded, 0.5)
            assert shifted.detection_delay == pytest.approx(out.detection_delay, abs=1e-12)


class TestSweep:
    def test_thresholds(self):
        thr = default_thresholds()
        assert len(thr) == 51 and thr[0] == 0.0 and thr[-1] == 1.0
        assert np.allclose(np.diff(thr), 0.02)

    def test_all_tp(self):
        p = np.zeros(10)
        p[6:] = 1.0
        c = sweep([p, p], [ANN, ANN], [0.5])
        assert (c.precision[0], c.f1[0]) == (1.0, 1.0)

    def test_one_tp_one_fp(self):
        assert scores_from_counts(1, 1, 0) == pytest.approx((0.5, 1.0, 2 / 3))
        assert scores_from_counts(0, 0, 3) == (0.0, 0.0, 0.0)

    def test_threshold_zero_forces_false_positives(self):
        rng = np.random.default_rng(1)
        scenes = [random_scene(rng) for _ in range(20)]
        c = sweep([t for t, _ in scenes], [a for _, a in scenes])
        assert c.fp[0] == 20 and c.precision[0] == 0.0 and math.isnan(c.mean_delay[0])

    def test_constant_traces(self):
        zeros = sweep([np.zeros(10)] * 3, [ANN] * 3)
        assert np.all(zeros.f1 == 0) and np.all(zeros.fn[1:] == 3)
        ones = sweep([np.ones(10)] * 3, [ANN] * 3)
        assert np.all(ones.fp == 3) and np.all(ones.f1 == 0)

    def test_counts_match_brute_force(self):
        rng = np.random.default_rng(2)
        scenes = [random_scene(rng) for _ in range(300)]
        c = sweep([t for t, _ in scenes], [a for _, a in scenes])
        for i, s in enumerate(c.thresholds):
            res = [classify_scan(list(t), list(a.phase_labels), s, a.frame_rate) for t, a in scenes]
            kinds = [r[0] for r in res]
            assert (c.tp[i], c.fp[i], c.fn[i]) == (kinds.count("TP"), kinds.count("FP"), kinds.count("FN"))

    def test_raising_threshold_never_turns_fn_into_tp(self):
        rng = np.random.default_rng(3)
        scenes = [random_scene(rng) for _ in range(100)]
        c = sweep([t for t, _ in scenes], [a for _, a in scenes])
        for lo, hi in zip(c.outcomes, c.outcomes[1:]):
            for a, b in zip(lo, hi):
                assert not (a.kind == FN and b.kind == TP)

    def test_needs_scenes(self):
        with pytest.raises(ValueError):
            sweep([], [])


def _curve(f1, delay):
    n = len(f1)
    z = np.zeros(n, int)
    return SweepCurve(np.arange(n) * 0.02, z, z, z, np.zeros(n), np.zeros(n),
                      np.array(f1, float), np.array(delay, float))


class TestOperatingPoint:
    def test_unique_max(self):
        assert select_operating_point(_curve([0.2, 0.9, 0.5], [0.1, 0.3, 0.2])) == 0.02

    def test_delay_breaks_f1_tie(self):
        assert select_operating_point(_curve([1.0, 1.0, 0.4], [0.578, 0.565, 0.1])) == 0.02

    def test_smallest_threshold_last(self):
        assert select_operating_point(_curve([0.7, 0.7, 0.7], [0.2, 0.2, 0.2])) == 0.0

    def test_all_undefined_delays(self):
        assert select_operating_point(_curve([0.0, 0.0], [np.nan, np.nan])) == 0.0


def test_curve_csv(tmp_path):
    c = sweep([np.zeros(10)], [ANN], [0.0, 0.5])
    write_curve_csv(tmp_path / "c.csv", c)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "threshold,tp,fp,fn,precision,recall,f1,mean_delay_s"
    assert lines[2].endswith(",")  # no TP -> empty delay cell, never 0


def test_trace_csv(tmp_path):
    write_trace_csv(tmp_path / "t.csv", np.linspace(0, 1, 10), ANN, first_frame=19)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "frame,time_s,p_moving,phase_label"
    assert lines[1].startswith("19,0.3800,0.0,waiting")
    assert lines[-1].endswith("moving")
