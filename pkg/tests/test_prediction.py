from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtp.evaluation import min_ade
from mtp.experiments import CROSSING_CONFIG, CROSSING_SUITE
from mtp.geometry import Box3D, center_distance_2d
from mtp.pipeline import pooled_predictions
from mtp.prediction import (ConstantVelocityPredictor, PredictionSet, TrajectorySample, fit_velocity,
                            kmeanspp_sample, pool_predictions, predict_cv)
from mtp.scenario import Detection, synth_crossing
from mtp.tracker import PipelineConfig, initial_hypothesis, run_tracking, step_single


def tracklet_from_xs(xs, y=0.0):
    cfg = PipelineConfig(meas_pos_var=1e-9, init_pos_var=1e-9)
    h = initial_hypothesis()
    for f, x in enumerate(xs):
        h = step_single(h, [Detection(f, 0, Box3D(x, y, 0.75, 4, 1.8, 1.5))], cfg, frame=f)
    return h.live[0]


def traj(key, points, src=None):
    return TrajectorySample(key, np.asarray(points, dtype=float), src)


class TestTrajectorySample:
    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            traj("a", [1.0, 2.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            traj("a", [[0.0, np.inf]])

    def test_waypoints_read_only(self):
        s = traj("a", [[0.0, 1.0]])
        with pytest.raises(ValueError):
            s.waypoints[0, 0] = 3.0

    def test_batch(self):
        out = TrajectorySample.batch("a", np.zeros((3, 4, 2)), 7)
        assert len(out) == 3 and all(s.horizon == 4 and s.source_hypothesis == 7 for s in out)

    def test_empty_object_rejected(self):
        with pytest.raises(ValueError):
            PredictionSet(0, {"a": []})


class TestPredictCV:
    def test_stationary_zero_noise(self):
        t = tracklet_from_xs([5.0] * 5)
        out = predict_cv(t, horizon=4, k=3, rng_seed=0, sigma_speed=0.0, sigma_heading=0.0)
        for s in out:
            np.testing.assert_allclose(s.waypoints, [[5.0, 0.0]] * 4, atol=1e-6)

    def test_unit_velocity_sample0(self):
        t = tracklet_from_xs([0.0, 1.0, 2.0, 3.0, 4.0])
        s0 = predict_cv(t, horizon=3, k=5, rng_seed=0)[0]
        x = t.state.position[0]
        np.testing.assert_allclose(s0.waypoints, [[x + 1, 0], [x + 2, 0], [x + 3, 0]], atol=1e-6)

    def test_sample0_ignores_seed(self):
        t = tracklet_from_xs([0.0, 0.8, 1.7, 2.4])
        a = predict_cv(t, 6, 4, rng_seed=1)
        b = predict_cv(t, 6, 4, rng_seed=2)
        assert np.array_equal(a[0].waypoints, b[0].waypoints)
        assert not np.array_equal(a[1].waypoints, b[1].waypoints)

    def test_same_seed_same_samples(self):
        t = tracklet_from_xs([0.0, 0.8, 1.7, 2.4])
        a = predict_cv(t, 6, 4, rng_seed=3)
        b = predict_cv(t, 6, 4, rng_seed=3)
        assert all(np.array_equal(x.waypoints, y.waypoints) for x, y in zip(a, b))

    @pytest.mark.parametrize("horizon, k", [(0, 3), (3, 0)])
    def test_rejects_zero(self, horizon, k):
        with pytest.raises(ValueError):
            predict_cv(tracklet_from_xs([0.0, 1.0]), horizon, k, 0)

    def test_fit_velocity_least_squares(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(6, 2))
        t = np.arange(6.0)
        expected = np.linalg.lstsq(np.stack([t, np.ones(6)], 1), pts, rcond=None)[0][0]
        np.testing.assert_allclose(fit_velocity(pts), expected, atol=1e-12)

    def test_single_position_uses_given_velocity(self):
        out = ConstantVelocityPredictor().predict(np.array([[1.0, 1.0]]), 2, 1, 0, velocity=np.array([0.5, 0.0]))
        np.testing.assert_allclose(out[0], [[1.5, 1.0], [2.0, 1.0]])


class TestPooling:
    def make(self, frame, objects, src):
        p = PredictionSet(frame)
        for key in objects:
            p.add(key, [traj(key, [[src, i]]) for i in range(10)], None)
        return p

    def test_single_input_unchanged(self):
        p = self.make(0, ["a", "b"], 0)
        out = pool_predictions([p])
        assert {k: len(v) for k, v in out.samples.items()} == {"a": 10, "b": 10}

    def test_ten_hypotheses_hundred_samples(self):
        out = pool_predictions([self.make(0, ["a"], h) for h in range(10)])
        assert len(out.samples["a"]) == 100

    def test_partial_presence(self):
        sets = [self.make(0, ["a"] if h < 3 else ["b"], h) for h in range(10)]
        out = pool_predictions(sets)
        assert len(out.samples["a"]) == 30 and len(out.samples["b"]) == 70

    def test_mismatched_frames(self):
        with pytest.raises(ValueError):
            pool_predictions([self.make(0, ["a"], 0), self.make(1, ["a"], 0)])


class TestKMeansPP:
    def test_identical_samples(self):
        s = [traj("a", [[1, 2], [3, 4]])] * 7
        out = kmeanspp_sample(s, 4, 0)
        assert len(out) == 4 and all(np.array_equal(o.waypoints, s[0].waypoints) for o in out)

    def test_k_equals_distinct_returns_input_set(self):
        s = [traj("a", [[i, 0.0]]) for i in range(5)]
        out = kmeanspp_sample(s + s, 5, 0)
        assert sorted(o.waypoints[0, 0] for o in out) == [0, 1, 2, 3, 4]

    def test_two_clusters_found(self):
        rng = np.random.default_rng(0)
        s = [traj("a", rng.normal(c, 0.01, size=(3, 2))) for c in (0.0, 10.0) for _ in range(20)]
        out = kmeanspp_sample(s, 2, 1)
        centers = sorted(float(o.waypoints.mean()) for o in out)
        assert centers == pytest.approx([0.0, 10.0], abs=0.02)

    def test_rejects_empty_and_zero(self):
        with pytest.raises(ValueError):
            kmeanspp_sample([], 3, 0)
        with pytest.raises(ValueError):
            kmeanspp_sample([traj("a", [[0, 0]])], 0, 0)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        s = [traj("a", rng.normal(size=(4, 2))) for _ in range(50)]
        a = kmeanspp_sample(s, 6, 9)
        b = kmeanspp_sample(s, 6, 9)
        assert all(np.array_equal(x.waypoints, y.waypoints) for x, y in zip(a, b))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 12), st.integers(1, 6), st.integers(0, 2**31))
    def test_output_shape(self, n, k, horizon, seed):
        rng = np.random.default_rng(seed)
        s = [traj("a", rng.normal(size=(horizon, 2))) for _ in range(n)]
        out = kmeanspp_sample(s, k, seed)
        assert len(out) == k and all(o.waypoints.shape == (horizon, 2) for o in out)

    def test_diversity_beats_random_subset(self):
        # pooled multi-hypothesis predictions right after an ambiguous crossing;
        # paired comparison over 100 seeds, bootstrapped
        cfg = replace(CROSSING_CONFIG, n_hypotheses=20)
        frame = 18
        centroid, subset = [], []
        for seed in range(100):
            sc = synth_crossing(replace(CROSSING_SUITE, frames=36, cross_frame=14), seed)
            hyps = run_tracking(sc.detections[:frame + 1], cfg)[-1]
            pooled = pooled_predictions(hyps, sc.detections[frame], frame, cfg)
            key = min(pooled.samples)
            anchor = pooled.anchors[key]
            gt = min(sc.gt, key=lambda g: center_distance_2d(g.box_at(frame), anchor))
            future = gt.positions(range(frame + 1, frame + 1 + cfg.horizon))
            pool = pooled.samples[key]
            rng = np.random.default_rng(seed)
            centroid.append(min_ade(kmeanspp_sample(pool, cfg.n_samples, seed), future))
            picks = rng.choice(len(pool), cfg.n_samples, replace=False)
            subset.append(min_ade([pool[i] for i in picks], future))
        centroid, subset = np.array(centroid), np.array(subset)
        idx = np.random.default_rng(0).integers(0, 100, size=(2000, 100))
        assert np.mean(centroid[idx].mean(axis=1) <= subset[idx].mean(axis=1)) >= 0.95


def test_pooling_over_more_hypotheses_never_hurts():
    cfg = replace(CROSSING_CONFIG, n_hypotheses=20)
    frame = 18
    for seed in range(5):
        sc = synth_crossing(replace(CROSSING_SUITE, frames=36, cross_frame=14), seed)
        hyps = run_tracking(sc.detections[:frame + 1], cfg)[-1]
        gt = {g.gt_id: g.positions(range(frame + 1, frame + 1 + cfg.horizon)) for g in sc.gt}
        previous = {}
        for h in range(1, len(hyps) + 1):
            pooled = pooled_predictions(hyps[:h], sc.detections[frame], frame, cfg)
            for key, samples in pooled.samples.items():
                for gt_id, future in gt.items():
                    value = min_ade(samples, future)
                    assert value <= previous.get((key, gt_id), np.inf)
                    previous[(key, gt_id)] = value
