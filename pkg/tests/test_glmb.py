from __future__ import annotations

import dataclasses
import itertools
import math
import sys
import unittest
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from msglmb.dynamics import BirthComponent
from msglmb.dynamics import MotionConfig
from msglmb.dynamics import SurvivalConfig
from msglmb.dynamics import build_transition
from msglmb.dynamics import predict_state
from msglmb.errors import DuplicateBirthLabel
from msglmb.errors import EmptyFrameSet
from msglmb.geometry import LN2
from msglmb.geometry import BBox2D
from msglmb.geometry import CameraModel
from msglmb.geometry import GaussianState
from msglmb.geometry import Label
from msglmb.geometry import make_state
from msglmb.geometry import project_ellipsoid
from msglmb.glmb import BirthConfig
from msglmb.glmb import FilterSettings
from msglmb.glmb import GlmbDensity
from msglmb.glmb import GlmbFilter
from msglmb.glmb import Hypothesis
from msglmb.glmb import LabelRegistry
from msglmb.glmb import adaptive_birth
from msglmb.glmb import extract
from msglmb.glmb import k_best_bernoulli
from msglmb.glmb import merge_hypotheses
from msglmb.glmb import predict
from msglmb.glmb import prune
from msglmb.glmb import update
from msglmb.sensors import CameraMeasurement
from msglmb.sensors import CameraNoise
from msglmb.sensors import CameraSensor
from msglmb.sensors import ClutterConfig
from msglmb.sensors import DetectionConfig
from msglmb.sensors import LidarMeasurement
from msglmb.sensors import LidarNoise
from msglmb.sensors import LidarSensor
from msglmb.sensors import camera_clutter_volume
from msglmb.sensors import lidar_clutter_volume

NO_GATE = FilterSettings(gate_probability=1.0)


def track(x: float, y: float = 0.0, variance: float = 1.0) -> GaussianState:
    return GaussianState(make_state((x, y, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)), np.eye(9) * variance)


def box(x: float, y: float = 0.0, zeta=(0.0, 0.0, 0.0)) -> LidarMeasurement:
    return LidarMeasurement((x, y, 0.0), np.asarray(zeta) + LN2, 0.9, "car")


def density(*hypotheses) -> GlmbDensity:
    """Density from ``(weight, {label: gaussian})`` pairs."""
    return GlmbDensity([Hypothesis(tracks, math.log(w)) for w, tracks in hypotheses]).normalized()


def weights_by_key(d: GlmbDensity) -> dict:
    return {h.key: float(w) for h, w in zip(d.hypotheses, d.weights())}


class TestKBestBernoulli(unittest.TestCase):
    """Test best-first enumeration of independent binary outcomes."""

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(0.05, 0.95, 6)
        log_on, log_off = np.log(p), np.log1p(-p)
        brute = sorted(
            (
                sum(log_on[i] if m[i] else log_off[i] for i in range(6))
                for m in itertools.product([False, True], repeat=6)
            ),
            reverse=True,
        )
        found = list(k_best_bernoulli(list(log_on), list(log_off), 20))
        self.assertEqual(len(found), 20)
        self.assertEqual(len({mask for mask, _ in found}), 20)
        assert_allclose([lp for _, lp in found], brute[:20], atol=1e-12)
        for mask, lp in found:
            self.assertAlmostEqual(lp, sum(log_on[i] if mask[i] else log_off[i] for i in range(6)), places=12)

    def test_fixed_choices(self):
        found = list(k_best_bernoulli([0.0, math.log(0.3)], [-math.inf, math.log(0.7)], 10))
        self.assertEqual([mask for mask, _ in found], [(True, False), (True, True)])

    def test_impossible_choice(self):
        self.assertEqual(list(k_best_bernoulli([-math.inf], [-math.inf], 5)), [])


class TestPredict(unittest.TestCase):
    """Test GLMB prediction."""

    def setUp(self):
        self.motion = MotionConfig()
        self.certain = SurvivalConfig(p_s_base=1.0, p_s_outside=1.0)

    def test_certain_survival(self):
        prior = density((0.7, {Label(0, 0): track(1.0)}), (0.3, {Label(0, 0): track(1.0), Label(0, 1): track(5.0)}))
        out = predict(prior, [], self.motion, self.certain)
        self.assertEqual(weights_by_key(out).keys(), weights_by_key(prior).keys())
        for key, w in weights_by_key(prior).items():
            self.assertAlmostEqual(weights_by_key(out)[key], w, places=12)
        expected = predict_state(track(1.0), build_transition(self.motion))
        assert_allclose(out.hypotheses[0].tracks[Label(0, 0)].mean, expected.mean)
        assert_allclose(out.hypotheses[0].tracks[Label(0, 0)].covariance, expected.covariance)

    def test_single_birth(self):
        birth = BirthComponent(Label(1, 0), 0.03, track(0.0))
        out = predict(GlmbDensity.empty(), [birth], self.motion, self.certain)
        got = weights_by_key(out)
        self.assertAlmostEqual(got[()], 0.97)
        self.assertAlmostEqual(got[(Label(1, 0),)], 0.03)

    def test_certain_death(self):
        prior = density((1.0, {Label(0, 0): track(1.0)}))
        birth = BirthComponent(Label(1, 0), 0.5, track(0.0))
        out = predict(prior, [birth], self.motion, SurvivalConfig(p_s_base=0.0, p_s_outside=0.0))
        self.assertEqual(set(weights_by_key(out)), {(), (Label(1, 0),)})

    def test_duplicate_birth_label(self):
        prior = density((1.0, {Label(0, 0): track(1.0)}))
        with self.assertRaises(DuplicateBirthLabel):
            predict(prior, [BirthComponent(Label(0, 0), 0.1, track(0.0))], self.motion, self.certain)

    def test_cap(self):
        births = [BirthComponent(Label(1, i), 0.3, track(float(i))) for i in range(8)]
        out = predict(GlmbDensity.empty(), births, self.motion, SurvivalConfig(), cap=40)
        self.assertLessEqual(len(out.hypotheses), 40)
        self.assertAlmostEqual(float(out.weights().sum()), 1.0, places=9)
        self.assertEqual(len({h.key for h in out.hypotheses}), len(out.hypotheses))


class TestUpdate(unittest.TestCase):
    """Test the joint update."""

    def setUp(self):
        self.sensor = LidarSensor(
            LidarNoise((1.0, 1.0, 1.0), (0.1, 0.1, 0.1)),
            ClutterConfig(0.5, 50.0),
            DetectionConfig(p_d_lidar=0.8, lidar_range=1e6),
        )
        self.labels = [Label(0, i) for i in range(3)]
        tracks = {label: track(0.2 * i) for i, label in enumerate(self.labels)}
        self.prior = density((0.6, tracks), (0.4, {k: tracks[k] for k in self.labels[:2]}))
        self.frame = [box(0.1), box(0.25), box(0.35)]

    def test_requires_sensor(self):
        with self.assertRaises(EmptyFrameSet):
            update(self.prior, [], {"lidar": []})

    def test_no_reporting_sensor(self):
        self.assertIs(update(self.prior, [self.sensor], {}), self.prior)

    def test_empty_frame_preserves_ranking(self):
        a, b = Label(0, 0), Label(0, 1)
        prior = density((0.6, {a: track(0.0)}), (0.4, {b: track(3.0)}))
        out = update(prior, [self.sensor], {"lidar": []}, NO_GATE)
        assert_allclose(out.weights(), prior.weights(), atol=1e-12)
        self.assertEqual([h.key for h in out.hypotheses], [h.key for h in prior.hypotheses])
        self.assertIs(out.hypotheses[0].tracks[a], prior.hypotheses[0].tracks[a])

    def test_normalized(self):
        out = update(self.prior, [self.sensor], {"lidar": self.frame}, NO_GATE)
        self.assertAlmostEqual(float(out.weights().sum()), 1.0, places=9)
        self.assertEqual(len(out.association_mass["lidar"]), 3)

    def test_gibbs_matches_enumeration(self):
        enumerate_settings = dataclasses.replace(NO_GATE, association_mode="enumerate")
        exact = update(self.prior, [self.sensor], {"lidar": self.frame}, enumerate_settings)
        sampled = update(
            self.prior,
            [self.sensor],
            {"lidar": self.frame},
            dataclasses.replace(NO_GATE, association_mode="gibbs", gibbs_iterations=1000),
        )
        a, b = weights_by_key(exact), weights_by_key(sampled)
        self.assertEqual(a.keys(), b.keys())
        self.assertLessEqual(0.5 * sum(abs(a[k] - b[k]) for k in a), 1e-6)
        for ha, hb in zip(exact.hypotheses, sampled.hypotheses):
            for label in ha.tracks:
                assert_allclose(ha.tracks[label].mean, hb.tracks[label].mean, atol=1e-6)

    @pytest.mark.slow
    def test_gibbs_matches_enumeration_with_cameras(self):
        """Random instances with two cameras and the LiDAR, up to three tracks and three detections per sensor."""
        cameras = [CameraModel.from_heading("CAM_A", 0.0, 70.0), CameraModel.from_heading("CAM_B", 20.0, 70.0)]
        detection = DetectionConfig(p_d_camera=0.8, p_d_lidar=0.8, lidar_range=1e6)
        sensors = [
            CameraSensor(c, CameraNoise(), ClutterConfig(2.0, camera_clutter_volume(c)), detection) for c in cameras
        ]
        sensors.append(self.sensor)
        enumerate_settings = dataclasses.replace(NO_GATE, association_mode="enumerate")
        gibbs_settings = dataclasses.replace(NO_GATE, association_mode="gibbs", gibbs_iterations=1000)
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            labels = [Label(0, i) for i in range(int(rng.integers(1, 4)))]
            tracks = {label: track(rng.uniform(8.0, 14.0), rng.uniform(-2.0, 2.0), 0.5) for label in labels}
            prior = density((0.7, tracks), (0.3, {k: tracks[k] for k in labels[:-1]}))
            frames = {}
            for c, camera in enumerate(cameras):
                detections = []
                for _ in range(int(rng.integers(0, 4))):
                    g = tracks[labels[int(rng.integers(len(labels)))]]
                    bbox = project_ellipsoid(camera, g.mean[[0, 2, 4]], g.mean[6:])
                    vector = bbox.vector + rng.normal(0.0, (15.0, 15.0, 0.05, 0.05))
                    detections.append(CameraMeasurement(BBox2D(vector[:2], vector[2:]), 0.9, "car", c))
                frames[camera.name] = detections
            n_boxes = int(rng.integers(0, 4))
            centers = [tracks[labels[int(rng.integers(len(labels)))]].mean[[0, 2]] for _ in range(n_boxes)]
            frames["lidar"] = [box(x + rng.normal(0.0, 0.5), y + rng.normal(0.0, 0.5)) for x, y in centers]
            exact = weights_by_key(update(prior, sensors, frames, enumerate_settings))
            sampled = weights_by_key(update(prior, sensors, frames, gibbs_settings))
            self.assertEqual(exact.keys(), sampled.keys())
            worst = max(worst, 0.5 * sum(abs(exact[k] - sampled[k]) for k in exact))
        self.assertLessEqual(worst, 1e-6)

    def test_measurement_order_invariance(self):
        settings = dataclasses.replace(NO_GATE, association_mode="enumerate")
        a = update(self.prior, [self.sensor], {"lidar": self.frame}, settings)
        b = update(self.prior, [self.sensor], {"lidar": self.frame[::-1]}, settings)
        wa, wb = weights_by_key(a), weights_by_key(b)
        for key in wa:
            self.assertAlmostEqual(wa[key], wb[key], places=9)
        assert_allclose(a.association_mass["lidar"], b.association_mass["lidar"][::-1], atol=1e-9)

    def test_evidence_raises_existence(self):
        label = Label(0, 0)
        prior = density((0.5, {}), (0.5, {label: track(0.0)}))
        without = update(prior, [self.sensor], {"lidar": []}, NO_GATE).existence_probabilities()[label]
        with_z = update(prior, [self.sensor], {"lidar": [box(0.0)]}, NO_GATE).existence_probabilities()[label]
        self.assertGreaterEqual(with_z, without)

    def test_single_target_matches_kalman_filter(self):
        rng = np.random.default_rng(8)
        motion = MotionConfig()
        transition = build_transition(motion)
        noise = LidarNoise((0.5, 0.5, 0.5), (0.01, 0.01, 0.01))
        sensor = LidarSensor(noise, ClutterConfig(0.0, 1.0), DetectionConfig(p_d_lidar=1.0, lidar_range=1e6))
        survival = SurvivalConfig(p_s_base=1.0, p_s_outside=1.0)
        label = Label(0, 0)
        x0 = make_state((2.0, -1.0, 0.0), (1.0, 0.5, 0.0), (0.5, 0.8, 0.2))
        P0 = np.diag([1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 0.1, 0.1, 0.1])
        d = GlmbDensity([Hypothesis({label: GaussianState(x0, P0)}, 0.0)])
        H = np.zeros((6, 9))
        H[[0, 1, 2, 3, 4, 5], [0, 2, 4, 6, 7, 8]] = 1.0
        offset = np.array([0, 0, 0, LN2, LN2, LN2])
        R = np.diag(noise.variances)
        x, P = x0.copy(), P0.copy()
        truth = x0.copy()
        for _ in range(50):
            truth = transition.F @ truth + transition.b
            z = H @ truth + offset + rng.normal(size=6) * np.sqrt(noise.variances)
            measurement = LidarMeasurement(z[:3], z[3:], 0.9, "car")
            d = predict(d, [], motion, survival, transition=transition)
            d = update(d, [sensor], {"lidar": [measurement]}, NO_GATE)
            x = transition.F @ x + transition.b
            P = transition.F @ P @ transition.F.T + transition.Q
            S = H @ P @ H.T + R
            K = P @ H.T @ np.linalg.inv(S)
            x = x + K @ (z - H @ x - offset)
            P = (np.eye(9) - K @ H) @ P
        self.assertEqual(len(d.hypotheses), 1)
        g = d.hypotheses[0].tracks[label]
        assert_allclose(g.mean, x, atol=1e-9)
        assert_allclose(g.covariance, 0.5 * (P + P.T), atol=1e-9)


class TestBirth(unittest.TestCase):
    """Test measurement-driven birth."""

    def setUp(self):
        self.config = BirthConfig(r_b_max=0.03, expected_births=1.0)
        self.noise = LidarNoise()

    def test_unassociated_and_associated(self):
        births = adaptive_birth([box(0.0), box(5.0)], np.array([0.0, 1.0]), self.config, self.noise, 4, LabelRegistry())
        self.assertAlmostEqual(births[0].r_b, 0.03)
        self.assertEqual(births[1].r_b, 0.0)
        self.assertEqual([b.label for b in births], [Label(4, 0), Label(4, 1)])

    def test_shape_from_dims(self):
        z = LidarMeasurement((1, 2, 3), np.log([1.8, 4.6, 1.7]), 0.9, "car")
        birth = adaptive_birth([z], None, self.config, self.noise, 1, LabelRegistry())[0]
        assert_allclose(birth.p_b.shape, np.log([0.9, 2.3, 0.85]), atol=1e-12)
        assert_allclose(birth.p_b.position, [1, 2, 3])
        assert_allclose(birth.p_b.velocity, [0, 0, 0])

    def test_total_births_bounded(self):
        frame = [box(float(i)) for i in range(100)]
        births = adaptive_birth(frame, None, self.config, self.noise, 1, LabelRegistry())
        self.assertAlmostEqual(sum(b.r_b for b in births), 1.0)

    def test_registry_never_reissues(self):
        registry = LabelRegistry()
        first = adaptive_birth([box(0.0)], None, self.config, self.noise, 1, registry)
        second = adaptive_birth([box(0.0)], None, self.config, self.noise, 1, registry)
        self.assertNotEqual(first[0].label, second[0].label)


class TestPruneAndExtract(unittest.TestCase):
    """Test truncation and estimate extraction."""

    def setUp(self):
        self.l1, self.l2, self.l3 = Label(0, 1), Label(0, 2), Label(0, 3)

    def test_prune_floor(self):
        d = density((0.6, {self.l1: track(0)}), (0.39, {self.l2: track(0)}), (0.01, {self.l3: track(0)}))
        out = prune(d, weight_floor=0.02, max_hypotheses=10)
        assert_allclose(out.weights(), [0.6 / 0.99, 0.39 / 0.99])

    def test_prune_cap(self):
        d = density((0.6, {self.l1: track(0)}), (0.39, {self.l2: track(0)}), (0.01, {self.l3: track(0)}))
        out = prune(d, weight_floor=0.0, max_hypotheses=1)
        self.assertEqual(out.hypotheses[0].key, (self.l1,))
        assert_allclose(out.weights(), [1.0])

    def test_prune_never_empty(self):
        d = density((0.5, {self.l1: track(0)}), (0.5, {self.l2: track(0)}))
        out = prune(d, weight_floor=0.9, max_hypotheses=10)
        self.assertEqual(len(out.hypotheses), 1)
        self.assertEqual(out.hypotheses[0].key, (self.l1,))

    def test_extract_map_cardinality(self):
        d = density((0.7, {self.l1: track(0)}), (0.3, {self.l1: track(0), self.l2: track(4)}))
        estimates = extract(d)
        self.assertEqual([e.label for e in estimates], [self.l1])
        self.assertAlmostEqual(estimates[0].existence_prob, 1.0)

    def test_extract_dims(self):
        estimates = extract(density((1.0, {self.l1: track(3.0)})))
        assert_allclose(estimates[0].dims, [2.0, 2.0, 2.0])
        assert_allclose(estimates[0].center, [3.0, 0.0, 0.0])

    def test_extract_empty(self):
        self.assertEqual(extract(GlmbDensity.empty()), [])

    def test_merge_equal_label_sets(self):
        a = Hypothesis({self.l1: track(0.0)}, math.log(0.5))
        b = Hypothesis({self.l1: track(2.0)}, math.log(0.5))
        merged = merge_hypotheses([a, b])
        self.assertEqual(len(merged), 1)
        self.assertAlmostEqual(merged[0].log_weight, 0.0)
        self.assertAlmostEqual(merged[0].tracks[self.l1].position[0], 1.0)


class TestGlmbFilter(unittest.TestCase):
    """Test the per-class recursion end to end."""

    def setUp(self):
        survival = SurvivalConfig()
        clutter = ClutterConfig(5.0, lidar_clutter_volume(survival.bounds))
        noise = LidarNoise()
        sensor = LidarSensor(noise, clutter, DetectionConfig())
        self.filter = GlmbFilter("car", [sensor], MotionConfig(), survival, BirthConfig(), FilterSettings(), noise)

    def test_requires_sensor(self):
        with self.assertRaises(EmptyFrameSet):
            GlmbFilter("car", [], MotionConfig(), SurvivalConfig(), BirthConfig(), FilterSettings(), LidarNoise())

    def test_confirms_and_coasts(self):
        for k in range(6):
            estimates = self.filter.step({"lidar": [box(10.0, 5.0)]}, k)
        self.assertEqual(len(estimates), 1)
        label = estimates[0].label
        assert_allclose(estimates[0].center, [10.0, 5.0, 0.0], atol=0.5)
        self.assertGreater(estimates[0].existence_prob, 0.9)
        for k in range(6, 8):
            estimates = self.filter.step(None, k)
        self.assertEqual([e.label for e in estimates], [label])
        self.assertAlmostEqual(float(self.filter.density.weights().sum()), 1.0, places=9)

    def test_labels_unique(self):
        issued = []
        for k in range(5):
            self.filter.step({"lidar": [box(10.0, 5.0), box(-20.0, 3.0 * k)]}, k)
            issued.extend(b.label for b in self.filter.births)
            for h in self.filter.density.hypotheses:
                self.assertEqual(len(h.key), len(set(h.key)))
        self.assertEqual(len(issued), len(set(issued)))
        self.assertGreater(self.filter.stats.steps, 0)


class TestRandomCycles(unittest.TestCase):
    """Density invariants over many random predict, update and prune cycles."""

    def assert_valid(self, d: GlmbDensity) -> None:
        self.assertAlmostEqual(float(d.weights().sum()), 1.0, delta=1e-9)
        keys = [h.key for h in d.hypotheses]
        self.assertEqual(len(keys), len(set(keys)))
        for h in d.hypotheses:
            for g in h.tracks.values():
                assert_allclose(g.covariance, g.covariance.T, atol=1e-12)
                eigenvalues = np.linalg.eigvalsh(g.covariance)
                self.assertGreaterEqual(float(eigenvalues[0]), -1e-9 * max(1.0, float(eigenvalues[-1])))

    @pytest.mark.slow
    def test_cycle_invariants(self):
        motion = MotionConfig()
        survival = SurvivalConfig()
        transition = build_transition(motion)
        sensor = LidarSensor(
            LidarNoise((1.0, 1.0, 1.0), (0.1, 0.1, 0.1)),
            ClutterConfig(1.0, 1000.0),
            DetectionConfig(p_d_lidar=0.9, lidar_range=1e6),
        )
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            registry = LabelRegistry()
            labels = [registry.issue(0) for _ in range(int(rng.integers(0, 4)))]
            tracks = {label: track(*rng.uniform(-10.0, 10.0, 2), rng.uniform(0.1, 2.0)) for label in labels}
            masks = {tuple(rng.random(len(labels)) < 0.6) for _ in range(3)}
            prior = density(
                *((rng.uniform(0.1, 1.0), {k: tracks[k] for k, keep in zip(labels, mask) if keep}) for mask in masks)
            )
            births = [
                BirthComponent(registry.issue(1), float(rng.uniform(0.0, 0.5)), track(rng.uniform(-10.0, 10.0)))
                for _ in range(int(rng.integers(0, 3)))
            ]
            predicted = predict(prior, births, motion, survival, cap=30, transition=transition)
            self.assert_valid(predicted)
            frame = [box(rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)) for _ in range(int(rng.integers(0, 4)))]
            settings = FilterSettings(gibbs_iterations=50, seed=seed)
            updated = update(predicted, [sensor], {"lidar": frame}, settings, step=1)
            self.assert_valid(updated)
            mass = updated.association_mass["lidar"]
            self.assertTrue(np.all((mass >= 0.0) & (mass <= 1.0)))
            pruned = prune(updated, 1e-4, 20)
            self.assert_valid(pruned)
            self.assertLessEqual(len(pruned.hypotheses), 20)
            estimates = extract(pruned)
            self.assertEqual(len({e.label for e in estimates}), len(estimates))


if __name__ == "__main__":
    unittest.main()
