from __future__ import annotations

import sys
import tempfile
import unittest
from pathlib import Path

from numpy.testing import assert_allclose

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from msglmb import MultiClassTracker
from msglmb import TrackerConfig
from msglmb import create_tracker
from msglmb.errors import ParseError
from msglmb.geometry import LN2
from msglmb.geometry import CameraModel
from msglmb.sensors import LIDAR
from msglmb.sensors import LidarMeasurement
from msglmb.sensors import SensorFrame
from msglmb.tracker import track_frames


def box(x: float, y: float, class_id: str = "car", score: float = 0.9) -> LidarMeasurement:
    return LidarMeasurement((x, y, 0.0), (LN2 + 0.2, LN2 + 0.8, LN2 - 0.2), score, class_id)


class TestRouting(unittest.TestCase):
    """Test score gating and class routing."""

    def setUp(self):
        self.tracker = MultiClassTracker(TrackerConfig())

    def test_gate_and_split(self):
        frame = SensorFrame(LIDAR, [box(1, 1), box(2, 2, "pedestrian"), box(3, 3, score=0.3)])
        routed = self.tracker.route([frame])
        self.assertEqual(sorted(routed), ["car", "pedestrian"])
        self.assertEqual(len(routed["car"][LIDAR]), 1)
        self.assertEqual(len(routed["pedestrian"][LIDAR]), 1)

    def test_unknown_sensor_ignored(self):
        with self.assertLogs("msglmb.tracker", level="WARNING"):
            routed = self.tracker.route([SensorFrame("CAM_X", [box(1, 1)])])
        self.assertEqual(routed, {})

    def test_existing_filters_get_empty_frames(self):
        self.tracker.step([SensorFrame(LIDAR, [box(1, 1, "bicycle")])], 0)
        routed = self.tracker.route([SensorFrame(LIDAR, [box(1, 1, "motorcycle")])])
        self.assertEqual(routed["bicycle"], {LIDAR: []})
        self.assertEqual(len(routed["motorcycle"][LIDAR]), 1)

    def test_needs_a_sensor(self):
        with self.assertRaises(ParseError):
            MultiClassTracker(TrackerConfig(), (), use_lidar=False)


class TestMultiClassTracker(unittest.TestCase):
    """Test per-class filters running side by side."""

    def test_identical_streams_evolve_identically(self):
        tracker = MultiClassTracker(TrackerConfig())
        for k in range(6):
            frame = SensorFrame(LIDAR, [box(10.0, 0.5 * k, "car"), box(10.0, 0.5 * k, "truck")])
            estimates = tracker.step([frame], k)
        cars = [e for e in estimates if e.class_id == "car"]
        trucks = [e for e in estimates if e.class_id == "truck"]
        self.assertEqual(len(cars), 1)
        self.assertEqual([e.label for e in cars], [e.label for e in trucks])
        for c, t in zip(cars, trucks):
            assert_allclose(c.center, t.center)
            self.assertEqual(c.existence_prob, t.existence_prob)
        car, truck = tracker.densities["car"], tracker.densities["truck"]
        assert_allclose(car.weights(), truck.weights())

    def test_cross_class_isolation(self):
        tracker = MultiClassTracker(TrackerConfig())
        for k in range(4):
            tracker.step([SensorFrame(LIDAR, [box(5.0, 5.0, "bicycle")])], k)
        reference = MultiClassTracker(TrackerConfig())
        for k in range(4):
            reference.step([SensorFrame(LIDAR, [box(5.0, 5.0, "bicycle")])], k)
        tracker.step([SensorFrame(LIDAR, [box(5.0, 5.0, "motorcycle")])], 4)
        reference.step([SensorFrame(LIDAR, [])], 4)
        ours = tracker.densities["bicycle"]
        theirs = reference.densities["bicycle"]
        self.assertEqual([h.key for h in ours.hypotheses], [h.key for h in theirs.hypotheses])
        assert_allclose(ours.weights(), theirs.weights())

    def test_coasting_without_frames(self):
        tracker = MultiClassTracker(TrackerConfig())
        for k in range(5):
            estimates = tracker.step([SensorFrame(LIDAR, [box(-8.0, 3.0)])], k)
        label = estimates[0].label
        coasted = tracker.step([], 5)
        self.assertEqual([e.label for e in coasted], [label])

    def test_stats(self):
        tracker = MultiClassTracker(TrackerConfig())
        frames = {k: [SensorFrame(LIDAR, [box(1.0, 2.0), box(4.0, 4.0, "pedestrian")])] for k in range(3)}
        track_frames(tracker, frames)
        stats = tracker.get_stats()
        self.assertEqual(stats["classes"], ["car", "pedestrian"])
        self.assertEqual(stats["steps"], 6)
        self.assertGreater(stats["hypotheses_predicted"], 0)
        self.assertIn("uptime_seconds", stats)
        tracker.close()
        self.assertEqual(tracker.get_stats()["steps"], 6)
        self.assertEqual(tracker.get_stats()["classes"], [])

    def test_context_manager(self):
        with MultiClassTracker(TrackerConfig()) as tracker:
            tracker.step([SensorFrame(LIDAR, [box(1.0, 2.0)])], 0)
            self.assertEqual(len(tracker.filters), 1)
        self.assertEqual(len(tracker.filters), 0)

    def test_camera_only_tracker(self):
        camera = CameraModel.from_heading("CAM_FRONT", 0.0, 70.0)
        tracker = MultiClassTracker(TrackerConfig(), [camera], use_lidar=False)
        self.assertEqual(tracker.sensor_names, ("CAM_FRONT",))
        self.assertEqual(tracker.step([SensorFrame(LIDAR, [box(1.0, 2.0)])], 0), [])


class TestCreateTracker(unittest.TestCase):
    """Test the tracker factory."""

    def test_default(self):
        tracker = create_tracker()
        self.assertIsInstance(tracker, MultiClassTracker)
        self.assertTrue(tracker.use_lidar)

    def test_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.yaml"
            path.write_text("tracker:\n  score_gate: 0.6\n")
            tracker = create_tracker(path)
        self.assertEqual(tracker.config.score_gate, 0.6)

    def test_bad_file_falls_back(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.yaml"
            path.write_text("tracker:\n  bogus: 1\n")
            with self.assertLogs("msglmb.tracker", level="ERROR"):
                tracker = create_tracker(path)
        self.assertEqual(tracker.config.score_gate, TrackerConfig().score_gate)


if __name__ == "__main__":
    unittest.main()
