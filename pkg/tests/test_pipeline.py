from __future__ import annotations

import csv
import hashlib
import io
import json
import sys
import tempfile
import unittest
from contextlib import redirect_stderr
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from msglmb.cli import EXIT_OK
from msglmb.cli import EXIT_PARSE_ERROR
from msglmb.cli import EXIT_RUNTIME_ERROR
from msglmb.cli import main
from msglmb.config import AblationConfig
from msglmb.config import ScenarioConfig
from msglmb.config import load_document
from msglmb.geometry import Label
from msglmb.glmb import TrackEstimate
from msglmb.metrics import MotSummary
from msglmb.pipeline import AblationRow
from msglmb.pipeline import median_mota
from msglmb.pipeline import select_sensors
from msglmb.pipeline import truth_eval_frames
from msglmb.pipeline import write_scenario
from msglmb.records import read_tracks
from msglmb.sensors import LIDAR
from msglmb.sensors import SensorFrame
from msglmb.simulator import generate_truth

FIXTURES = Path(__file__).parent / "fixtures"
SMOKE = str(FIXTURES / "smoke.yaml")
ABLATION_PRESET = str(Path(__file__).parent.parent / "configs" / "ablation.yaml")


def run(*argv: str) -> tuple:
    """Run the CLI, returning ``(exit code, stdout, stderr)``."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestCommandLine(unittest.TestCase):
    """Test the simulate -> track -> evaluate workflow."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def simulate(self, name: str = "scene") -> Path:
        code, _, err = run("simulate", "--config", SMOKE, "--out", str(self.dir / name))
        self.assertEqual(code, EXIT_OK, err)
        return self.dir / name

    def track(self, scene: Path, name: str = "tracks.jsonl") -> Path:
        out = self.dir / name
        code, _, err = run(
            "track",
            "--config",
            SMOKE,
            "--detections",
            str(scene / "detections.jsonl"),
            "--calib",
            str(scene / "calibration.json"),
            "--out",
            str(out),
        )
        self.assertEqual(code, EXIT_OK, err)
        return out

    def test_simulate_is_deterministic(self):
        a = self.simulate("a")
        b = self.simulate("b")
        for name in ("detections.jsonl", "calibration.json", "ground_truth.jsonl"):
            self.assertEqual(digest(a / name), digest(b / name))

    def test_simulate_seed_override(self):
        a = self.simulate("a")
        code, _, _ = run("simulate", "--config", SMOKE, "--seed", "99", "--out", str(self.dir / "b"))
        self.assertEqual(code, EXIT_OK)
        self.assertNotEqual(digest(a / "detections.jsonl"), digest(self.dir / "b" / "detections.jsonl"))

    def test_end_to_end(self):
        scene = self.simulate()
        tracks = self.track(scene)
        again = self.track(scene, "again.jsonl")
        self.assertEqual(digest(tracks), digest(again))
        records = read_tracks(tracks)
        self.assertTrue(records)
        for record in records:
            self.assertGreaterEqual(record["existence"], 0.0)
            self.assertLessEqual(record["existence"], 1.0)

        metrics = self.dir / "metrics.json"
        plots = self.dir / "plots"
        code, stdout, err = run(
            "evaluate",
            "--gt",
            str(scene / "ground_truth.jsonl"),
            "--tracks",
            str(tracks),
            "--out",
            str(metrics),
            "--format",
            "json",
            "--emit-plots",
            str(plots),
        )
        self.assertEqual(code, EXIT_OK, err)
        self.assertIn("overall", stdout)
        rows = {row["scope"]: row for row in json.loads(metrics.read_text())}
        self.assertIn("overall", rows)
        self.assertLessEqual(rows["overall"]["mota"], rows["overall"]["recall"])
        self.assertTrue((plots / "metrics_by_class.csv").exists())

    def test_track_fixture(self):
        out = self.dir / "tracks.jsonl"
        plots = self.dir / "plots"
        code, stdout, err = run(
            "track",
            "--detections",
            str(FIXTURES / "detections.jsonl"),
            "--calib",
            str(FIXTURES / "calibration.json"),
            "--out",
            str(out),
            "--emit-plots",
            str(plots),
        )
        self.assertEqual(code, EXIT_OK, err)
        self.assertIn("6 frames", stdout)
        records = read_tracks(out)
        last = [r for r in records if r["frame"] == 5 and r["class"] == "car"]
        self.assertEqual(len(last), 1)
        np.testing.assert_allclose(last[0]["center"][:2], (12.5, 0.0), atol=1.5)
        with open(plots / "cardinality.csv", newline="") as f:
            self.assertEqual(len(list(csv.DictReader(f))), 6)

    def test_track_with_row_major_calibration(self):
        calib = self.dir / "calibration.json"
        projection = [800.0, -1142.518, 0.0, 0.0, 450.0, 0.0, -1142.518, 1713.777, 1.0, 0.0, 0.0, 0.0]
        document = {"cameras": [{"name": "CAM_FRONT", "projection": projection, "width": 1600, "height": 900}]}
        calib.write_text(json.dumps({**document, "lidar": {"range_m": 5.0}}))
        out = self.dir / "tracks.jsonl"
        detections = str(FIXTURES / "detections.jsonl")
        code, stdout, err = run("track", "--detections", detections, "--calib", str(calib), "--out", str(out))
        self.assertEqual(code, EXIT_OK, err)
        self.assertIn("6 frames", stdout)

    def test_track_without_detections(self):
        detections = self.dir / "empty.jsonl"
        detections.write_text("")
        out = self.dir / "tracks.jsonl"
        calib = str(FIXTURES / "calibration.json")
        code, _, err = run("track", "--detections", str(detections), "--calib", calib, "--out", str(out))
        self.assertEqual(code, EXIT_OK, err)
        self.assertEqual(out.read_text(), "")
        self.assertEqual(read_tracks(out), [])

    def test_evaluate_table(self):
        scene = self.simulate()
        tracks = self.track(scene)
        table = self.dir / "metrics.txt"
        gt = str(scene / "ground_truth.jsonl")
        code, _, _ = run("evaluate", "--gt", gt, "--tracks", str(tracks), "--out", str(table), "--format", "table")
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(table.read_text().startswith("scope"))

    def test_config_show(self):
        code, stdout, _ = run("config", "show", "--config", SMOKE, "--format", "json")
        self.assertEqual(code, EXIT_OK)
        document = json.loads(stdout)
        self.assertEqual(document["tracker"]["filter"]["max_hypotheses"], 20)
        self.assertEqual(document["scenario"]["n_objects"], 3)

    def test_bad_class_is_parse_error(self):
        path = self.dir / "detections.jsonl"
        record = {"schema_version": 1, "frame": 0, "sensor": LIDAR, "class": "boat", "score": 0.9}
        path.write_text(json.dumps({**record, "center": [0, 0, 0], "size": [1, 1, 1]}) + "\n")
        calib = str(FIXTURES / "calibration.json")
        code, _, err = run("track", "--detections", str(path), "--calib", calib, "--out", str(self.dir / "t.jsonl"))
        self.assertEqual(code, EXIT_PARSE_ERROR)
        self.assertIn("boat", err)

    def test_bad_arguments(self):
        self.assertEqual(run("track", "--out", "x")[0], EXIT_PARSE_ERROR)
        self.assertEqual(run("nonsense")[0], EXIT_PARSE_ERROR)

    def test_bad_config_key(self):
        path = self.dir / "config.yaml"
        path.write_text("tracker:\n  bogus: 1\n")
        code, _, err = run("config", "show", "--config", str(path))
        self.assertEqual(code, EXIT_PARSE_ERROR)
        self.assertIn("tracker.bogus", err)

    def test_missing_file_is_runtime_error(self):
        code, _, _ = run(
            "track",
            "--detections",
            str(self.dir / "missing.jsonl"),
            "--calib",
            str(FIXTURES / "calibration.json"),
            "--out",
            str(self.dir / "t.jsonl"),
        )
        self.assertEqual(code, EXIT_RUNTIME_ERROR)

    @pytest.mark.slow
    def test_ablate(self):
        out = self.dir / "ablation"
        code, stdout, err = run("ablate", "--config", SMOKE, "--out", str(out))
        self.assertEqual(code, EXIT_OK, err)
        with open(out / "ablation.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(sorted(r["mode"] for r in rows), ["fused", "lidar-only"])
        with open(out / "summary.csv", newline="") as f:
            summary = {r["mode"]: float(r["median_mota"]) for r in csv.DictReader(f)}
        self.assertEqual(sorted(summary), ["fused", "lidar-only"])
        self.assertIn("median MOTA", stdout)

    @pytest.mark.slow
    def test_fusion_beats_cameras(self):
        document = load_document(ABLATION_PRESET)
        scenario = ScenarioConfig.from_dict(document)
        self.assertEqual((scenario.n_objects, scenario.duration_steps, scenario.rig), (10, 100, "nuscenes-rig"))
        self.assertEqual((scenario.clutter_rate_camera, scenario.clutter_rate_lidar), (5.0, 5.0))
        self.assertEqual(AblationConfig.from_dict(document).seeds, (0, 1, 2, 3, 4))
        out = self.dir / "ablation"
        code, _, err = run("ablate", "--config", ABLATION_PRESET, "--mode", "camera-only", "--mode", "fused", "--out", str(out))
        self.assertEqual(code, EXIT_OK, err)
        with open(out / "summary.csv", newline="") as f:
            medians = {r["mode"]: float(r["median_mota"]) for r in csv.DictReader(f)}
        self.assertGreaterEqual(medians["fused"], 0.6)
        self.assertGreaterEqual(medians["fused"] - medians["camera-only"], 0.2)


class TestPipelineHelpers(unittest.TestCase):
    """Test the glue between simulator, tracker and metrics."""

    def test_select_sensors(self):
        frames = {0: [SensorFrame("CAM_FRONT"), SensorFrame(LIDAR)]}
        self.assertEqual([f.sensor for f in select_sensors(frames, "camera-only")[0]], ["CAM_FRONT"])
        self.assertEqual([f.sensor for f in select_sensors(frames, "lidar-only")[0]], [LIDAR])
        self.assertEqual(len(select_sensors(frames, "fused")[0]), 2)

    def test_median_mota(self):
        def summary(mota: float) -> MotSummary:
            return MotSummary(*(float("nan"),) * 2, mota, 0.0, 1.0, 0, 1, 0, 0, 1, 0, 1)

        rows = [AblationRow("fused", s, summary(m)) for s, m in enumerate((0.2, 0.9, 0.5))]
        self.assertEqual(median_mota(rows), {"fused": 0.5})

    def test_truth_eval_frames(self):
        cfg = ScenarioConfig(n_objects=2, duration_steps=4, rig="none", birth_window=0.0)
        truth = generate_truth(cfg)
        first = truth.steps[0][0]
        estimate = TrackEstimate(Label(0, 0), first.class_name, first.center, first.dims, first.velocity, 0.8)
        frames = truth_eval_frames(truth, {0: [estimate]})
        self.assertEqual(len(frames), 4)
        self.assertEqual(len(frames[0].gt), 2)
        self.assertEqual(frames[0].est[0].confidence, 0.8)
        self.assertEqual(frames[1].est, [])

    def test_write_scenario(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_scenario(Path(tmp) / "nested" / "out", ScenarioConfig(n_objects=1, duration_steps=3, rig="front"))
            self.assertEqual(sorted(paths), ["calibration", "detections", "ground_truth"])
            self.assertTrue(all(p.exists() for p in paths.values()))


if __name__ == "__main__":
    unittest.main()
