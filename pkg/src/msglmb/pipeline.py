"""Glue between simulator, tracker, file formats and metrics."""

from __future__ import annotations

import dataclasses
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Dict
from typing import List
from typing import Mapping
from typing import Sequence

from .config import ScenarioConfig
from .config import TrackerConfig
from .geometry import CameraModel
from .glmb import TrackEstimate
from .metrics import EstimatedBox
from .metrics import EvalFrame
from .metrics import GroundTruthBox
from .metrics import MotSummary
from .metrics import evaluate
from .records import Calibration
from .records import ground_truth_records
from .records import measurement_to_record
from .records import write_calibration
from .records import write_jsonl
from .sensors import LIDAR
from .sensors import SensorFrame
from .simulator import GroundTruth
from .simulator import build_rig
from .simulator import generate_truth
from .simulator import render_detections
from .tracker import MultiClassTracker
from .tracker import track_frames

logger = logging.getLogger(__name__)

DETECTIONS_FILE = "detections.jsonl"
CALIBRATION_FILE = "calibration.json"
GROUND_TRUTH_FILE = "ground_truth.jsonl"


def write_scenario(out_dir: str | Path, cfg: ScenarioConfig) -> Dict[str, Path]:
    """Simulate ``cfg`` and write detections, calibration and ground truth to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rig = build_rig(cfg)
    truth = generate_truth(cfg)
    frames = render_detections(truth, cfg, rig)
    paths = {
        "detections": out / DETECTIONS_FILE,
        "calibration": out / CALIBRATION_FILE,
        "ground_truth": out / GROUND_TRUTH_FILE,
    }
    records = (measurement_to_record(z, f.sensor, k) for k in sorted(frames) for f in frames[k] for z in f.measurements)
    count = write_jsonl(records, paths["detections"])
    write_calibration(Calibration(rig, cfg.lidar_range), paths["calibration"])
    write_jsonl(ground_truth_records(truth), paths["ground_truth"])
    logger.info(f"Wrote {count} detections for {len(truth)} frames to {out}")
    return paths


def truth_eval_frames(truth: GroundTruth, estimates: Mapping[int, Sequence[TrackEstimate]]) -> List[EvalFrame]:
    frames = []
    for k, objects in enumerate(truth.steps):
        gt = [GroundTruthBox(o.gt_id, o.class_name, tuple(o.center), tuple(o.dims)) for o in objects]
        est = [
            EstimatedBox(str(e.label), e.class_id, tuple(e.center), tuple(e.dims), e.existence_prob)
            for e in estimates.get(k, [])
        ]
        frames.append(EvalFrame(gt, est, k))
    return frames


def select_sensors(frames: Mapping[int, Sequence[SensorFrame]], mode: str) -> Dict[int, List[SensorFrame]]:
    """Keep the frames of the sensors used by an ablation mode."""
    keep = {
        "camera-only": lambda f: f.sensor != LIDAR,
        "lidar-only": lambda f: f.sensor == LIDAR,
        "fused": lambda f: True,
    }[mode]
    return {k: [f for f in fs if keep(f)] for k, fs in frames.items()}


@dataclass
class AblationRow:
    mode: str
    seed: int
    summary: MotSummary


def run_ablation(
    tracker_config: TrackerConfig,
    scenario: ScenarioConfig,
    seeds: Sequence[int],
    modes: Sequence[str],
) -> List[AblationRow]:
    """Track the same simulated scenes with each sensor subset and score them."""
    rows = []
    rig = build_rig(scenario)
    tracker_config = Calibration(rig, scenario.lidar_range).configure(tracker_config)
    for seed in seeds:
        cfg = dataclasses.replace(scenario, seed=seed)
        truth = generate_truth(cfg)
        frames = render_detections(truth, cfg, rig)
        for mode in modes:
            cameras: Sequence[CameraModel] = () if mode == "lidar-only" else rig
            tracker = MultiClassTracker(tracker_config, cameras, use_lidar=mode != "camera-only")
            estimates = track_frames(tracker, select_sensors(frames, mode))
            results = evaluate(truth_eval_frames(truth, estimates), tracker_config.metrics.radius, tracker_config.metrics.recall_points)
            logger.info(f"ablation seed={seed} mode={mode}: MOTA {results['overall'].mota:.3f}")
            rows.append(AblationRow(mode, seed, results["overall"]))
    return rows


def median_mota(rows: Sequence[AblationRow]) -> Dict[str, float]:
    by_mode: Dict[str, List[float]] = {}
    for row in rows:
        by_mode.setdefault(row.mode, []).append(row.summary.mota)
    return {mode: statistics.median(values) for mode, values in by_mode.items()}
