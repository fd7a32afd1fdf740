"""
File formats: JSON-lines detections, tracks and ground truth, plus a JSON
calibration document. Every record carries ``schema_version``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from dataclasses import replace
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Iterable
from typing import Iterator
from typing import List
from typing import Mapping
from typing import Sequence
from typing import Tuple

import numpy as np

from .config import TrackerConfig
from .errors import ParseError
from .errors import SchemaVersionMismatch
from .geometry import BBox2D
from .geometry import CameraModel
from .glmb import TrackEstimate
from .metrics import EstimatedBox
from .metrics import EvalFrame
from .metrics import GroundTruthBox
from .sensors import LIDAR
from .sensors import CameraMeasurement
from .sensors import LidarMeasurement
from .sensors import Measurement
from .sensors import SensorFrame
from .types import NUSCENES_CLASSES
from .types import SCHEMA_VERSION
from .types import CalibrationDocument
from .types import GroundTruthRecord
from .types import TrackRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Calibration:
    """Cameras in rig order and optional LiDAR settings."""

    cameras: Tuple[CameraModel, ...] = ()
    lidar_range: float | None = 50.0
    lidar_origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def has_lidar(self) -> bool:
        return self.lidar_range is not None

    def camera_index(self, name: str) -> int | None:
        for index, camera in enumerate(self.cameras):
            if camera.name == name:
                return index
        return None

    def configure(self, config: TrackerConfig) -> TrackerConfig:
        """``config`` with this calibration's LiDAR range and origin."""
        if self.lidar_range is None:
            return config
        detection = replace(config.detection, lidar_range=self.lidar_range, lidar_origin=self.lidar_origin)
        return replace(config, detection=detection)


def _dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def read_jsonl(path: str | Path) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield ``(line_number, record)``; blank lines are skipped."""
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=number) from exc
            if not isinstance(record, dict):
                raise ParseError("record must be a JSON object", path=str(path), line=number)
            _check_schema(record, str(path), number)
            yield number, record


def write_jsonl(records: Iterable[Mapping[str, Any]], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(_dumps(record) + "\n")
            count += 1
    return count


def _check_schema(record: Mapping[str, Any], path: str | None, line: int | None) -> None:
    if "schema_version" not in record:
        raise ParseError("missing schema_version", path=path, line=line, field="schema_version")
    if record["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"schema_version {record['schema_version']!r} is not supported (expected {SCHEMA_VERSION})",
            path=path,
            line=line,
            field="schema_version",
        )


def _field(record: Mapping[str, Any], name: str, where: Dict[str, Any]) -> Any:
    if name not in record:
        raise ParseError("missing field", field=name, **where)
    return record[name]


def _vector(record: Mapping[str, Any], name: str, size: int, where: Dict[str, Any], *, positive: bool = False) -> List[float]:
    value = _field(record, name, where)
    if not isinstance(value, list) or len(value) != size:
        raise ParseError(f"expected a list of {size} numbers", field=name, **where)
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"expected a list of {size} numbers", field=name, **where) from exc
    if not all(math.isfinite(v) for v in out) or (positive and any(v <= 0.0 for v in out)):
        raise ParseError(f"values must be finite{' and positive' if positive else ''}", field=name, **where)
    return out


def validate_detection(record: Mapping[str, Any], *, path: str | None = None, line: int | None = None) -> Dict[str, Any]:
    """Check one detection record and return it unchanged."""
    where: Dict[str, Any] = {"path": path, "line": line}
    _check_schema(record, path, line)
    frame = _field(record, "frame", where)
    if not isinstance(frame, int) or isinstance(frame, bool) or frame < 0:
        raise ParseError("frame must be a non-negative integer", field="frame", **where)
    sensor = _field(record, "sensor", where)
    if not isinstance(sensor, str) or not sensor:
        raise ParseError("sensor must be a non-empty string", field="sensor", **where)
    class_name = _field(record, "class", where)
    if class_name not in NUSCENES_CLASSES:
        raise ParseError(f"unknown class {class_name!r}", field="class", **where)
    score = _field(record, "score", where)
    if not isinstance(score, (int, float)) or not 0.0 <= float(score) <= 1.0:
        raise ParseError("score must lie in [0, 1]", field="score", **where)
    if sensor == LIDAR:
        _vector(record, "center", 3, where)
        _vector(record, "size", 3, where, positive=True)
        yaw = record.get("yaw", 0.0)
        if not isinstance(yaw, (int, float)) or not math.isfinite(yaw):
            raise ParseError("yaw must be a finite number", field="yaw", **where)
    else:
        x1, y1, x2, y2 = _vector(record, "bbox", 4, where)
        if x2 <= x1 or y2 <= y1:
            raise ParseError("bbox must satisfy x2 > x1 and y2 > y1", field="bbox", **where)
    return dict(record)


def read_detection_records(path: str | Path) -> List[Dict[str, Any]]:
    """Validated detection records in file order; frames must not decrease."""
    records = []
    last_frame = -1
    for line, record in read_jsonl(path):
        record = validate_detection(record, path=str(path), line=line)
        if record["frame"] < last_frame:
            raise ParseError("frame indices must be non-decreasing", path=str(path), line=line, field="frame")
        last_frame = record["frame"]
        records.append(record)
    return records


def measurement_to_record(z: Measurement, sensor: str, frame: int) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "frame": int(frame),
        "sensor": sensor,
        "class": z.class_id,
        "score": float(z.score),
    }
    if isinstance(z, LidarMeasurement):
        record["center"] = [float(v) for v in z.center]
        record["size"] = [float(v) for v in z.dims]
        record["yaw"] = float(z.yaw)
    else:
        record["bbox"] = [float(v) for v in z.bbox.corners()]
    return record


def record_to_measurement(record: Mapping[str, Any], camera_index: int = 0) -> Measurement:
    if record["sensor"] == LIDAR:
        return LidarMeasurement(
            np.array(record["center"], dtype=float),
            np.log(np.array(record["size"], dtype=float)),
            float(record["score"]),
            record["class"],
            float(record.get("yaw", 0.0)),
        )
    return CameraMeasurement(BBox2D.from_corners(*record["bbox"]), float(record["score"]), record["class"], camera_index)


def read_calibration(path: str | Path) -> Calibration:
    """
    Load a calibration document.

    Camera projections are 12 numbers in row-major order; a nested 3x4 list
    is accepted too. ``lidar.range_m`` defaults to 50 and a missing
    ``schema_version`` is read as the current one.
    """
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from exc
    if not isinstance(document, dict):
        raise ParseError("calibration must be a JSON object", path=str(path))
    if "schema_version" in document:
        _check_schema(document, str(path), None)
    cameras = []
    for index, entry in enumerate(document.get("cameras") or []):
        where = f"cameras[{index}]"
        try:
            projection = np.array(entry["projection"], dtype=float).reshape(3, 4)
            cameras.append(CameraModel(entry["name"], projection, entry["width"], entry["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid camera entry: {exc}", path=str(path), field=where) from exc
    if len({c.name for c in cameras}) != len(cameras):
        raise ParseError("camera names must be unique", path=str(path), field="cameras")
    lidar = document.get("lidar")
    if lidar is None:
        return Calibration(tuple(cameras), None)
    try:
        origin = tuple(float(v) for v in lidar.get("origin", (0.0, 0.0, 0.0)))
        lidar_range = float(lidar.get("range_m", 50.0))
    except (AttributeError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid lidar entry: {exc}", path=str(path), field="lidar") from exc
    return Calibration(tuple(cameras), lidar_range, origin)


def write_calibration(calibration: Calibration, path: str | Path) -> None:
    document: CalibrationDocument = {
        "schema_version": SCHEMA_VERSION,
        "cameras": [
            {
                "name": c.name,
                "projection": [float(v) for v in c.projection.ravel()],
                "width": c.image_width,
                "height": c.image_height,
            }
            for c in calibration.cameras
        ],
        "lidar": None
        if calibration.lidar_range is None
        else {"origin": list(calibration.lidar_origin), "range_m": calibration.lidar_range},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def ingest(detections_path: str | Path, calibration: Calibration | str | Path) -> Dict[int, List[SensorFrame]]:
    """
    Group detection records into per-frame sensor frames.

    ``calibration`` is a loaded :class:`Calibration` or the path of one.

    Every calibrated sensor gets a frame (possibly empty) for every index from
    0 to the last frame; records from uncalibrated sensors are skipped.
    """
    if not isinstance(calibration, Calibration):
        calibration = read_calibration(calibration)
    records = read_detection_records(detections_path)
    sensors = [c.name for c in calibration.cameras] + ([LIDAR] if calibration.has_lidar else [])
    last = max((r["frame"] for r in records), default=-1)
    grouped: Dict[int, Dict[str, List[Measurement]]] = {k: {s: [] for s in sensors} for k in range(last + 1)}
    skipped = set()
    for record in records:
        sensor = record["sensor"]
        if sensor not in sensors:
            skipped.add(sensor)
            continue
        index = calibration.camera_index(sensor) or 0
        grouped[record["frame"]][sensor].append(record_to_measurement(record, index))
    for sensor in sorted(skipped):
        logger.warning(f"Skipping detections from sensor {sensor!r}: not in calibration")
    return {k: [SensorFrame(s, tuple(zs), k) for s, zs in by_sensor.items()] for k, by_sensor in grouped.items()}


def track_record(estimate: TrackEstimate, frame: int) -> TrackRecord:
    return TrackRecord(
        {
            "schema_version": SCHEMA_VERSION,
            "frame": int(frame),
            "label": str(estimate.label),
            "class": estimate.class_id,
            "center": [float(v) for v in estimate.center],
            "size": [float(v) for v in estimate.dims],
            "velocity": [float(v) for v in estimate.velocity],
            "existence": float(estimate.existence_prob),
        }
    )


def emit_tracks(estimates_by_frame: Mapping[int, Sequence[TrackEstimate]], path: str | Path) -> int:
    """Write one track record per estimate, frames ascending, labels ascending."""
    records = (
        track_record(estimate, frame)
        for frame in sorted(estimates_by_frame)
        for estimate in sorted(estimates_by_frame[frame], key=lambda e: (e.class_id, e.label))
    )
    return write_jsonl(records, path)


def read_tracks(path: str | Path) -> List[TrackRecord]:
    out = []
    for line, record in read_jsonl(path):
        where: Dict[str, Any] = {"path": str(path), "line": line}
        for name in ("frame", "label", "class", "existence"):
            _field(record, name, where)
        if record["class"] not in NUSCENES_CLASSES:
            raise ParseError(f"unknown class {record['class']!r}", field="class", **where)
        _vector(record, "center", 3, where)
        _vector(record, "size", 3, where, positive=True)
        _vector(record, "velocity", 3, where)
        out.append(record)
    return out


def ground_truth_records(truth: Any) -> Iterator[GroundTruthRecord]:
    """Records for a :class:`~msglmb.simulator.GroundTruth`."""
    for frame, objects in enumerate(truth.steps):
        for obj in sorted(objects, key=lambda o: o.gt_id):
            yield GroundTruthRecord(
                {
                    "schema_version": SCHEMA_VERSION,
                    "frame": frame,
                    "id": obj.gt_id,
                    "class": obj.class_name,
                    "center": [float(v) for v in obj.center],
                    "size": [float(v) for v in obj.dims],
                }
            )


def read_ground_truth(path: str | Path) -> List[GroundTruthRecord]:
    out = []
    for line, record in read_jsonl(path):
        where: Dict[str, Any] = {"path": str(path), "line": line}
        for name in ("frame", "id", "class"):
            _field(record, name, where)
        if record["class"] not in NUSCENES_CLASSES:
            raise ParseError(f"unknown class {record['class']!r}", field="class", **where)
        _vector(record, "center", 3, where)
        _vector(record, "size", 3, where, positive=True)
        out.append(record)
    return out


def eval_frames(gt_records: Sequence[Mapping[str, Any]], track_records: Sequence[Mapping[str, Any]]) -> List[EvalFrame]:
    """Pair ground truth and track records frame by frame; track existence is the confidence."""
    last = max([r["frame"] for r in gt_records] + [r["frame"] for r in track_records], default=-1)
    frames = [EvalFrame(frame=k) for k in range(last + 1)]
    for r in gt_records:
        frames[r["frame"]].gt.append(GroundTruthBox(str(r["id"]), r["class"], tuple(r["center"]), tuple(r["size"])))
    for r in track_records:
        frames[r["frame"]].est.append(
            EstimatedBox(str(r["label"]), r["class"], tuple(r["center"]), tuple(r["size"]), float(r["existence"]))
        )
    for frame in frames:
        frame.__post_init__()
    return frames
