"""
Type definitions for the msglmb file formats.

All files are JSON or JSON-lines; every record carries ``schema_version``.
Several records use the key ``class`` so they are declared with the
functional ``TypedDict`` syntax.
"""

from __future__ import annotations

from typing import List
from typing import Optional
from typing import TypedDict

SCHEMA_VERSION = 1

NUSCENES_CLASSES = (
    "pedestrian",
    "car",
    "truck",
    "bus",
    "trailer",
    "motorcycle",
    "bicycle",
)

CameraDetectionRecord = TypedDict(
    "CameraDetectionRecord",
    {
        "schema_version": int,
        "frame": int,
        "sensor": str,
        "class": str,
        "score": float,
        "bbox": List[float],
    },
)

LidarDetectionRecord = TypedDict(
    "LidarDetectionRecord",
    {
        "schema_version": int,
        "frame": int,
        "sensor": str,
        "class": str,
        "score": float,
        "center": List[float],
        "size": List[float],
        "yaw": float,
    },
)

TrackRecord = TypedDict(
    "TrackRecord",
    {
        "schema_version": int,
        "frame": int,
        "label": str,
        "class": str,
        "center": List[float],
        "size": List[float],
        "velocity": List[float],
        "existence": float,
    },
)

GroundTruthRecord = TypedDict(
    "GroundTruthRecord",
    {
        "schema_version": int,
        "frame": int,
        "id": str,
        "class": str,
        "center": List[float],
        "size": List[float],
    },
)


class CameraCalibrationRecord(TypedDict):
    """One camera entry of a calibration document."""

    name: str
    projection: List[float]
    width: float
    height: float


class LidarCalibrationRecord(TypedDict, total=False):
    """LiDAR entry of a calibration document."""

    origin: List[float]
    range_m: float


class CalibrationDocument(TypedDict, total=False):
    """Top-level calibration JSON document."""

    schema_version: int
    cameras: List[CameraCalibrationRecord]
    lidar: Optional[LidarCalibrationRecord]


class MetricsRow(TypedDict):
    """One row of the evaluate/ablate CSV output."""

    scope: str
    amota: float
    amotp: float
    mota: float
    motp: float
    recall: float
    ids: int
    tp: int
    fp: int
    fn: int
    mt: int
    ml: int
    gt: int
