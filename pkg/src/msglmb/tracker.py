from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict
from typing import List
from typing import Mapping
from typing import Sequence

from .config import TrackerConfig
from .errors import ParseError
from .geometry import CameraModel
from .glmb import FilterStats
from .glmb import GlmbDensity
from .glmb import GlmbFilter
from .glmb import TrackEstimate
from .sensors import LIDAR
from .sensors import CameraSensor
from .sensors import ClutterConfig
from .sensors import Measurement
from .sensors import LidarSensor
from .sensors import SensorFrame
from .sensors import SensorModel
from .sensors import camera_clutter_volume
from .sensors import gate_by_score
from .sensors import lidar_clutter_volume

logger = logging.getLogger(__name__)


class MultiClassTracker:
    """
    Runs one independent labeled filter per object class.

    Detections are score-gated and routed by class; a class's filter is
    created the first time it sees a detection and then advances every step.
    """

    def __init__(
        self,
        config: TrackerConfig | None = None,
        cameras: Sequence[CameraModel] = (),
        *,
        use_lidar: bool = True,
    ):
        self.config = config or TrackerConfig()
        self.cameras = tuple(cameras)
        self.use_lidar = use_lidar
        if not self.cameras and not self.use_lidar:
            raise ParseError("tracker needs at least one camera or the LiDAR")
        self.sensor_names = tuple(c.name for c in self.cameras) + ((LIDAR,) if use_lidar else ())
        self.filters: Dict[str, GlmbFilter] = {}
        self._closed_stats = FilterStats()

    def _create_sensors(self, class_id: str) -> List[SensorModel]:
        """Sensor models for one class, cameras in rig order then the LiDAR."""
        params = self.config.classes[class_id]
        detection = self.config.detection
        sensors: List[SensorModel] = []
        for camera in self.cameras:
            clutter = ClutterConfig(self.config.clutter.camera, camera_clutter_volume(camera))
            sensors.append(CameraSensor(camera, params.camera_noise, clutter, detection))
        if self.use_lidar:
            clutter = ClutterConfig(self.config.clutter.lidar, lidar_clutter_volume(self.config.survival.bounds))
            sensors.append(LidarSensor(params.lidar_noise, clutter, detection))
        return sensors

    def _create_filter(self, class_id: str) -> GlmbFilter:
        logger.info(f"Initializing filter for class {class_id!r} with sensors {list(self.sensor_names)}")
        params = self.config.classes[class_id]
        return GlmbFilter(
            class_id,
            self._create_sensors(class_id),
            self.config.motion,
            self.config.survival,
            self.config.birth,
            self.config.filter,
            params.lidar_noise,
            params.default_size,
        )

    def route(self, frames: Sequence[SensorFrame]) -> Dict[str, Dict[str, List[Measurement]]]:
        """
        Score-gate detections and split them by class.

        Every known sensor that reported appears for every class, possibly
        with an empty list.
        """
        reporting = [f for f in frames if f.sensor in self.sensor_names]
        for frame in frames:
            if frame.sensor not in self.sensor_names:
                logger.warning(f"Ignoring detections from unconfigured sensor {frame.sensor!r}")
        routed: Dict[str, Dict[str, List[Measurement]]] = {}
        classes = {z.class_id for f in reporting for z in gate_by_score(f.measurements, self.config.score_gate)}
        for class_id in sorted(classes | set(self.filters)):
            routed[class_id] = {f.sensor: [] for f in reporting}
        for frame in reporting:
            for z in gate_by_score(frame.measurements, self.config.score_gate):
                routed[z.class_id][frame.sensor].append(z)
        return routed

    def step(self, frames: Sequence[SensorFrame], step: int) -> List[TrackEstimate]:
        """Advance every class filter by one step and return all class estimates."""
        routed = self.route(frames)
        estimates: List[TrackEstimate] = []
        for class_id in sorted(routed):
            if class_id not in self.filters:
                if not any(routed[class_id].values()):
                    continue
                self.filters[class_id] = self._create_filter(class_id)
        for class_id in sorted(self.filters):
            estimates.extend(self.filters[class_id].step(routed.get(class_id), step))
        return estimates

    @property
    def densities(self) -> Mapping[str, GlmbDensity]:
        return {class_id: f.density for class_id, f in self.filters.items()}

    def get_stats(self) -> dict:
        """Workload counters summed over class filters."""
        total = FilterStats(start_time=self._closed_stats.start_time)
        total.merge(self._closed_stats)
        for f in self.filters.values():
            total.merge(f.stats)
        stats = total.to_dict()
        stats["classes"] = sorted(self.filters)
        return stats

    def close(self) -> None:
        """Drop all filter state."""
        for f in self.filters.values():
            self._closed_stats.merge(f.stats)
        self.filters.clear()
        logger.info("Tracker closed")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def create_tracker(
    config_file: str | Path | None = None,
    cameras: Sequence[CameraModel] = (),
    *,
    use_lidar: bool = True,
) -> MultiClassTracker:
    """
    Factory function to create a tracker with configuration.

    Args:
        config_file: Optional path to configuration file
        cameras: Calibrated cameras in rig order
        use_lidar: Whether the LiDAR takes part

    Returns:
        Configured MultiClassTracker instance
    """
    try:
        config = TrackerConfig.load(config_file)
    except (ParseError, FileNotFoundError, ImportError) as e:
        logger.error(f"Failed to load tracker configuration: {e}")
        logger.info("Using default tracker configuration")
        config = TrackerConfig()
    return MultiClassTracker(config, cameras, use_lidar=use_lidar)


def track_frames(
    tracker: MultiClassTracker,
    frames_by_step: Mapping[int, Sequence[SensorFrame]],
) -> Dict[int, List[TrackEstimate]]:
    """Run ``tracker`` over frames ordered by step index."""
    out: Dict[int, List[TrackEstimate]] = {}
    for step in sorted(frames_by_step):
        out[step] = tracker.step(frames_by_step[step], step)
    return out
