"""
Synthetic scenarios: ground-truth trajectories, a camera rig and noisy
detections with misses and Poisson clutter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np

from .config import ScenarioConfig
from .dynamics import sample_transition
from .dynamics import transition_matrices
from .errors import DegenerateConic
from .errors import PointBehindCamera
from .geometry import BBox2D
from .geometry import Bounds
from .geometry import CameraModel
from .geometry import make_state
from .geometry import nuscenes_rig
from .geometry import project_ellipsoid
from .geometry import project_point
from .geometry import state_position
from .geometry import state_shape
from .geometry import state_velocity
from .sensors import CAMERA_MIN_EXTENT
from .sensors import LIDAR
from .sensors import LIDAR_LOG_DIMS_RANGE
from .sensors import CameraMeasurement
from .sensors import LidarMeasurement
from .sensors import SensorFrame

logger = logging.getLogger(__name__)

DEFAULT_SIZES = {
    "pedestrian": (0.7, 0.7, 1.8),
    "car": (1.9, 4.6, 1.7),
    "truck": (2.5, 7.0, 3.0),
    "bus": (2.9, 11.0, 3.5),
    "trailer": (2.5, 10.0, 3.8),
    "motorcycle": (0.8, 2.1, 1.5),
    "bicycle": (0.6, 1.7, 1.3),
}


@dataclass(frozen=True, eq=False)
class TruthObject:
    """State of one ground-truth object at one step."""

    gt_id: str
    class_name: str
    state: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return state_position(self.state)

    @property
    def dims(self) -> np.ndarray:
        return 2.0 * np.exp(state_shape(self.state))

    @property
    def velocity(self) -> np.ndarray:
        return state_velocity(self.state)


@dataclass
class GroundTruth:
    """Per-step lists of live objects."""

    steps: List[List[TruthObject]]

    def __len__(self) -> int:
        return len(self.steps)

    def object_ids(self) -> List[str]:
        return sorted({o.gt_id for step in self.steps for o in step})


def build_rig(cfg: ScenarioConfig) -> Tuple[CameraModel, ...]:
    if cfg.rig == "nuscenes-rig":
        return nuscenes_rig()
    if cfg.rig == "front":
        return (CameraModel.from_heading("CAM_FRONT", 0.0, 70.0),)
    return ()


def _initial_state(rng: np.random.Generator, cfg: ScenarioConfig, class_name: str, bounds: Bounds) -> np.ndarray:
    lower = np.array(bounds.lower)
    upper = np.array(bounds.upper)
    margin = np.array([5.0, 5.0, 0.0])
    while True:
        xy = rng.uniform(lower[:2] + margin[:2], upper[:2] - margin[:2])
        if np.linalg.norm(xy) >= cfg.min_range:
            break
    dims = np.array(DEFAULT_SIZES[class_name])
    z = dims[2] / 2.0
    heading = rng.uniform(0.0, 2.0 * math.pi)
    speed = rng.uniform(0.0, cfg.max_speed)
    velocity = (speed * math.cos(heading), speed * math.sin(heading), 0.0)
    return make_state((xy[0], xy[1], z), velocity, np.log(dims / 2.0))


def generate_truth(cfg: ScenarioConfig) -> GroundTruth:
    """
    Ground-truth trajectories; deterministic for a given ``cfg``.

    Objects are born at random steps in the first ``birth_window`` of the
    scenario and die when they leave the scene bounds. The ``matched``
    model samples the tracker's kinematic noise; ``constant-velocity``
    moves without noise. Box sizes stay fixed over an object's life.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    bounds = Bounds(cfg.scene_lower, cfg.scene_upper)
    transition = transition_matrices(cfg.interval, cfg.nu_zeta, cfg.nu_rho)
    last_birth = int(cfg.birth_window * (cfg.duration_steps - 1))
    births: Dict[int, List[Tuple[str, str, np.ndarray]]] = {}
    for index in range(cfg.n_objects):
        class_name = cfg.classes[int(rng.integers(len(cfg.classes)))]
        step = int(rng.integers(0, last_birth + 1))
        births.setdefault(step, []).append((f"gt{index:04d}", class_name, _initial_state(rng, cfg, class_name, bounds)))
    steps: List[List[TruthObject]] = []
    alive: List[TruthObject] = []
    for k in range(cfg.duration_steps):
        alive = alive + [TruthObject(gt_id, name, state) for gt_id, name, state in births.get(k, [])]
        steps.append(list(alive))
        moved = []
        for obj in alive:
            if cfg.truth_model == "matched":
                state = sample_transition(rng, obj.state, transition)
                state[6:] = obj.state[6:]
            else:
                state = transition.F @ obj.state
                state[6:] = obj.state[6:]
            if bounds.contains(state_position(state)):
                moved.append(TruthObject(obj.gt_id, obj.class_name, state))
        alive = moved
    logger.info(f"Generated {cfg.n_objects} objects over {cfg.duration_steps} steps")
    return GroundTruth(steps)


def _camera_frame(
    rng: np.random.Generator,
    camera: CameraModel,
    index: int,
    objects: Sequence[TruthObject],
    cfg: ScenarioConfig,
    frame: int,
) -> SensorFrame:
    noise = np.sqrt(np.array(cfg.camera_nu_p + cfg.camera_nu_e))
    measurements = []
    for obj in objects:
        try:
            box = project_ellipsoid(camera, obj.center, state_shape(obj.state))
            if not camera.contains(project_point(camera, obj.center)):
                continue
        except (PointBehindCamera, DegenerateConic):
            continue
        if rng.random() >= cfg.p_d_camera:
            continue
        vector = box.vector + noise * rng.standard_normal(4)
        measurements.append(
            CameraMeasurement(BBox2D(vector[:2], vector[2:]), float(rng.uniform(0.5, 1.0)), obj.class_name, index)
        )
    for _ in range(int(rng.poisson(cfg.clutter_rate_camera))):
        center = rng.uniform((0.0, 0.0), (camera.image_width, camera.image_height))
        log_extent = rng.uniform(
            (math.log(CAMERA_MIN_EXTENT), math.log(CAMERA_MIN_EXTENT)),
            (math.log(camera.image_width), math.log(camera.image_height)),
        )
        class_name = cfg.classes[int(rng.integers(len(cfg.classes)))]
        measurements.append(CameraMeasurement(BBox2D(center, log_extent), float(rng.uniform(0.3, 0.8)), class_name, index))
    return SensorFrame(camera.name, tuple(measurements), frame)


def _lidar_frame(rng: np.random.Generator, objects: Sequence[TruthObject], cfg: ScenarioConfig, frame: int) -> SensorFrame:
    bounds = Bounds(cfg.scene_lower, cfg.scene_upper)
    noise = np.sqrt(np.array(cfg.lidar_nu_p + cfg.lidar_nu_e))
    measurements = []
    for obj in objects:
        if np.linalg.norm(obj.center) > cfg.lidar_range or rng.random() >= cfg.p_d_lidar:
            continue
        vector = np.concatenate([obj.center, np.log(obj.dims)]) + noise * rng.standard_normal(6)
        measurements.append(LidarMeasurement(vector[:3], vector[3:], float(rng.uniform(0.5, 1.0)), obj.class_name))
    for _ in range(int(rng.poisson(cfg.clutter_rate_lidar))):
        center = bounds.sample(rng)
        log_dims = rng.uniform(LIDAR_LOG_DIMS_RANGE[0], LIDAR_LOG_DIMS_RANGE[1], 3)
        class_name = cfg.classes[int(rng.integers(len(cfg.classes)))]
        measurements.append(LidarMeasurement(center, log_dims, float(rng.uniform(0.3, 0.8)), class_name))
    return SensorFrame(LIDAR, tuple(measurements), frame)


def render_detections(
    truth: GroundTruth,
    cfg: ScenarioConfig,
    rig: Sequence[CameraModel] = (),
    seed: int | None = None,
) -> Dict[int, List[SensorFrame]]:
    """
    Per-step sensor frames: every camera of ``rig`` then the LiDAR.

    A camera only detects objects whose centre projects inside its image.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed if seed is None else seed, 1]))
    frames: Dict[int, List[SensorFrame]] = {}
    for k, objects in enumerate(truth.steps):
        step_frames = [_camera_frame(rng, camera, c, objects, cfg, k) for c, camera in enumerate(rig)]
        step_frames.append(_lidar_frame(rng, objects, cfg, k))
        frames[k] = step_frames
    return frames
