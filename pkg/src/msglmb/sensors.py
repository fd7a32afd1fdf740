"""
Sensor measurement models for cameras and LiDAR.

Camera measurements are image boxes ``(u, v, log w, log h)``; LiDAR measurements
are 3D boxes ``(center, log dims)``. Both use diagonal Gaussian likelihoods in
those coordinates. ``SensorModel`` bundles a model with its noise, detection
and clutter settings for one object class.
"""

from __future__ import annotations

import logging
import math
from abc import ABC
from abc import abstractmethod
from dataclasses import dataclass
from typing import NamedTuple
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np

from .errors import PointBehindCamera
from .geometry import LN2
from .geometry import POSITION_INDEX
from .geometry import SHAPE_INDEX
from .geometry import STATE_DIM
from .geometry import BBox2D
from .geometry import Bounds
from .geometry import CameraModel
from .geometry import GaussianState
from .geometry import project_ellipsoid
from .geometry import project_ellipsoids
from .geometry import project_point
from .geometry import state_position
from .geometry import state_shape
from .geometry import state_to_lidar_box
from .types import NUSCENES_CLASSES

logger = logging.getLogger(__name__)

KAPPA_FLOOR = 1e-12
JACOBIAN_STEP = 1e-5
CAMERA_MIN_EXTENT = 4.0
LIDAR_LOG_DIMS_RANGE = (math.log(0.2), math.log(20.0))
LIDAR = "lidar"


def _check_class(class_id: str) -> str:
    if class_id not in NUSCENES_CLASSES:
        raise ValueError(f"unknown object class {class_id!r}")
    return class_id


@dataclass(frozen=True, eq=False)
class LidarMeasurement:
    """3D box detection."""

    center: np.ndarray
    log_dims: np.ndarray
    score: float
    class_id: str
    yaw: float = 0.0

    def __post_init__(self) -> None:
        center = np.array(self.center, dtype=float).reshape(-1)
        log_dims = np.array(self.log_dims, dtype=float).reshape(-1)
        if center.shape != (3,) or log_dims.shape != (3,):
            raise ValueError("LiDAR measurement needs a 3-vector centre and 3-vector log dims")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        _check_class(self.class_id)
        center.setflags(write=False)
        log_dims.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "log_dims", log_dims)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.center, self.log_dims])

    @property
    def dims(self) -> np.ndarray:
        return np.exp(self.log_dims)


@dataclass(frozen=True, eq=False)
class CameraMeasurement:
    """Image box detection from camera ``camera``."""

    bbox: BBox2D
    score: float
    class_id: str
    camera: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        _check_class(self.class_id)

    @property
    def vector(self) -> np.ndarray:
        return self.bbox.vector


Measurement = Union[LidarMeasurement, CameraMeasurement]


@dataclass(frozen=True, eq=False)
class SensorFrame:
    """Detections reported by one sensor at one frame."""

    sensor: str
    measurements: Tuple[Measurement, ...] = ()
    frame: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "measurements", tuple(self.measurements))

    def __len__(self) -> int:
        return len(self.measurements)

    def gated(self, threshold: float) -> SensorFrame:
        return SensorFrame(self.sensor, tuple(gate_by_score(self.measurements, threshold)), self.frame)


def _triple(values: Sequence[float], size: int, name: str) -> Tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) != size or any(v <= 0.0 for v in out):
        raise ValueError(f"{name} needs {size} positive variances, got {values!r}")
    return out


@dataclass(frozen=True)
class LidarNoise:
    """Diagonal variances for centre (m^2) and log dims."""

    nu_p: Tuple[float, float, float] = (2.0, 2.0, 2.0)
    nu_e: Tuple[float, float, float] = (0.405, 0.405, 0.405)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nu_p", _triple(self.nu_p, 3, "nu_p"))
        object.__setattr__(self, "nu_e", _triple(self.nu_e, 3, "nu_e"))

    @property
    def variances(self) -> np.ndarray:
        return np.array(self.nu_p + self.nu_e)


@dataclass(frozen=True)
class CameraNoise:
    """Diagonal variances for box centre (px^2) and log width/height."""

    nu_p: Tuple[float, float] = (400.0, 400.0)
    nu_e: Tuple[float, float] = (0.0025, 0.00995)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nu_p", _triple(self.nu_p, 2, "nu_p"))
        object.__setattr__(self, "nu_e", _triple(self.nu_e, 2, "nu_e"))

    @property
    def variances(self) -> np.ndarray:
        return np.array(self.nu_p + self.nu_e)


@dataclass(frozen=True)
class DetectionConfig:
    """Detection probabilities and LiDAR range."""

    p_d_camera: float = 0.9
    p_d_lidar: float = 0.9
    p_d_min: float = 1e-4
    lidar_range: float = 50.0
    lidar_origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        for name in ("p_d_camera", "p_d_lidar", "p_d_min"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, value)
        if not self.lidar_range > 0.0:
            raise ValueError(f"lidar_range must be positive, got {self.lidar_range}")
        object.__setattr__(self, "lidar_origin", tuple(float(v) for v in self.lidar_origin))


@dataclass(frozen=True)
class ClutterConfig:
    """Poisson clutter: expected count per frame spread uniformly over ``region_volume``."""

    rate: float
    region_volume: float

    def __post_init__(self) -> None:
        if self.rate < 0.0:
            raise ValueError(f"clutter rate must be non-negative, got {self.rate}")
        if not self.region_volume > 0.0:
            raise ValueError(f"clutter region volume must be positive, got {self.region_volume}")


def camera_clutter_volume(camera: CameraModel) -> float:
    """Volume of the camera measurement space: image area times log-extent ranges."""
    log_w = math.log(camera.image_width) - math.log(CAMERA_MIN_EXTENT)
    log_h = math.log(camera.image_height) - math.log(CAMERA_MIN_EXTENT)
    return camera.image_width * camera.image_height * log_w * log_h


def lidar_clutter_volume(bounds: Bounds) -> float:
    """Volume of the LiDAR measurement space: scene box times log-dims ranges."""
    span = LIDAR_LOG_DIMS_RANGE[1] - LIDAR_LOG_DIMS_RANGE[0]
    return bounds.volume * span**3


def _diagonal_log_pdf(residuals: np.ndarray, variances: np.ndarray) -> np.ndarray:
    return -0.5 * (np.sum(np.log(2.0 * math.pi * variances)) + np.sum(residuals**2 / variances, axis=-1))


def lidar_log_likelihoods(vectors: np.ndarray, state: np.ndarray, noise: LidarNoise) -> np.ndarray:
    """Log-likelihoods of ``(k, 6)`` measurement vectors given one state."""
    center, log_dims = state_to_lidar_box(state)
    residuals = np.atleast_2d(vectors) - np.concatenate([center, log_dims])
    return _diagonal_log_pdf(residuals, noise.variances)


def lidar_log_likelihood(z: LidarMeasurement, state: np.ndarray, noise: LidarNoise) -> float:
    return float(lidar_log_likelihoods(z.vector[None, :], state, noise)[0])


def camera_log_likelihood(z: CameraMeasurement, state: np.ndarray, camera: CameraModel, noise: CameraNoise) -> float:
    """
    Log-likelihood of an image box given a state.

    Raises:
        PointBehindCamera: if the object centre is behind ``camera``.
        DegenerateConic: if the object crosses the principal plane.
    """
    predicted = project_ellipsoid(camera, state_position(state), state_shape(state))
    return float(_diagonal_log_pdf(z.vector - predicted.vector, noise.variances))


def detection_probability(
    sensor: Union[CameraModel, str],
    state: np.ndarray,
    config: DetectionConfig,
    context: Sequence[np.ndarray] | None = None,
) -> float:
    """
    Detection probability of the object at ``state`` by a camera or the LiDAR.

    ``context`` holds the states of the other objects; no occlusion model uses
    it yet, so it does not change the result.
    """
    position = state_position(state)
    if isinstance(sensor, CameraModel):
        try:
            uv = project_point(sensor, position)
        except PointBehindCamera:
            return config.p_d_min
        return config.p_d_camera if sensor.contains(uv) else config.p_d_min
    distance = float(np.linalg.norm(position - np.asarray(config.lidar_origin)))
    return config.p_d_lidar if distance <= config.lidar_range else config.p_d_min


def clutter_intensity(config: ClutterConfig) -> float:
    """Uniform clutter intensity ``rate / volume`` (same for every measurement)."""
    return config.rate / config.region_volume


def gate_by_score(measurements: Sequence[Measurement], threshold: float) -> list:
    """Keep measurements whose score strictly exceeds ``threshold``."""
    return [z for z in measurements if z.score > threshold]


class Linearization(NamedTuple):
    """Predicted measurement, Jacobian and noise covariance at a state."""

    predicted: np.ndarray
    H: np.ndarray
    R: np.ndarray


class SensorModel(ABC):
    """
    Measurement model of one sensor for one object class.

    Subclasses supply the detection probability, the point likelihood and a
    linearization; the Gaussian-integrated association weights and the
    Kalman conditioning step are shared.
    """

    name: str
    dim: int

    def __init__(self, name: str, clutter: ClutterConfig, detection: DetectionConfig):
        self.name = name
        self.clutter = clutter
        self.detection = detection

    @abstractmethod
    def detection_probability(self, state: np.ndarray) -> float:
        """P_D of an object at ``state``."""

    @abstractmethod
    def log_likelihood(self, z: Measurement, state: np.ndarray) -> float:
        """Log of ``g(z | state)``; raise if the state cannot produce measurements."""

    @abstractmethod
    def linearize(self, gaussian: GaussianState) -> Linearization | None:
        """Measurement linearization at the mean, ``None`` if unobservable."""

    def clutter_intensity(self, z: Measurement | None = None) -> float:
        return max(clutter_intensity(self.clutter), KAPPA_FLOOR)

    def psi_row(self, gaussian: GaussianState, vectors: np.ndarray, gate_threshold: float = math.inf) -> np.ndarray:
        """
        Association weights of one track against this sensor's measurements.

        Entry 0 is the miss weight ``1 - P_D``; entry ``j`` is
        ``P_D * N(z_j; zhat, S) / kappa`` and is zeroed outside the chi-square gate.
        """
        count = len(vectors)
        row = np.zeros(count + 1)
        p_d = self.detection_probability(gaussian.mean)
        row[0] = 1.0 - p_d
        if count == 0 or p_d <= 0.0:
            return row
        lin = self.linearize(gaussian)
        if lin is None:
            return row
        S = lin.H @ gaussian.covariance @ lin.H.T + lin.R
        S = 0.5 * (S + S.T)
        residuals = np.asarray(vectors, dtype=float) - lin.predicted
        cholesky = np.linalg.cholesky(S)
        whitened = np.linalg.solve(cholesky, residuals.T)
        mahalanobis = np.sum(whitened**2, axis=0)
        log_det = 2.0 * np.sum(np.log(np.diag(cholesky)))
        log_g = -0.5 * (self.dim * math.log(2.0 * math.pi) + log_det + mahalanobis)
        row[1:] = p_d * np.exp(log_g) / self.clutter_intensity()
        row[1:][mahalanobis > gate_threshold] = 0.0
        return row

    def condition(self, gaussian: GaussianState, vector: np.ndarray, lin: Linearization | None = None) -> GaussianState:
        """Kalman (or extended Kalman) update with one measurement, Joseph form."""
        lin = lin if lin is not None else self.linearize(gaussian)
        if lin is None:
            return gaussian
        P = gaussian.covariance
        S = lin.H @ P @ lin.H.T + lin.R
        gain = np.linalg.solve(S, lin.H @ P).T
        mean = gaussian.mean + gain @ (np.asarray(vector, dtype=float) - lin.predicted)
        factor = np.eye(STATE_DIM) - gain @ lin.H
        covariance = factor @ P @ factor.T + gain @ lin.R @ gain.T
        return GaussianState(mean, covariance)


class LidarSensor(SensorModel):
    """Linear-Gaussian LiDAR box model."""

    dim = 6

    def __init__(self, noise: LidarNoise, clutter: ClutterConfig, detection: DetectionConfig, name: str = LIDAR):
        super().__init__(name, clutter, detection)
        self.noise = noise
        self._H = np.zeros((6, STATE_DIM))
        for row, col in enumerate(POSITION_INDEX + SHAPE_INDEX):
            self._H[row, col] = 1.0
        self._offset = np.array([0.0, 0.0, 0.0, LN2, LN2, LN2])
        self._R = np.diag(noise.variances)

    def detection_probability(self, state: np.ndarray) -> float:
        return detection_probability(LIDAR, state, self.detection)

    def log_likelihood(self, z: Measurement, state: np.ndarray) -> float:
        return lidar_log_likelihood(z, state, self.noise)

    def linearize(self, gaussian: GaussianState) -> Linearization:
        return Linearization(self._H @ gaussian.mean + self._offset, self._H, self._R)


class CameraSensor(SensorModel):
    """Ellipsoid-projection camera model, linearized by central differences."""

    dim = 4

    def __init__(self, camera: CameraModel, noise: CameraNoise, clutter: ClutterConfig, detection: DetectionConfig):
        super().__init__(camera.name, clutter, detection)
        self.camera = camera
        self.noise = noise
        self._R = np.diag(noise.variances)
        columns = POSITION_INDEX + SHAPE_INDEX
        self._columns = list(columns)
        self._steps = np.zeros((2 * len(columns) + 1, STATE_DIM))
        for k, col in enumerate(columns):
            self._steps[1 + 2 * k, col] = JACOBIAN_STEP
            self._steps[2 + 2 * k, col] = -JACOBIAN_STEP

    def detection_probability(self, state: np.ndarray) -> float:
        return detection_probability(self.camera, state, self.detection)

    def log_likelihood(self, z: Measurement, state: np.ndarray) -> float:
        return camera_log_likelihood(z, state, self.camera, self.noise)

    def linearize(self, gaussian: GaussianState) -> Linearization | None:
        states = gaussian.mean + self._steps
        boxes = project_ellipsoids(
            self.camera,
            states[:, list(POSITION_INDEX)],
            states[:, list(SHAPE_INDEX)],
        )
        if np.any(np.isnan(boxes)):
            logger.debug(f"{self.name}: no linearization at {np.round(state_position(gaussian.mean), 2)}")
            return None
        H = np.zeros((self.dim, STATE_DIM))
        for k, col in enumerate(self._columns):
            H[:, col] = (boxes[1 + 2 * k] - boxes[2 + 2 * k]) / (2.0 * JACOBIAN_STEP)
        return Linearization(boxes[0], H, self._R)
