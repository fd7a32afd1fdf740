"""
Geometry primitives: labels, 9-dim ellipsoid states, Gaussians, pinhole
cameras and the exact projection of an ellipsoid to its image bounding box.

State layout is interleaved ``[x, vx, y, vy, z, vz, zeta1, zeta2, zeta3]``
where ``zeta`` holds the log semi-axes of an axis-aligned ellipsoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from typing import Tuple

import numpy as np

from .errors import DegenerateConic
from .errors import PointBehindCamera

STATE_DIM = 9
POSITION_INDEX = (0, 2, 4)
VELOCITY_INDEX = (1, 3, 5)
SHAPE_INDEX = (6, 7, 8)
LN2 = math.log(2.0)
PSD_TOLERANCE = 1e-9


@dataclass(frozen=True, order=True)
class Label:
    """Track identity ``(birth_step, disambiguator)``, unique filter-wide."""

    birth_step: int
    disambiguator: int

    def __str__(self) -> str:
        return f"{self.birth_step}-{self.disambiguator}"

    @classmethod
    def parse(cls, text: str) -> Label:
        step, sep, tau = str(text).partition("-")
        if not sep:
            raise ValueError(f"malformed label {text!r}")
        return cls(int(step), int(tau))


def make_state(position: Sequence[float], velocity: Sequence[float], zeta: Sequence[float]) -> np.ndarray:
    """Assemble an interleaved state vector."""
    state = np.empty(STATE_DIM)
    state[list(POSITION_INDEX)] = np.asarray(position, dtype=float)
    state[list(VELOCITY_INDEX)] = np.asarray(velocity, dtype=float)
    state[list(SHAPE_INDEX)] = np.asarray(zeta, dtype=float)
    return state


def state_position(state: np.ndarray) -> np.ndarray:
    return np.asarray(state)[list(POSITION_INDEX)]


def state_velocity(state: np.ndarray) -> np.ndarray:
    return np.asarray(state)[list(VELOCITY_INDEX)]


def state_shape(state: np.ndarray) -> np.ndarray:
    return np.asarray(state)[list(SHAPE_INDEX)]


def state_to_lidar_box(state: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(center, log_dims)`` with full dimensions ``2 * exp(zeta)``."""
    return state_position(state), state_shape(state) + LN2


def lidar_box_to_shape(log_dims: Sequence[float]) -> np.ndarray:
    """Inverse of the shape half of :func:`state_to_lidar_box`."""
    return np.asarray(log_dims, dtype=float) - LN2


def clamp_psd(matrix: np.ndarray, tolerance: float = PSD_TOLERANCE) -> np.ndarray:
    """
    Symmetrize ``matrix`` and clamp tiny negative eigenvalues to zero.

    The tolerance scales with the largest eigenvalue magnitude once that exceeds 1.

    Raises:
        ValueError: if an eigenvalue is below ``-tolerance``.
    """
    sym = 0.5 * (matrix + matrix.T)
    eigenvalues = np.linalg.eigvalsh(sym)
    scale = max(1.0, float(np.max(np.abs(eigenvalues)))) if eigenvalues.size else 1.0
    if eigenvalues.size and eigenvalues[0] < -tolerance * scale:
        raise ValueError(f"covariance is not positive semi-definite (min eigenvalue {eigenvalues[0]:.3e})")
    if eigenvalues.size and eigenvalues[0] < 0.0:
        values, vectors = np.linalg.eigh(sym)
        sym = (vectors * np.clip(values, 0.0, None)) @ vectors.T
        sym = 0.5 * (sym + sym.T)
    return sym


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Gaussian density over the 9-dim state."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(-1)
        covariance = np.array(self.covariance, dtype=float)
        if mean.shape != (STATE_DIM,):
            raise ValueError(f"state mean must have {STATE_DIM} entries, got {mean.shape}")
        if covariance.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"covariance must be {STATE_DIM}x{STATE_DIM}, got {covariance.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(covariance))):
            raise ValueError("Gaussian state must be finite")
        covariance = clamp_psd(covariance)
        mean.setflags(write=False)
        covariance.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)

    @property
    def position(self) -> np.ndarray:
        return state_position(self.mean)

    @property
    def velocity(self) -> np.ndarray:
        return state_velocity(self.mean)

    @property
    def shape(self) -> np.ndarray:
        return state_shape(self.mean)


def moment_match(components: Sequence[Tuple[float, GaussianState]]) -> GaussianState:
    """Collapse a weighted Gaussian mixture into a single Gaussian."""
    if not components:
        raise ValueError("cannot moment-match an empty mixture")
    if len(components) == 1:
        return components[0][1]
    weights = np.array([w for w, _ in components], dtype=float)
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("mixture weights must have positive sum")
    weights = weights / total
    means = np.stack([g.mean for _, g in components])
    mean = weights @ means
    deltas = means - mean
    covariance = np.einsum("k,kij->ij", weights, np.stack([g.covariance for _, g in components]))
    covariance = covariance + np.einsum("k,ki,kj->ij", weights, deltas, deltas)
    return GaussianState(mean, covariance)


@dataclass(frozen=True, eq=False)
class Bounds:
    """Closed axis-aligned box."""

    lower: Tuple[float, float, float]
    upper: Tuple[float, float, float]

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != 3 or len(upper) != 3:
            raise ValueError("bounds need three lower and three upper values")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ValueError(f"empty bounds {lower} .. {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def contains(self, point: Sequence[float]) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera with a 3x4 projection matrix and image size in pixels."""

    name: str
    projection: np.ndarray
    image_width: float
    image_height: float

    def __post_init__(self) -> None:
        projection = np.array(self.projection, dtype=float)
        if projection.shape != (3, 4):
            raise ValueError(f"camera {self.name!r}: projection must be 3x4")
        if not np.all(np.isfinite(projection)) or np.linalg.matrix_rank(projection) != 3:
            raise ValueError(f"camera {self.name!r}: projection must be finite with rank 3")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(f"camera {self.name!r}: image size must be positive")
        projection.setflags(write=False)
        object.__setattr__(self, "projection", projection)
        object.__setattr__(self, "image_width", float(self.image_width))
        object.__setattr__(self, "image_height", float(self.image_height))

    def depth(self, point: Sequence[float]) -> float:
        """Homogeneous depth of ``point``; positive in front of the camera."""
        return float(self.projection[2, :3] @ np.asarray(point, dtype=float) + self.projection[2, 3])

    def contains(self, uv: Sequence[float]) -> bool:
        u, v = float(uv[0]), float(uv[1])
        return 0.0 <= u <= self.image_width and 0.0 <= v <= self.image_height

    def back_project(self, uv: Sequence[float], depth: float) -> np.ndarray:
        """World point whose projection is ``uv`` at homogeneous depth ``depth``."""
        rhs = depth * np.array([uv[0], uv[1], 1.0]) - self.projection[:, 3]
        return np.linalg.solve(self.projection[:, :3], rhs)

    @classmethod
    def from_heading(
        cls,
        name: str,
        heading_deg: float,
        hfov_deg: float,
        *,
        width: float = 1600.0,
        height: float = 900.0,
        mount_height: float = 1.5,
    ) -> CameraModel:
        """
        Level camera at ``(0, 0, mount_height)`` looking along ``heading_deg``.

        World frame is x forward, y left, z up; headings are counter-clockwise.
        """
        h = math.radians(heading_deg)
        rotation = np.array(
            [
                [math.sin(h), -math.cos(h), 0.0],
                [0.0, 0.0, -1.0],
                [math.cos(h), math.sin(h), 0.0],
            ]
        )
        focal = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        intrinsics = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
        translation = -rotation @ np.array([0.0, 0.0, mount_height])
        projection = intrinsics @ np.hstack([rotation, translation[:, None]])
        return cls(name, projection, width, height)


NUSCENES_RIG_LAYOUT = (
    ("CAM_FRONT", 0.0, 70.0),
    ("CAM_FRONT_LEFT", 55.0, 70.0),
    ("CAM_FRONT_RIGHT", -55.0, 70.0),
    ("CAM_BACK_LEFT", 110.0, 70.0),
    ("CAM_BACK_RIGHT", -110.0, 70.0),
    ("CAM_BACK", 180.0, 110.0),
)


def nuscenes_rig() -> Tuple[CameraModel, ...]:
    """Six-camera surround rig with nuScenes-like headings and fields of view."""
    return tuple(CameraModel.from_heading(name, heading, fov) for name, heading, fov in NUSCENES_RIG_LAYOUT)


@dataclass(frozen=True, eq=False)
class BBox2D:
    """Image box as centre plus log width/height."""

    center: np.ndarray
    log_extent: np.ndarray

    def __post_init__(self) -> None:
        center = np.array(self.center, dtype=float).reshape(-1)
        log_extent = np.array(self.log_extent, dtype=float).reshape(-1)
        if center.shape != (2,) or log_extent.shape != (2,):
            raise ValueError("bbox needs a 2-vector centre and a 2-vector log extent")
        center.setflags(write=False)
        log_extent.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "log_extent", log_extent)

    @property
    def extent(self) -> np.ndarray:
        return np.exp(self.log_extent)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.center, self.log_extent])

    def corners(self) -> Tuple[float, float, float, float]:
        half = self.extent / 2.0
        return (
            float(self.center[0] - half[0]),
            float(self.center[1] - half[1]),
            float(self.center[0] + half[0]),
            float(self.center[1] + half[1]),
        )

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> BBox2D:
        if x2 <= x1 or y2 <= y1:
            raise ValueError(f"bbox corners must satisfy x2 > x1 and y2 > y1, got {(x1, y1, x2, y2)}")
        return cls([(x1 + x2) / 2.0, (y1 + y2) / 2.0], [math.log(x2 - x1), math.log(y2 - y1)])


def project_point(camera: CameraModel, point: Sequence[float]) -> np.ndarray:
    """Project a world point to pixel coordinates."""
    homogeneous = camera.projection @ np.append(np.asarray(point, dtype=float), 1.0)
    if homogeneous[2] <= 0.0:
        raise PointBehindCamera(f"point {tuple(point)} is behind camera {camera.name!r}")
    return homogeneous[:2] / homogeneous[2]


def dual_quadric(center: Sequence[float], zeta: Sequence[float]) -> np.ndarray:
    """Dual quadric ``[[A - t t^T, -t], [-t^T, -1]]`` of an axis-aligned ellipsoid."""
    t = np.asarray(center, dtype=float)
    quadric = np.empty((4, 4))
    quadric[:3, :3] = np.diag(np.exp(2.0 * np.asarray(zeta, dtype=float))) - np.outer(t, t)
    quadric[:3, 3] = -t
    quadric[3, :3] = -t
    quadric[3, 3] = -1.0
    return quadric


def conic_bounding_box(dual_conic: np.ndarray) -> BBox2D:
    """
    Axis-aligned bounding box of the ellipse described by a dual conic.

    Raises:
        DegenerateConic: if the conic is not a bounded ellipse.
    """
    c = dual_conic
    c33 = c[2, 2]
    if not c33 < 0.0:
        raise DegenerateConic("projected ellipsoid intersects the principal plane")
    disc_u = c[0, 2] ** 2 - c[0, 0] * c33
    disc_v = c[1, 2] ** 2 - c[1, 1] * c33
    if not (disc_u > 0.0 and disc_v > 0.0):
        raise DegenerateConic("projected conic has no real extent")
    center = (c[0, 2] / c33, c[1, 2] / c33)
    width = 2.0 * math.sqrt(disc_u) / abs(c33)
    height = 2.0 * math.sqrt(disc_v) / abs(c33)
    return BBox2D(center, (math.log(width), math.log(height)))


def project_ellipsoid(camera: CameraModel, center: Sequence[float], zeta: Sequence[float]) -> BBox2D:
    """
    Exact image bounding box of the ellipsoid ``(center, exp(zeta))``.

    Raises:
        PointBehindCamera: if the centre is not in front of the camera.
        DegenerateConic: if the ellipsoid crosses the principal plane.
    """
    if camera.depth(center) <= 0.0:
        raise PointBehindCamera(f"ellipsoid centre {tuple(center)} is behind camera {camera.name!r}")
    p = camera.projection
    return conic_bounding_box(p @ dual_quadric(center, zeta) @ p.T)


def project_ellipsoids(camera: CameraModel, centers: np.ndarray, zetas: np.ndarray) -> np.ndarray:
    """
    Batched bbox vectors ``(u, v, log w, log h)`` for ``k`` ellipsoids.

    Rows that are behind the camera or degenerate come back as NaN.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
    k = centers.shape[0]
    quadrics = np.zeros((k, 4, 4))
    quadrics[:, :3, :3] = -np.einsum("ki,kj->kij", centers, centers)
    quadrics[:, [0, 1, 2], [0, 1, 2]] += np.exp(2.0 * zetas)
    quadrics[:, :3, 3] = -centers
    quadrics[:, 3, :3] = -centers
    quadrics[:, 3, 3] = -1.0
    p = camera.projection
    conics = np.einsum("ij,kjl,ml->kim", p, quadrics, p)
    c33 = conics[:, 2, 2]
    disc_u = conics[:, 0, 2] ** 2 - conics[:, 0, 0] * c33
    disc_v = conics[:, 1, 2] ** 2 - conics[:, 1, 1] * c33
    depth = centers @ p[2, :3] + p[2, 3]
    valid = (depth > 0.0) & (c33 < 0.0) & (disc_u > 0.0) & (disc_v > 0.0)
    out = np.full((k, 4), np.nan)
    if np.any(valid):
        c = conics[valid]
        scale = np.abs(c33[valid])
        out[valid, 0] = c[:, 0, 2] / c33[valid]
        out[valid, 1] = c[:, 1, 2] / c33[valid]
        out[valid, 2] = np.log(2.0 * np.sqrt(disc_u[valid]) / scale)
        out[valid, 3] = np.log(2.0 * np.sqrt(disc_v[valid]) / scale)
    return out
