"""
Motion model: constant-velocity kinematics with a log-random-walk on the
ellipsoid shape, plus survival probability and birth components.
"""

from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field
from typing import NamedTuple
from typing import Sequence
from typing import Tuple

import numpy as np

from .geometry import STATE_DIM
from .geometry import Bounds
from .geometry import GaussianState
from .geometry import Label
from .geometry import state_position


def _positive_triple(name: str, values: Sequence[float]) -> Tuple[float, ...]:
    triple = tuple(float(v) for v in values)
    if len(triple) != 3:
        raise ValueError(f"{name} needs three entries, got {len(triple)}")
    if any(v <= 0.0 for v in triple):
        raise ValueError(f"{name} entries must be positive: {triple}")
    return triple


@dataclass(frozen=True)
class MotionConfig:
    """Sampling interval and process noise variances."""

    interval: float = 0.5
    nu_zeta: Tuple[float, float, float] = (0.0036, 0.0036, 0.0004)
    nu_rho: Tuple[float, float, float] = (0.0225, 0.0225, 0.0225)

    def __post_init__(self) -> None:
        if not self.interval > 0.0:
            raise ValueError(f"interval must be positive, got {self.interval}")
        object.__setattr__(self, "interval", float(self.interval))
        object.__setattr__(self, "nu_zeta", _positive_triple("nu_zeta", self.nu_zeta))
        object.__setattr__(self, "nu_rho", _positive_triple("nu_rho", self.nu_rho))


class Transition(NamedTuple):
    """``x' = F x + b + w`` with ``w ~ N(0, Q)``."""

    F: np.ndarray
    b: np.ndarray
    Q: np.ndarray


def transition_matrices(interval: float, nu_zeta: Sequence[float], nu_rho: Sequence[float]) -> Transition:
    """Build ``(F, b, Q)`` without validating the variances (zero noise allowed)."""
    t = float(interval)
    block = np.array([[1.0, t], [0.0, 1.0]])
    F = np.eye(STATE_DIM)
    F[:6, :6] = np.kron(np.eye(3), block)
    nu_zeta = np.asarray(nu_zeta, dtype=float)
    b = np.zeros(STATE_DIM)
    b[6:] = -nu_zeta / 2.0
    gain = np.array([t * t / 2.0, t])
    Q = np.zeros((STATE_DIM, STATE_DIM))
    Q[:6, :6] = np.kron(np.diag(np.asarray(nu_rho, dtype=float)), np.outer(gain, gain))
    Q[6:, 6:] = np.diag(nu_zeta)
    return Transition(F, b, Q)


def build_transition(config: MotionConfig) -> Transition:
    return transition_matrices(config.interval, config.nu_zeta, config.nu_rho)


def predict_state(gaussian: GaussianState, transition: Transition) -> GaussianState:
    F, b, Q = transition
    return GaussianState(F @ gaussian.mean + b, F @ gaussian.covariance @ F.T + Q)


@dataclass(frozen=True)
class SurvivalConfig:
    """Survival probability inside and outside the tracked region."""

    p_s_base: float = 0.99
    p_s_outside: float = 0.1
    scene_lower: Tuple[float, float, float] = (-60.0, -60.0, -10.0)
    scene_upper: Tuple[float, float, float] = (60.0, 60.0, 10.0)

    def __post_init__(self) -> None:
        for name in ("p_s_base", "p_s_outside"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, value)
        bounds = Bounds(self.scene_lower, self.scene_upper)
        object.__setattr__(self, "scene_lower", bounds.lower)
        object.__setattr__(self, "scene_upper", bounds.upper)

    @property
    def bounds(self) -> Bounds:
        return Bounds(self.scene_lower, self.scene_upper)


def survival_probability(state: np.ndarray, config: SurvivalConfig) -> float:
    """``p_s_base`` when the position lies in the closed scene box, else ``p_s_outside``."""
    return config.p_s_base if config.bounds.contains(state_position(state)) else config.p_s_outside


@dataclass(frozen=True, eq=False)
class BirthComponent:
    """Labeled Bernoulli birth with existence ``r_b`` and Gaussian ``p_b``."""

    label: Label
    r_b: float
    p_b: GaussianState
    source: str = field(default="lidar")

    def __post_init__(self) -> None:
        if not 0.0 <= self.r_b <= 1.0:
            raise ValueError(f"birth existence must lie in [0, 1], got {self.r_b}")


def sample_transition(
    rng: np.random.Generator,
    state: np.ndarray,
    transition: Transition,
    size: int | None = None,
) -> np.ndarray:
    """Draw next states from ``N(F x + b, Q)``; ``Q`` may be singular."""
    F, b, Q = transition
    mean = F @ np.asarray(state, dtype=float) + b
    return rng.multivariate_normal(mean, Q, size=size, check_valid="ignore", method="eigh")


def sample_shape(rng: np.random.Generator, zeta: Sequence[float], nu_zeta: Sequence[float], size: int) -> np.ndarray:
    """Sample next log semi-axes; ``exp`` of the result is log-normal with unit mean ratio."""
    nu = np.asarray(nu_zeta, dtype=float)
    return np.asarray(zeta, dtype=float) - nu / 2.0 + np.sqrt(nu) * rng.standard_normal((size, nu.size))

