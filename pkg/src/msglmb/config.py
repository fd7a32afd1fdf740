from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Mapping
from typing import Tuple

from .dynamics import MotionConfig
from .dynamics import SurvivalConfig
from .errors import ParseError
from .glmb import BirthConfig
from .glmb import FilterSettings
from .sensors import CameraNoise
from .sensors import DetectionConfig
from .sensors import LidarNoise
from .types import NUSCENES_CLASSES

try:
    import yaml

    HAS_YAML = True
except ImportError:
    HAS_YAML = False

try:
    import tomllib

    HAS_TOML = True
except ImportError:
    try:
        import toml as tomllib  # fallback for older Python versions

        HAS_TOML = True
    except ImportError:
        HAS_TOML = False

TOP_LEVEL_SECTIONS = ("tracker", "scenario", "ablation")
ABLATION_MODES = ("camera-only", "lidar-only", "fused")
RIG_PRESETS = ("nuscenes-rig", "front", "none")


def _build(cls: type, data: Any, path: str) -> Any:
    """Instantiate a config dataclass from a mapping, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ParseError(f"expected a mapping, got {type(data).__name__}", field=path)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ParseError(f"unknown configuration key {unknown[0]!r}", field=f"{path}.{unknown[0]}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field=path) from exc


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class ClassParameters:
    """Per-class sensor noise and the default box size used for camera births."""

    lidar_nu_p: Tuple[float, float, float] = (2.0, 2.0, 2.0)
    lidar_nu_e: Tuple[float, float, float] = (0.405, 0.405, 0.405)
    camera_nu_p: Tuple[float, float] = (400.0, 400.0)
    camera_nu_e: Tuple[float, float] = (0.0025, 0.00995)
    default_size: Tuple[float, float, float] = (1.9, 4.6, 1.7)

    def __post_init__(self) -> None:
        for name in ("lidar_nu_p", "lidar_nu_e", "camera_nu_p", "camera_nu_e", "default_size"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.default_size) != 3 or any(v <= 0.0 for v in self.default_size):
            raise ValueError("default_size needs three positive dimensions")
        LidarNoise(self.lidar_nu_p, self.lidar_nu_e)
        CameraNoise(self.camera_nu_p, self.camera_nu_e)

    @property
    def lidar_noise(self) -> LidarNoise:
        return LidarNoise(self.lidar_nu_p, self.lidar_nu_e)

    @property
    def camera_noise(self) -> CameraNoise:
        return CameraNoise(self.camera_nu_p, self.camera_nu_e)


def default_class_table() -> Dict[str, ClassParameters]:
    """Noise table tuned on nuScenes detections."""
    vehicle = dict(lidar_nu_p=(2.0, 2.0, 2.0), lidar_nu_e=(0.405, 0.405, 0.405))
    two_wheel = dict(lidar_nu_p=(0.5, 0.5, 0.5), lidar_nu_e=(0.005, 0.405, 0.005))
    return {
        "pedestrian": ClassParameters(
            lidar_nu_p=(0.1, 0.1, 0.1),
            lidar_nu_e=(0.005, 0.005, 0.005),
            camera_nu_e=(0.00995, 0.0025),
            default_size=(0.7, 0.7, 1.8),
        ),
        "car": ClassParameters(**vehicle, default_size=(1.9, 4.6, 1.7)),
        "truck": ClassParameters(**vehicle, default_size=(2.5, 7.0, 3.0)),
        "bus": ClassParameters(**vehicle, default_size=(2.9, 11.0, 3.5)),
        "trailer": ClassParameters(**vehicle, default_size=(2.5, 10.0, 3.8)),
        "motorcycle": ClassParameters(**two_wheel, default_size=(0.8, 2.1, 1.5)),
        "bicycle": ClassParameters(**two_wheel, default_size=(0.6, 1.7, 1.3)),
    }


@dataclass(frozen=True)
class ClutterRates:
    """Expected clutter count per frame for each camera and for the LiDAR."""

    camera: float = 5.0
    lidar: float = 5.0

    def __post_init__(self) -> None:
        if self.camera < 0.0 or self.lidar < 0.0:
            raise ValueError("clutter rates must be non-negative")


@dataclass(frozen=True)
class MetricsConfig:
    """Matching radius (m, planar) and AMOTA recall sampling."""

    radius: float = 2.0
    recall_points: int = 40

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if int(self.recall_points) < 1:
            raise ValueError("recall_points must be at least 1")


@dataclass
class TrackerConfig:
    """Complete tracker configuration."""

    motion: MotionConfig = field(default_factory=MotionConfig)
    survival: SurvivalConfig = field(default_factory=SurvivalConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    clutter: ClutterRates = field(default_factory=ClutterRates)
    birth: BirthConfig = field(default_factory=BirthConfig)
    filter: FilterSettings = field(default_factory=FilterSettings)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    classes: Dict[str, ClassParameters] = field(default_factory=default_class_table)

    # Detections at or below this score are dropped before tracking
    score_gate: float = 0.47

    def __post_init__(self) -> None:
        if sorted(self.classes) != sorted(NUSCENES_CLASSES):
            raise ValueError(f"class table must cover exactly {NUSCENES_CLASSES}")
        if not 0.0 <= self.score_gate <= 1.0:
            raise ValueError(f"score_gate must lie in [0, 1], got {self.score_gate}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> TrackerConfig:
        """Create TrackerConfig from the ``tracker`` section of a document."""
        tracker_data = _section(data, "tracker")
        sections = {
            "motion": MotionConfig,
            "survival": SurvivalConfig,
            "detection": DetectionConfig,
            "clutter": ClutterRates,
            "birth": BirthConfig,
            "filter": FilterSettings,
            "metrics": MetricsConfig,
        }
        allowed = set(sections) | {"classes", "score_gate"}
        unknown = sorted(set(tracker_data) - allowed)
        if unknown:
            raise ParseError(f"unknown configuration key {unknown[0]!r}", field=f"tracker.{unknown[0]}")
        kwargs: Dict[str, Any] = {name: _build(kind, tracker_data.get(name), f"tracker.{name}") for name, kind in sections.items()}
        classes = default_class_table()
        for name, overrides in (tracker_data.get("classes") or {}).items():
            if name not in classes:
                raise ParseError(f"unknown object class {name!r}", field=f"tracker.classes.{name}")
            base = _plain(dataclasses.asdict(classes[name]))
            if not isinstance(overrides, Mapping):
                raise ParseError("expected a mapping", field=f"tracker.classes.{name}")
            unknown = sorted(set(overrides) - set(base))
            if unknown:
                raise ParseError(f"unknown configuration key {unknown[0]!r}", field=f"tracker.classes.{name}.{unknown[0]}")
            classes[name] = _build(ClassParameters, {**base, **overrides}, f"tracker.classes.{name}")
        kwargs["classes"] = classes
        if "score_gate" in tracker_data:
            kwargs["score_gate"] = tracker_data["score_gate"]
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), field="tracker") from exc

    @classmethod
    def from_file(cls, file_path: str | Path) -> TrackerConfig:
        """Load configuration from file."""
        return cls.from_dict(load_document(file_path))

    @classmethod
    def from_env(cls, base: TrackerConfig | None = None) -> TrackerConfig:
        """Apply ``MSGLMB_*`` environment overrides on top of ``base`` (or defaults)."""
        config = base or cls()
        filter_settings = config.filter
        overrides = {
            "seed": ("MSGLMB_SEED", int),
            "association_mode": ("MSGLMB_ASSOCIATION_MODE", str),
            "max_hypotheses": ("MSGLMB_MAX_HYPOTHESES", int),
            "gibbs_iterations": ("MSGLMB_GIBBS_ITERATIONS", int),
        }
        changes = {}
        for name, (variable, kind) in overrides.items():
            value = os.getenv(variable)
            if value is not None:
                try:
                    changes[name] = kind(value)
                except ValueError as exc:
                    raise ParseError(f"invalid value {value!r}", field=variable) from exc
        try:
            if changes:
                filter_settings = dataclasses.replace(filter_settings, **changes)
            score_gate = float(os.getenv("MSGLMB_SCORE_GATE", config.score_gate))
            return dataclasses.replace(config, filter=filter_settings, score_gate=score_gate)
        except ValueError as exc:
            raise ParseError(str(exc), field="environment") from exc

    @classmethod
    def load(cls, config_file: str | Path | None = None) -> TrackerConfig:
        """
        Load configuration with precedence: env vars > config_file > defaults.

        If no config_file is provided, tries these locations:
        - ~/.msglmb/config.yaml
        - ./msglmb.yaml
        - ./pyproject.toml ([tool.msglmb])
        """
        if config_file:
            return cls.from_env(cls.from_file(config_file))
        default_locations = [
            Path.home() / ".msglmb" / "config.yaml",
            Path.cwd() / "msglmb.yaml",
            Path.cwd() / "pyproject.toml",
        ]
        for location in default_locations:
            if location.exists():
                try:
                    return cls.from_env(cls.from_file(location))
                except (ParseError, ImportError):
                    continue
        return cls.from_env()

    def to_dict(self) -> Dict[str, Any]:
        return {"tracker": _plain(dataclasses.asdict(self))}


PAPER_DEFAULTS = TrackerConfig()


def load_config(file_path: str | Path) -> TrackerConfig:
    """Strict loader: the named file must exist and parse, environment overrides are not applied."""
    return TrackerConfig.from_file(file_path)


@dataclass(frozen=True)
class ScenarioConfig:
    """Synthetic scenario: object population, dynamics, rig and sensor behaviour."""

    n_objects: int = 10
    duration_steps: int = 100
    interval: float = 0.5
    scene_lower: Tuple[float, float, float] = (-40.0, -40.0, -5.0)
    scene_upper: Tuple[float, float, float] = (40.0, 40.0, 5.0)
    min_range: float = 6.0
    nu_rho: Tuple[float, float, float] = (0.0225, 0.0225, 1e-6)
    nu_zeta: Tuple[float, float, float] = (0.0036, 0.0036, 0.0004)
    max_speed: float = 2.0
    birth_window: float = 0.3
    classes: Tuple[str, ...] = ("car", "pedestrian")
    truth_model: str = "matched"
    rig: str = "nuscenes-rig"
    lidar_range: float = 50.0
    p_d_camera: float = 0.9
    p_d_lidar: float = 0.9
    clutter_rate_camera: float = 5.0
    clutter_rate_lidar: float = 5.0
    camera_nu_p: Tuple[float, float] = (25.0, 25.0)
    camera_nu_e: Tuple[float, float] = (0.0025, 0.0025)
    lidar_nu_p: Tuple[float, float, float] = (0.04, 0.04, 0.04)
    lidar_nu_e: Tuple[float, float, float] = (0.0025, 0.0025, 0.0025)
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("scene_lower", "scene_upper", "nu_rho", "nu_zeta", "classes", "camera_nu_p", "camera_nu_e", "lidar_nu_p", "lidar_nu_e"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_objects < 0 or self.duration_steps < 1:
            raise ValueError("n_objects must be >= 0 and duration_steps >= 1")
        if not self.interval > 0.0:
            raise ValueError("interval must be positive")
        if any(v < 0.0 for v in self.nu_rho + self.nu_zeta):
            raise ValueError("process noise variances must be non-negative")
        unknown = [c for c in self.classes if c not in NUSCENES_CLASSES]
        if unknown or not self.classes:
            raise ValueError(f"scenario classes must be nuScenes classes, got {self.classes}")
        if self.truth_model not in ("matched", "constant-velocity"):
            raise ValueError(f"truth_model must be 'matched' or 'constant-velocity', got {self.truth_model!r}")
        if self.rig not in RIG_PRESETS:
            raise ValueError(f"rig must be one of {RIG_PRESETS}, got {self.rig!r}")
        for name in ("p_d_camera", "p_d_lidar", "birth_window"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> ScenarioConfig:
        return _build(cls, _section(data, "scenario"), "scenario")

    @classmethod
    def from_file(cls, file_path: str | Path) -> ScenarioConfig:
        return cls.from_dict(load_document(file_path))

    def to_dict(self) -> Dict[str, Any]:
        return {"scenario": _plain(dataclasses.asdict(self))}


@dataclass(frozen=True)
class AblationConfig:
    """Seeds and sensor subsets compared by ``msglmb ablate``."""

    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    modes: Tuple[str, ...] = ABLATION_MODES

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "modes", tuple(self.modes))
        bad = [m for m in self.modes if m not in ABLATION_MODES]
        if bad or not self.modes or not self.seeds:
            raise ValueError(f"ablation needs seeds and modes from {ABLATION_MODES}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> AblationConfig:
        return _build(cls, _section(data, "ablation"), "ablation")


def _section(data: Mapping[str, Any] | None, name: str) -> Mapping[str, Any]:
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ParseError("configuration document must be a mapping")
    unknown = sorted(set(data) - set(TOP_LEVEL_SECTIONS))
    if unknown:
        raise ParseError(f"unknown configuration section {unknown[0]!r}", field=unknown[0])
    section = data.get(name) or {}
    if not isinstance(section, Mapping):
        raise ParseError("expected a mapping", field=name)
    return section


def load_document(file_path: str | Path) -> Dict[str, Any]:
    """Read a YAML/TOML/JSON configuration document."""
    file_path = Path(file_path).expanduser()

    if not file_path.exists():
        raise FileNotFoundError(f"Config file not found: {file_path}")

    suffix = file_path.suffix.lower()

    with open(file_path, "rb") as f:
        raw = f.read()
    try:
        if suffix in [".yaml", ".yml"]:
            if not HAS_YAML:
                raise ImportError("PyYAML required for YAML config files")
            data = yaml.safe_load(raw.decode("utf-8"))
        elif suffix == ".toml":
            if not HAS_TOML:
                raise ImportError("toml/tomllib required for TOML config files")
            data = tomllib.loads(raw.decode("utf-8"))
            if file_path.name == "pyproject.toml":
                data = data.get("tool", {}).get("msglmb", {})
        elif suffix == ".json":
            data = json.loads(raw.decode("utf-8"))
        else:
            raise ParseError(f"Unsupported config file format: {suffix}", path=str(file_path))
    except (ParseError, ImportError):
        raise
    except Exception as exc:
        raise ParseError(f"cannot parse configuration: {exc}", path=str(file_path)) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ParseError("configuration document must be a mapping", path=str(file_path))
    return data


def dump_document(document: Mapping[str, Any], fmt: str = "yaml") -> str:
    """Render a configuration document as YAML or JSON text."""
    if fmt == "json":
        return json.dumps(document, indent=2, sort_keys=True)
    if not HAS_YAML:
        raise ImportError("PyYAML required for YAML output")
    return yaml.safe_dump(dict(document), sort_keys=False)
