from .config import ScenarioConfig
from .config import TrackerConfig
from .geometry import CameraModel
from .geometry import GaussianState
from .geometry import Label
from .glmb import GlmbDensity
from .glmb import GlmbFilter
from .glmb import TrackEstimate
from .sensors import CameraMeasurement
from .sensors import LidarMeasurement
from .sensors import SensorFrame
from .tracker import MultiClassTracker
from .tracker import create_tracker

__all__ = [
    "CameraMeasurement",
    "CameraModel",
    "GaussianState",
    "GlmbDensity",
    "GlmbFilter",
    "Label",
    "LidarMeasurement",
    "MultiClassTracker",
    "ScenarioConfig",
    "SensorFrame",
    "TrackEstimate",
    "TrackerConfig",
    "create_tracker",
]
