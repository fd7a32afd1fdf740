"""
Labeled multi-object density and the filter recursion for one object class.

The density is a weighted set of hypotheses; each hypothesis is a set of
labels with one Gaussian per label. Hypotheses never share a label set:
whenever two would, they are merged and their per-label Gaussians moment
matched.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import Iterator
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import chi2

from .association import AssociationSummary
from .association import PsiTable
from .association import solve_associations
from .dynamics import BirthComponent
from .dynamics import MotionConfig
from .dynamics import SurvivalConfig
from .dynamics import Transition
from .dynamics import build_transition
from .dynamics import predict_state
from .dynamics import survival_probability
from .errors import DuplicateBirthLabel
from .errors import EmptyFrameSet
from .geometry import GaussianState
from .geometry import Label
from .geometry import lidar_box_to_shape
from .geometry import make_state
from .geometry import moment_match
from .sensors import CameraSensor
from .sensors import LidarNoise
from .sensors import LidarSensor
from .sensors import Measurement
from .sensors import SensorModel

logger = logging.getLogger(__name__)

ASSOCIATION_MODES = ("auto", "enumerate", "gibbs")


@dataclass(frozen=True)
class FilterSettings:
    """Hypothesis caps, pruning and association sampler settings."""

    weight_floor: float = 1e-4
    max_hypotheses: int = 1000
    predict_cap: int = 3000
    gibbs_iterations: int = 1000
    enumeration_budget: int = 1000
    association_mode: str = "auto"
    gate_probability: float = 0.9999
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.weight_floor < 1.0:
            raise ValueError(f"weight_floor must lie in [0, 1), got {self.weight_floor}")
        for name in ("max_hypotheses", "predict_cap", "gibbs_iterations", "enumeration_budget"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.association_mode not in ASSOCIATION_MODES:
            raise ValueError(f"association_mode must be one of {ASSOCIATION_MODES}, got {self.association_mode!r}")
        if not 0.0 < self.gate_probability <= 1.0:
            raise ValueError(f"gate_probability must lie in (0, 1], got {self.gate_probability}")


@dataclass(frozen=True)
class BirthConfig:
    """Measurement-driven birth settings."""

    r_b_max: float = 0.03
    expected_births: float = 1.0
    velocity_variance: float = 4.0
    position_variance: Optional[Tuple[float, float, float]] = None
    shape_variance: Optional[Tuple[float, float, float]] = None
    camera_birth_depth: float = 20.0
    camera_depth_variance: float = 100.0
    camera_shape_variance: float = 0.04

    def __post_init__(self) -> None:
        if not 0.0 <= self.r_b_max <= 1.0:
            raise ValueError(f"r_b_max must lie in [0, 1], got {self.r_b_max}")
        for name in ("expected_births", "velocity_variance", "camera_birth_depth", "camera_depth_variance", "camera_shape_variance"):
            if not float(getattr(self, name)) > 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("position_variance", "shape_variance"):
            value = getattr(self, name)
            if value is not None:
                value = tuple(float(v) for v in value)
                if len(value) != 3 or any(v <= 0.0 for v in value):
                    raise ValueError(f"{name} needs three positive variances")
                object.__setattr__(self, name, value)


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """One label set with its log weight and per-label Gaussians."""

    tracks: Mapping[Label, GaussianState]
    log_weight: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tracks", dict(sorted(self.tracks.items())))

    @property
    def label_set(self) -> frozenset:
        return frozenset(self.tracks)

    @property
    def key(self) -> Tuple[Label, ...]:
        return tuple(self.tracks)

    def __len__(self) -> int:
        return len(self.tracks)


@dataclass(frozen=True, eq=False)
class TrackEstimate:
    """Extracted track in output coordinates (full box dimensions)."""

    label: Label
    class_id: str
    center: np.ndarray
    dims: np.ndarray
    velocity: np.ndarray
    existence_prob: float


@dataclass
class GlmbDensity:
    """Labeled multi-object density for one class."""

    hypotheses: List[Hypothesis]
    class_id: str = "car"
    association_mass: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def empty(cls, class_id: str = "car") -> GlmbDensity:
        return cls([Hypothesis({}, 0.0)], class_id)

    def weights(self) -> np.ndarray:
        """Normalized hypothesis weights."""
        if not self.hypotheses:
            return np.zeros(0)
        logs = np.array([h.log_weight for h in self.hypotheses])
        return np.exp(logs - logsumexp(logs))

    def normalized(self) -> GlmbDensity:
        logs = np.array([h.log_weight for h in self.hypotheses])
        total = logsumexp(logs)
        hypotheses = [Hypothesis(h.tracks, h.log_weight - total) for h in self.hypotheses]
        return GlmbDensity(hypotheses, self.class_id, self.association_mass)

    def labels(self) -> set:
        out = set()
        for h in self.hypotheses:
            out.update(h.tracks)
        return out

    def cardinality_distribution(self) -> np.ndarray:
        weights = self.weights()
        size = max((len(h) for h in self.hypotheses), default=0)
        out = np.zeros(size + 1)
        for h, w in zip(self.hypotheses, weights):
            out[len(h)] += w
        return out

    def existence_probabilities(self) -> Dict[Label, float]:
        out: Dict[Label, float] = {}
        for h, w in zip(self.hypotheses, self.weights()):
            for label in h.tracks:
                out[label] = out.get(label, 0.0) + float(w)
        return dict(sorted(out.items()))

    def expected_cardinality(self) -> float:
        pmf = self.cardinality_distribution()
        return float(np.arange(pmf.size) @ pmf)


class LabelRegistry:
    """Issues labels ``(step, tau)`` with a filter-wide running ``tau``."""

    def __init__(self, start: int = 0):
        self._next = start

    def issue(self, step: int) -> Label:
        label = Label(step, self._next)
        self._next += 1
        return label


@dataclass
class FilterStats:
    """Counters describing filter workload."""

    steps: int = 0
    hypotheses_predicted: int = 0
    hypotheses_updated: int = 0
    hypotheses_pruned: int = 0
    clusters_enumerated: int = 0
    clusters_sampled: int = 0
    maps_evaluated: int = 0
    births_created: int = 0
    start_time: float = field(default_factory=time.time)

    def merge(self, other: FilterStats) -> None:
        for name in self.to_dict():
            if name != "uptime_seconds":
                setattr(self, name, getattr(self, name) + getattr(other, name))

    def to_dict(self) -> Dict[str, float]:
        return {
            "steps": self.steps,
            "hypotheses_predicted": self.hypotheses_predicted,
            "hypotheses_updated": self.hypotheses_updated,
            "hypotheses_pruned": self.hypotheses_pruned,
            "clusters_enumerated": self.clusters_enumerated,
            "clusters_sampled": self.clusters_sampled,
            "maps_evaluated": self.maps_evaluated,
            "births_created": self.births_created,
            "uptime_seconds": time.time() - self.start_time,
        }


def merge_hypotheses(hypotheses: Sequence[Hypothesis]) -> List[Hypothesis]:
    """Combine hypotheses with equal label sets; per-label Gaussians are moment matched."""
    groups: Dict[Tuple[Label, ...], List[Hypothesis]] = {}
    for h in hypotheses:
        groups.setdefault(h.key, []).append(h)
    merged = []
    for key, group in groups.items():
        if len(group) == 1:
            merged.append(group[0])
            continue
        logs = np.array([h.log_weight for h in group])
        total = float(logsumexp(logs))
        shares = np.exp(logs - total)
        tracks = {}
        for label in key:
            components = [(float(w), h.tracks[label]) for w, h in zip(shares, group)]
            if all(g is components[0][1] for _, g in components):
                tracks[label] = components[0][1]
            else:
                tracks[label] = moment_match(components)
        merged.append(Hypothesis(tracks, total))
    return merged


def _ranked(hypotheses: Sequence[Hypothesis]) -> List[Hypothesis]:
    return sorted(hypotheses, key=lambda h: (-h.log_weight, h.key))


def k_best_bernoulli(log_on: Sequence[float], log_off: Sequence[float], k: int) -> Iterator[Tuple[Tuple[bool, ...], float]]:
    """
    Up to ``k`` joint outcomes of independent binary choices, most likely first.

    Yields ``(mask, log_probability)``; choices with a zero-probability side are
    fixed, and nothing is yielded if some choice has no possible outcome.
    """
    n = len(log_on)
    best = []
    base = 0.0
    flexible = []
    for i in range(n):
        on, off = log_on[i], log_off[i]
        if on == -math.inf and off == -math.inf:
            return
        choose_on = on >= off
        best.append(choose_on)
        base += on if choose_on else off
        if on != -math.inf and off != -math.inf:
            flexible.append((abs(on - off), i))
    if k < 1:
        return
    flexible.sort()
    costs = [c for c, _ in flexible]
    order = [i for _, i in flexible]
    yield tuple(best), base
    emitted = 1
    if not flexible:
        return
    heap: List[Tuple[float, int, Tuple[int, ...]]] = [(costs[0], 0, (0,))]
    counter = 1
    while heap and emitted < k:
        cost, _, flips = heapq.heappop(heap)
        mask = list(best)
        for p in flips:
            mask[order[p]] = not mask[order[p]]
        yield tuple(mask), base - cost
        emitted += 1
        last = flips[-1]
        if last + 1 < len(costs):
            heapq.heappush(heap, (cost + costs[last + 1], counter, flips + (last + 1,)))
            counter += 1
            heapq.heappush(heap, (cost - costs[last] + costs[last + 1], counter, flips[:-1] + (last + 1,)))
            counter += 1


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def predict(
    density: GlmbDensity,
    births: Sequence[BirthComponent],
    motion: MotionConfig,
    survival: SurvivalConfig,
    cap: int = 3000,
    *,
    transition: Transition | None = None,
) -> GlmbDensity:
    """
    Prediction with survival and birth; at most ``cap`` hypotheses survive.

    The cap is shared among prior hypotheses in proportion to their weight and
    each prior's share is filled best-first.

    Raises:
        DuplicateBirthLabel: if a birth label is already in use.
    """
    existing = density.labels()
    seen = set()
    for birth in births:
        if birth.label in existing or birth.label in seen:
            raise DuplicateBirthLabel(f"birth label {birth.label} already in use")
        seen.add(birth.label)
    transition = transition or build_transition(motion)
    weights = density.weights()
    predicted_cache: Dict[int, GaussianState] = {}
    out: List[Hypothesis] = []
    birth_on = [_log(b.r_b) for b in births]
    birth_off = [_log(1.0 - b.r_b) for b in births]
    for h, w in zip(density.hypotheses, weights):
        if w <= 0.0:
            continue
        labels = list(h.tracks)
        p_s = [survival_probability(h.tracks[label].mean, survival) for label in labels]
        log_on = [_log(p) for p in p_s] + birth_on
        log_off = [_log(1.0 - p) for p in p_s] + birth_off
        quota = max(1, math.ceil(cap * w))
        for mask, log_p in k_best_bernoulli(log_on, log_off, quota):
            tracks = {}
            for i, label in enumerate(labels):
                if mask[i]:
                    prior = h.tracks[label]
                    key = id(prior)
                    if key not in predicted_cache:
                        predicted_cache[key] = predict_state(prior, transition)
                    tracks[label] = predicted_cache[key]
            for b, birth in enumerate(births):
                if mask[len(labels) + b]:
                    tracks[birth.label] = birth.p_b
            out.append(Hypothesis(tracks, h.log_weight + log_p))
    if not out:
        logger.warning("prediction produced no hypotheses; keeping the empty set")
        out = [Hypothesis({}, 0.0)]
    hypotheses = _ranked(merge_hypotheses(out))[:cap]
    return GlmbDensity(hypotheses, density.class_id).normalized()


def _conditioning_order(sensors: Sequence[SensorModel]) -> List[int]:
    lidar = [s for s, sensor in enumerate(sensors) if isinstance(sensor, LidarSensor)]
    rest = [s for s, sensor in enumerate(sensors) if not isinstance(sensor, LidarSensor)]
    return lidar + rest


def gate_threshold(probability: float, dim: int) -> float:
    return math.inf if probability >= 1.0 else float(chi2.ppf(probability, dim))


def update(
    density: GlmbDensity,
    sensors: Sequence[SensorModel],
    frames: Mapping[str, Sequence[Measurement]],
    settings: FilterSettings = FilterSettings(),
    *,
    step: int = 0,
    stats: FilterStats | None = None,
) -> GlmbDensity:
    """
    Joint multi-sensor update.

    Only sensors named in ``frames`` take part; an empty list means the
    sensor reported no detections. Tuples list measurement indices in the
    order of ``sensors``; conditioning runs LiDAR first, then cameras.

    Raises:
        EmptyFrameSet: if no sensor is configured.
    """
    if not sensors:
        raise EmptyFrameSet("update needs at least one configured sensor")
    active = [sensor for sensor in sensors if sensor.name in frames]
    if not active:
        return density
    vectors = [np.array([z.vector for z in frames[sensor.name]]).reshape(len(frames[sensor.name]), sensor.dim) for sensor in active]
    thresholds = [gate_threshold(settings.gate_probability, sensor.dim) for sensor in active]
    order = _conditioning_order(active)
    rows: Dict[Tuple[int, int], np.ndarray] = {}
    conditioned: Dict[Tuple[int, Tuple[int, ...]], GaussianState] = {}
    matched: Dict[Tuple, GaussianState] = {}
    clusters: Dict[Tuple, Tuple[AssociationSummary, bool]] = {}

    def psi_row(track: GaussianState, s: int) -> np.ndarray:
        key = (id(track), s)
        if key not in rows:
            rows[key] = active[s].psi_row(track, vectors[s], thresholds[s])
        return rows[key]

    def condition(track: GaussianState, tup: Tuple[int, ...]) -> GaussianState:
        key = (id(track), tup)
        if key not in conditioned:
            g = track
            for s in order:
                if tup[s] > 0:
                    g = active[s].condition(g, vectors[s][tup[s] - 1])
            conditioned[key] = g
        return conditioned[key]

    posterior: List[Hypothesis] = []
    masses: List[List[np.ndarray]] = []
    for h_index, h in enumerate(density.hypotheses):
        labels = list(h.tracks)
        if not labels:
            posterior.append(h)
            masses.append([np.zeros(len(v)) for v in vectors])
            continue
        tables = []
        log_scale = 0.0
        for s in range(len(active)):
            table = np.vstack([psi_row(h.tracks[label], s) for label in labels])
            peaks = table.max(axis=1)
            if np.any(peaks <= 0.0):
                break
            tables.append(table / peaks[:, None])
            log_scale += float(np.sum(np.log(peaks)))
        else:
            psi = PsiTable(tuple(tables), tuple(sensor.name for sensor in active))
            summary = solve_associations(
                psi,
                mode=settings.association_mode,
                n_iter=settings.gibbs_iterations,
                seed=[settings.seed, step, h_index],
                enumeration_budget=settings.enumeration_budget,
                cache=clusters,
            )
            if stats is not None:
                stats.clusters_enumerated += summary.enumerated_clusters
                stats.clusters_sampled += summary.sampled_clusters
                stats.maps_evaluated += summary.maps_evaluated
            if summary.total_weight <= 0.0:
                continue
            tracks = {}
            for i, label in enumerate(labels):
                prior = h.tracks[label]
                marginal = tuple(sorted(summary.tuple_weights[i].items()))
                key = (id(prior), marginal)
                if key not in matched:
                    matched[key] = moment_match([(w, condition(prior, tup)) for tup, w in marginal])
                tracks[label] = matched[key]
            posterior.append(Hypothesis(tracks, h.log_weight + log_scale + math.log(summary.total_weight)))
            masses.append(summary.measurement_mass)
    if not posterior:
        logger.warning(f"step {step}: every hypothesis of class {density.class_id!r} lost all weight, keeping the prediction")
        return density
    logs = np.array([h.log_weight for h in posterior])
    shares = np.exp(logs - logsumexp(logs))
    association_mass = {}
    for s, sensor in enumerate(active):
        mass = sum((share * m[s] for share, m in zip(shares, masses)), np.zeros(len(vectors[s])))
        association_mass[sensor.name] = np.clip(mass, 0.0, 1.0)
    if stats is not None:
        stats.hypotheses_updated += len(posterior)
    updated = GlmbDensity(_ranked(merge_hypotheses(posterior)), density.class_id, association_mass)
    return updated.normalized()


def _birth_probabilities(mass: np.ndarray, config: BirthConfig) -> np.ndarray:
    raw = config.r_b_max * (1.0 - np.clip(mass, 0.0, 1.0))
    normalizer = max(1.0, float(raw.sum()) / config.expected_births)
    return np.clip(raw / normalizer, 0.0, config.r_b_max)


def adaptive_birth(
    measurements: Sequence[Measurement],
    association_mass: np.ndarray | None,
    config: BirthConfig,
    noise: LidarNoise,
    next_step: int,
    registry: LabelRegistry,
) -> List[BirthComponent]:
    """
    Birth components for the next step from this step's LiDAR measurements.

    Weakly associated measurements get the largest existence, ``r_b_max``; the
    total is rescaled so the expected births stay within ``expected_births``.
    """
    mass = np.zeros(len(measurements)) if association_mass is None else np.asarray(association_mass, dtype=float)
    r_b = _birth_probabilities(mass, config)
    position_variance = config.position_variance or noise.nu_p
    shape_variance = config.shape_variance or noise.nu_e
    covariance = np.diag(
        make_state(position_variance, (config.velocity_variance,) * 3, shape_variance)
    )
    births = []
    for z, r in zip(measurements, r_b):
        mean = make_state(z.center, (0.0, 0.0, 0.0), lidar_box_to_shape(z.log_dims))
        births.append(BirthComponent(registry.issue(next_step), float(r), GaussianState(mean, covariance), "lidar"))
    return births


def camera_birth(
    sensor: CameraSensor,
    measurements: Sequence[Measurement],
    association_mass: np.ndarray | None,
    config: BirthConfig,
    default_size: Sequence[float],
    next_step: int,
    registry: LabelRegistry,
    normalizer: float = 1.0,
) -> List[BirthComponent]:
    """
    Birth components placed along each camera box's centre ray.

    Used when no LiDAR is available; depth is unknown so the position
    variance is large.
    """
    mass = np.zeros(len(measurements)) if association_mass is None else np.asarray(association_mass, dtype=float)
    r_b = np.clip(config.r_b_max * (1.0 - np.clip(mass, 0.0, 1.0)) / normalizer, 0.0, config.r_b_max)
    zeta = np.log(np.asarray(default_size, dtype=float) / 2.0)
    covariance = np.diag(
        make_state((config.camera_depth_variance,) * 3, (config.velocity_variance,) * 3, (config.camera_shape_variance,) * 3)
    )
    births = []
    for z, r in zip(measurements, r_b):
        center = sensor.camera.back_project(z.bbox.center, config.camera_birth_depth)
        mean = make_state(center, (0.0, 0.0, 0.0), zeta)
        births.append(BirthComponent(registry.issue(next_step), float(r), GaussianState(mean, covariance), "camera"))
    return births


def prune(density: GlmbDensity, weight_floor: float = 1e-4, max_hypotheses: int = 1000) -> GlmbDensity:
    """Drop hypotheses below ``weight_floor``, keep the best ``max_hypotheses``, renormalize."""
    ranked = _ranked(density.normalized().hypotheses)
    kept = [h for h in ranked if math.exp(h.log_weight) >= weight_floor][:max_hypotheses]
    if not kept:
        kept = ranked[:1]
    return GlmbDensity(kept, density.class_id, density.association_mass).normalized()


def extract(density: GlmbDensity) -> List[TrackEstimate]:
    """
    Tracks of the best hypothesis at the most likely cardinality.

    Ties in cardinality resolve to the smaller count, ties in weight to the
    smaller label key.
    """
    if not density.hypotheses:
        return []
    pmf = density.cardinality_distribution()
    n_best = int(np.argmax(pmf))
    weights = density.weights()
    candidates = [(w, h) for w, h in zip(weights, density.hypotheses) if len(h) == n_best]
    best = min(candidates, key=lambda item: (-item[0], item[1].key))[1]
    existence = density.existence_probabilities()
    out = []
    for label, g in best.tracks.items():
        out.append(
            TrackEstimate(
                label=label,
                class_id=density.class_id,
                center=g.position.copy(),
                dims=2.0 * np.exp(g.shape),
                velocity=g.velocity.copy(),
                existence_prob=float(existence[label]),
            )
        )
    return out


class GlmbFilter:
    """
    Recursive filter for one object class.

    Each step runs predict, update, birth for the next step, prune and
    extract. Births come from LiDAR measurements when a LiDAR is
    configured, otherwise from camera boxes.
    """

    def __init__(
        self,
        class_id: str,
        sensors: Sequence[SensorModel],
        motion: MotionConfig,
        survival: SurvivalConfig,
        birth: BirthConfig,
        settings: FilterSettings,
        lidar_noise: LidarNoise,
        default_size: Sequence[float] = (1.9, 4.6, 1.7),
    ):
        if not sensors:
            raise EmptyFrameSet(f"class {class_id!r} has no sensors")
        self.class_id = class_id
        self.sensors = list(sensors)
        self.motion = motion
        self.survival = survival
        self.birth_config = birth
        self.settings = settings
        self.lidar_noise = lidar_noise
        self.default_size = tuple(default_size)
        self.transition = build_transition(motion)
        self.density = GlmbDensity.empty(class_id)
        self.births: List[BirthComponent] = []
        self.registry = LabelRegistry()
        self.stats = FilterStats()

    @property
    def has_lidar(self) -> bool:
        return any(isinstance(sensor, LidarSensor) for sensor in self.sensors)

    def step(self, frames: Mapping[str, Sequence[Measurement]] | None, step: int) -> List[TrackEstimate]:
        """Advance one step; ``None`` or an empty mapping means no sensor reported."""
        frames = frames or {}
        predicted = predict(
            self.density,
            self.births,
            self.motion,
            self.survival,
            self.settings.predict_cap,
            transition=self.transition,
        )
        self.stats.hypotheses_predicted += len(predicted.hypotheses)
        updated = update(predicted, self.sensors, frames, self.settings, step=step, stats=self.stats) if frames else predicted
        self.births = [b for b in self._births(updated, frames, step + 1) if b.r_b > 0.0]
        self.stats.births_created += len(self.births)
        pruned = prune(updated, self.settings.weight_floor, self.settings.max_hypotheses)
        self.stats.hypotheses_pruned += len(updated.hypotheses) - len(pruned.hypotheses)
        self.stats.steps += 1
        self.density = pruned
        logger.debug(
            f"class {self.class_id} step {step}: {len(pruned.hypotheses)} hypotheses, "
            f"expected cardinality {pruned.expected_cardinality():.2f}"
        )
        return extract(pruned)

    def _births(self, density: GlmbDensity, frames: Mapping[str, Sequence[Measurement]], next_step: int) -> List[BirthComponent]:
        masses = density.association_mass
        if self.has_lidar:
            lidar = next(sensor for sensor in self.sensors if isinstance(sensor, LidarSensor))
            measurements = frames.get(lidar.name, ())
            return adaptive_birth(measurements, masses.get(lidar.name), self.birth_config, self.lidar_noise, next_step, self.registry)
        cameras = [sensor for sensor in self.sensors if isinstance(sensor, CameraSensor) and sensor.name in frames]
        raw = sum(
            float(np.sum(self.birth_config.r_b_max * (1.0 - np.clip(masses.get(c.name, np.zeros(len(frames[c.name]))), 0.0, 1.0))))
            for c in cameras
        )
        normalizer = max(1.0, raw / self.birth_config.expected_births)
        births: List[BirthComponent] = []
        for camera in cameras:
            births.extend(
                camera_birth(
                    camera,
                    frames[camera.name],
                    masses.get(camera.name),
                    self.birth_config,
                    self.default_size,
                    next_step,
                    self.registry,
                    normalizer,
                )
            )
        return births
