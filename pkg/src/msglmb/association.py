"""
Multi-sensor data association.

An association map assigns every label one measurement index per sensor
(0 = missed). A map is valid when no measurement index > 0 is used by two
labels of the same sensor. Its weight is the product of the per-sensor
association weights ``psi``; this module enumerates maps exactly for small
problems and samples them with a Gibbs chain otherwise.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import reduce
from typing import Dict
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np

from .errors import BudgetExceeded
from .errors import DegenerateConic
from .errors import PointBehindCamera
from .sensors import Measurement
from .sensors import SensorModel

logger = logging.getLogger(__name__)

ENUMERATION_BUDGET = 10**6
TUPLE_ENUMERATION_LIMIT = 4096

LabelTuple = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class PsiTable:
    """Per-sensor weight tables of shape ``(n_labels, |Z_s| + 1)``."""

    tables: Tuple[np.ndarray, ...]
    sensor_names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        tables = tuple(np.array(t, dtype=float, ndmin=2) for t in self.tables)
        if not tables:
            raise ValueError("a psi table needs at least one sensor")
        rows = {t.shape[0] for t in tables}
        if len(rows) != 1:
            raise ValueError(f"sensor tables disagree on label count: {sorted(rows)}")
        for t in tables:
            if not np.all(np.isfinite(t)) or np.any(t < 0.0):
                raise ValueError("psi weights must be finite and non-negative")
            t.setflags(write=False)
        object.__setattr__(self, "tables", tables)
        if not self.sensor_names:
            object.__setattr__(self, "sensor_names", tuple(f"sensor{s}" for s in range(len(tables))))

    @property
    def n_labels(self) -> int:
        return self.tables[0].shape[0]

    @property
    def n_sensors(self) -> int:
        return len(self.tables)

    @property
    def sizes(self) -> Tuple[int, ...]:
        """Measurement count per sensor."""
        return tuple(t.shape[1] - 1 for t in self.tables)

    def joint(self, label: int, tup: Sequence[int]) -> float:
        out = 1.0
        for table, j in zip(self.tables, tup):
            out *= table[label, j]
        return float(out)

    def weight(self, assignments: np.ndarray) -> float:
        """Map weight, multiplied in a fixed label-major order."""
        out = 1.0
        for i in range(assignments.shape[0]):
            for s, table in enumerate(self.tables):
                out *= table[i, assignments[i, s]]
        return float(out)

    def map_count_bound(self) -> int:
        bound = 1
        for m in self.sizes:
            bound *= (m + 1) ** self.n_labels
        return bound

    def compact(self, labels: Sequence[int]) -> Tuple[PsiTable, Tuple[np.ndarray, ...]]:
        """
        Rows of ``labels`` restricted to the measurements they can take.

        Returns the smaller table and, per sensor, the original column of each
        kept column (column 0, the miss, is always kept).
        """
        index = list(labels)
        columns = []
        for t in self.tables:
            used = np.flatnonzero(np.any(t[index, 1:] > 0.0, axis=0)) + 1
            columns.append(np.concatenate(([0], used)).astype(np.int64))
        tables = tuple(t[np.ix_(index, c)] for t, c in zip(self.tables, columns))
        return PsiTable(tables, self.sensor_names), tuple(columns)

    def content_key(self) -> Tuple[Tuple[Tuple[int, ...], bytes], ...]:
        return tuple((t.shape, t.tobytes()) for t in self.tables)


@dataclass(frozen=True, eq=False)
class AssociationMap:
    """Assignment matrix ``(n_labels, n_sensors)`` of measurement indices."""

    assignments: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.assignments, dtype=np.int64)
        if a.ndim != 2:
            raise ValueError("association map must be a 2-D array")
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    @property
    def key(self) -> Tuple[LabelTuple, ...]:
        return tuple(tuple(int(j) for j in row) for row in self.assignments)

    def is_valid(self) -> bool:
        for column in self.assignments.T:
            used = column[column > 0]
            if used.size != np.unique(used).size:
                return False
        return True

    def __eq__(self, other: object) -> bool:
        return isinstance(other, AssociationMap) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)


@dataclass(frozen=True, eq=False)
class WeightedMap:
    """Association map with its exact weight and Gibbs visit count."""

    amap: AssociationMap
    weight: float
    visits: int = 0


def _ranked(maps: List[WeightedMap]) -> List[WeightedMap]:
    return sorted(maps, key=lambda m: (-m.weight, m.amap.key))


def psi_single(sensor: SensorModel, j: int, state: np.ndarray, measurements: Sequence[Measurement]) -> float:
    """
    Point association weight of measurement ``j`` (0 = missed) for a state.

    ``1 - P_D`` for a miss, ``P_D * g(z_j | x) / kappa(z_j)`` otherwise; zero
    when the state cannot produce a measurement for this sensor.
    """
    p_d = sensor.detection_probability(state)
    if j == 0:
        return 1.0 - p_d
    z = measurements[j - 1]
    try:
        g = float(np.exp(sensor.log_likelihood(z, state)))
    except (PointBehindCamera, DegenerateConic):
        return 0.0
    return p_d * g / sensor.clutter_intensity(z)


def psi_joint(
    tup: Sequence[int],
    state: np.ndarray,
    sensors: Sequence[SensorModel],
    frames: Sequence[Sequence[Measurement]],
) -> float:
    """Product of :func:`psi_single` over sensors."""
    out = 1.0
    for sensor, j, measurements in zip(sensors, tup, frames):
        out *= psi_single(sensor, j, state, measurements)
    return out


def _sensor_assignments(n_labels: int, n_measurements: int) -> List[LabelTuple]:
    out = []
    for combo in itertools.product(range(n_measurements + 1), repeat=n_labels):
        used = [j for j in combo if j > 0]
        if len(used) == len(set(used)):
            out.append(combo)
    return out


def enumerate_maps(psi: PsiTable, budget: int = ENUMERATION_BUDGET) -> List[WeightedMap]:
    """
    Every valid association map with its weight, ranked by decreasing weight.

    Ties are broken by the lexicographic map key.

    Raises:
        BudgetExceeded: if the map space bound exceeds ``budget``.
    """
    bound = psi.map_count_bound()
    if bound > budget:
        raise BudgetExceeded(bound, budget)
    n = psi.n_labels
    per_sensor = [_sensor_assignments(n, m) for m in psi.sizes]
    maps = []
    for columns in itertools.product(*per_sensor):
        assignments = np.array(columns, dtype=np.int64).reshape(psi.n_sensors, n).T
        maps.append(WeightedMap(AssociationMap(assignments), psi.weight(assignments)))
    return _ranked(maps)


def label_conditional(psi: PsiTable, assignments: np.ndarray, label: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Support and weights of one label's tuple conditional given the others.

    Returns per-sensor arrays of allowed measurement indices and their psi
    weights; measurements used by another label or with zero weight are
    excluded. The conditional over tuples is the outer product of the weights.
    """
    others = np.delete(assignments, label, axis=0)
    supports = []
    factors = []
    for s, table in enumerate(psi.tables):
        row = table[label]
        allowed = row > 0.0
        taken = others[:, s]
        taken = taken[taken > 0]
        if taken.size:
            allowed[taken] = False
        index = np.flatnonzero(allowed)
        supports.append(index)
        factors.append(row[index])
    return supports, factors


def gibbs_sample(
    psi: PsiTable,
    n_iter: int = 1000,
    seed: int | np.random.SeedSequence = 0,
    *,
    harvest: bool = True,
) -> List[WeightedMap]:
    """
    Distinct association maps found by a systematic-scan Gibbs chain.

    Each sweep resamples every label's tuple from its exact conditional; when
    the tuple space is small it is drawn jointly, otherwise one sensor at a
    time. With ``harvest`` every positive-weight tuple evaluated in a
    conditional is kept as a neighbouring map. All returned maps carry their
    exact weight; ``visits`` counts how often the chain stood on each map.
    """
    n, n_sensors = psi.n_labels, psi.n_sensors
    if n == 0:
        empty = AssociationMap(np.zeros((0, n_sensors), dtype=np.int64))
        return [WeightedMap(empty, 1.0, n_iter)]
    rng = np.random.default_rng(seed)
    uniforms = rng.random((n_iter, n, n_sensors))
    current = np.zeros((n, n_sensors), dtype=np.int64)
    visits: Dict[bytes, int] = {}
    found: Dict[bytes, np.ndarray] = {}
    contexts = set()
    for it in range(n_iter):
        for i in range(n):
            supports, factors = label_conditional(psi, current, i)
            sizes = [f.size for f in factors]
            if 0 in sizes:
                current[i] = 0
                continue
            space = int(np.prod(sizes))
            if space <= TUPLE_ENUMERATION_LIMIT:
                joint = reduce(np.multiply.outer, factors).ravel() if n_sensors > 1 else factors[0]
                cumulative = np.cumsum(joint)
                pick = int(np.searchsorted(cumulative, uniforms[it, i, 0] * cumulative[-1], side="right"))
                pick = min(pick, space - 1)
                position = np.unravel_index(pick, sizes)
                current[i] = [supports[s][position[s]] for s in range(n_sensors)]
                if harvest:
                    context = (i, np.delete(current, i, axis=0).tobytes())
                    if context not in contexts:
                        contexts.add(context)
                        for flat in np.flatnonzero(joint > 0.0):
                            cell = np.unravel_index(int(flat), sizes)
                            neighbour = current.copy()
                            neighbour[i] = [supports[s][cell[s]] for s in range(n_sensors)]
                            found.setdefault(neighbour.tobytes(), neighbour)
            else:
                for s in range(n_sensors):
                    cumulative = np.cumsum(factors[s])
                    pick = int(np.searchsorted(cumulative, uniforms[it, i, s] * cumulative[-1], side="right"))
                    current[i, s] = supports[s][min(pick, sizes[s] - 1)]
        key = current.tobytes()
        visits[key] = visits.get(key, 0) + 1
        found.setdefault(key, current.copy())
    maps = []
    for key, assignments in found.items():
        weight = psi.weight(assignments)
        if weight > 0.0:
            maps.append(WeightedMap(AssociationMap(assignments), weight, visits.get(key, 0)))
    return _ranked(maps)


def run_chains(psi: PsiTable, n_iter: int, seeds: Sequence[int]) -> List[WeightedMap]:
    """Union of several independent chains, visits summed per map."""
    merged: Dict[AssociationMap, WeightedMap] = {}
    for seed in seeds:
        for wm in gibbs_sample(psi, n_iter, seed):
            prior = merged.get(wm.amap)
            merged[wm.amap] = wm if prior is None else WeightedMap(wm.amap, wm.weight, prior.visits + wm.visits)
    return _ranked(list(merged.values()))


def cluster_labels(psi: PsiTable) -> List[List[int]]:
    """
    Partition labels into groups that compete for at least one measurement.

    Labels in different groups never share a positive-weight measurement, so
    the map weight factorises over groups.
    """
    parent = list(range(psi.n_labels))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for table in psi.tables:
        for j in range(1, table.shape[1]):
            rivals = np.flatnonzero(table[:, j] > 0.0)
            for other in rivals[1:]:
                a, b = find(int(rivals[0])), find(int(other))
                if a != b:
                    parent[max(a, b)] = min(a, b)
    groups: Dict[int, List[int]] = {}
    for i in range(psi.n_labels):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


@dataclass
class AssociationSummary:
    """
    Sufficient statistics of a set of weighted maps for one hypothesis.

    ``tuple_weights[i]`` maps each tuple of label ``i`` to its normalized
    marginal; ``measurement_mass[s][j - 1]`` is the probability that
    measurement ``j`` of sensor ``s`` is assigned to some label.
    """

    total_weight: float
    tuple_weights: List[Dict[LabelTuple, float]]
    measurement_mass: List[np.ndarray]
    enumerated_clusters: int = 0
    sampled_clusters: int = 0
    maps_evaluated: int = 0


def summarize_maps(maps: Sequence[WeightedMap], psi: PsiTable) -> AssociationSummary:
    total = float(sum(m.weight for m in maps))
    tuple_weights: List[Dict[LabelTuple, float]] = [dict() for _ in range(psi.n_labels)]
    mass = [np.zeros(m) for m in psi.sizes]
    if total > 0.0:
        for wm in maps:
            if wm.weight <= 0.0:
                continue
            share = wm.weight / total
            for i, row in enumerate(wm.amap.key):
                tuple_weights[i][row] = tuple_weights[i].get(row, 0.0) + share
                for s, j in enumerate(row):
                    if j > 0:
                        mass[s][j - 1] += share
    return AssociationSummary(total, tuple_weights, mass, maps_evaluated=len(maps))


def solve_associations(
    psi: PsiTable,
    *,
    mode: str = "auto",
    n_iter: int = 1000,
    seed: int | Sequence[int] = 0,
    enumeration_budget: int = 1000,
    cache: Dict[Tuple, Tuple[AssociationSummary, bool]] | None = None,
) -> AssociationSummary:
    """
    Association statistics for one hypothesis, cluster by cluster.

    ``mode`` is ``"auto"`` (enumerate clusters whose map bound fits the
    budget, sample the rest), ``"enumerate"`` or ``"gibbs"``. Each cluster is
    solved over the measurements its labels can take. ``cache`` keeps cluster
    solutions by table content so hypotheses sharing tracks reuse them.
    """
    if mode not in ("auto", "enumerate", "gibbs"):
        raise ValueError(f"unknown association mode {mode!r}")
    n = psi.n_labels
    summary = AssociationSummary(1.0, [dict() for _ in range(n)], [np.zeros(m) for m in psi.sizes])
    seed_entropy = [int(v) for v in np.atleast_1d(seed)]
    for c, labels in enumerate(cluster_labels(psi)):
        sub, columns = psi.compact(labels)
        key = (mode, sub.content_key())
        if cache is not None and key in cache:
            part, sampled = cache[key]
        else:
            sampled = not (mode == "enumerate" or (mode == "auto" and sub.map_count_bound() <= enumeration_budget))
            if sampled:
                maps = gibbs_sample(sub, n_iter, np.random.SeedSequence(seed_entropy + [c]))
            else:
                maps = enumerate_maps(sub)
            part = summarize_maps(maps, sub)
            if cache is not None:
                cache[key] = (part, sampled)
        if sampled:
            summary.sampled_clusters += 1
        else:
            summary.enumerated_clusters += 1
        summary.maps_evaluated += part.maps_evaluated
        summary.total_weight *= part.total_weight
        for local, i in enumerate(labels):
            summary.tuple_weights[i] = {
                tuple(int(columns[s][j]) for s, j in enumerate(tup)): w for tup, w in part.tuple_weights[local].items()
            }
        for s in range(psi.n_sensors):
            summary.measurement_mass[s][columns[s][1:] - 1] += part.measurement_mass[s]
    for s in range(psi.n_sensors):
        np.clip(summary.measurement_mass[s], 0.0, 1.0, out=summary.measurement_mass[s])
    return summary
