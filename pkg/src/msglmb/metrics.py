"""
Tracking metrics: CLEAR-MOT counts with identity switches, track coverage
(MT/ML) and nuScenes-style AMOTA/AMOTP over confidence thresholds.

Boxes are matched per frame and per class by minimum-cost assignment on
planar centre distance; pairs farther than the radius never match.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NoConfidences
from .types import MetricsRow

logger = logging.getLogger(__name__)

CONTINUITY_BONUS = 1e-9
MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2


@dataclass(frozen=True)
class GroundTruthBox:
    gt_id: str
    class_name: str
    center: Tuple[float, float, float]
    dims: Tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class EstimatedBox:
    label: str
    class_name: str
    center: Tuple[float, float, float]
    dims: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    confidence: Optional[float] = None


@dataclass
class EvalFrame:
    """Ground truth and estimates of one frame."""

    gt: List[GroundTruthBox] = field(default_factory=list)
    est: List[EstimatedBox] = field(default_factory=list)
    frame: int = 0

    def __post_init__(self) -> None:
        if len({g.gt_id for g in self.gt}) != len(self.gt):
            raise ValueError(f"frame {self.frame}: duplicate ground-truth ids")
        if len({(e.class_name, e.label) for e in self.est}) != len(self.est):
            raise ValueError(f"frame {self.frame}: duplicate estimate labels within a class")


@dataclass
class FrameMatch:
    """Matched ``(gt index, est index, distance)`` pairs and the leftovers."""

    pairs: List[Tuple[int, int, float]]
    unmatched_gt: List[int]
    unmatched_est: List[int]


@dataclass
class MotSummary:
    """Metric values for one class or for all classes."""

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

    def to_row(self, scope: str) -> MetricsRow:
        return MetricsRow(
            scope=scope,
            amota=self.amota,
            amotp=self.amotp,
            mota=self.mota,
            motp=self.motp,
            recall=self.recall,
            ids=self.ids,
            tp=self.tp,
            fp=self.fp,
            fn=self.fn,
            mt=self.mt,
            ml=self.ml,
            gt=self.gt,
        )


def _planar_distances(gt: Sequence[GroundTruthBox], est: Sequence[EstimatedBox]) -> np.ndarray:
    a = np.array([g.center[:2] for g in gt], dtype=float).reshape(len(gt), 2)
    b = np.array([e.center[:2] for e in est], dtype=float).reshape(len(est), 2)
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)


def match_frame(
    gt: Sequence[GroundTruthBox],
    est: Sequence[EstimatedBox],
    radius: float = 2.0,
    previous: Mapping[str, str] | None = None,
) -> FrameMatch:
    """
    Minimum-cost one-to-one matching within ``radius``.

    ``previous`` maps ground-truth ids to their last matched label; among
    equal-cost assignments the one keeping those pairs wins.
    """
    if not gt or not est:
        return FrameMatch([], list(range(len(gt))), list(range(len(est))))
    distances = _planar_distances(gt, est)
    cost = distances.copy()
    if previous:
        for i, g in enumerate(gt):
            last = previous.get(g.gt_id)
            if last is None:
                continue
            for j, e in enumerate(est):
                if e.label == last:
                    cost[i, j] -= CONTINUITY_BONUS
    forbidden = distances > radius
    cost[forbidden] = radius * 1e6 + 1.0
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(i), int(j), float(distances[i, j])) for i, j in zip(rows, cols) if not forbidden[i, j]]
    matched_gt = {i for i, _, _ in pairs}
    matched_est = {j for _, j, _ in pairs}
    return FrameMatch(
        sorted(pairs),
        [i for i in range(len(gt)) if i not in matched_gt],
        [j for j in range(len(est)) if j not in matched_est],
    )


class MotAccumulator:
    """Frame-by-frame CLEAR-MOT bookkeeping for one class."""

    def __init__(self, radius: float = 2.0):
        self.radius = radius
        self.tp = 0
        self.fp = 0
        self.fn = 0
        self.ids = 0
        self.distance_sum = 0.0
        self.last_label: Dict[str, str] = {}
        self.gt_frames: Counter = Counter()
        self.gt_matched: Counter = Counter()

    def add_frame(self, gt: Sequence[GroundTruthBox], est: Sequence[EstimatedBox]) -> FrameMatch:
        match = match_frame(gt, est, self.radius, self.last_label)
        for g in gt:
            self.gt_frames[g.gt_id] += 1
        for i, j, distance in match.pairs:
            gt_id, label = gt[i].gt_id, est[j].label
            last = self.last_label.get(gt_id)
            if last is not None and last != label:
                self.ids += 1
            self.last_label[gt_id] = label
            self.gt_matched[gt_id] += 1
            self.distance_sum += distance
        self.tp += len(match.pairs)
        self.fn += len(match.unmatched_gt)
        self.fp += len(match.unmatched_est)
        return match

    @property
    def gt(self) -> int:
        return self.tp + self.fn

    def coverage(self) -> Tuple[int, int]:
        """Counts of mostly tracked and mostly lost ground-truth tracks."""
        mt = ml = 0
        for gt_id, frames in self.gt_frames.items():
            ratio = self.gt_matched[gt_id] / frames
            if ratio >= MOSTLY_TRACKED:
                mt += 1
            elif ratio < MOSTLY_LOST:
                ml += 1
        return mt, ml

    def mota(self) -> float:
        if self.gt == 0:
            return math.nan
        return 1.0 - (self.fn + self.fp + self.ids) / self.gt

    def motp(self) -> float:
        return self.distance_sum / self.tp if self.tp else math.nan


def _class_names(sequence: Sequence[EvalFrame]) -> List[str]:
    names = set()
    for frame in sequence:
        names.update(g.class_name for g in frame.gt)
        names.update(e.class_name for e in frame.est)
    return sorted(names)


def _accumulate(sequence: Sequence[EvalFrame], class_name: str, radius: float, threshold: float | None = None) -> MotAccumulator:
    acc = MotAccumulator(radius)
    for frame in sequence:
        gt = [g for g in frame.gt if g.class_name == class_name]
        est = [e for e in frame.est if e.class_name == class_name]
        if threshold is not None:
            est = [e for e in est if e.confidence is not None and e.confidence >= threshold]
        acc.add_frame(gt, est)
    return acc


def _summary(accumulators: Sequence[MotAccumulator], amota: float = math.nan, amotp: float = math.nan) -> MotSummary:
    tp = sum(a.tp for a in accumulators)
    fp = sum(a.fp for a in accumulators)
    fn = sum(a.fn for a in accumulators)
    ids = sum(a.ids for a in accumulators)
    gt = tp + fn
    coverage = [a.coverage() for a in accumulators]
    distance = sum(a.distance_sum for a in accumulators)
    return MotSummary(
        amota=amota,
        amotp=amotp,
        mota=1.0 - (fn + fp + ids) / gt if gt else math.nan,
        motp=distance / tp if tp else math.nan,
        recall=tp / gt if gt else math.nan,
        ids=ids,
        tp=tp,
        fp=fp,
        fn=fn,
        mt=sum(mt for mt, _ in coverage),
        ml=sum(ml for _, ml in coverage),
        gt=gt,
    )


def clear_mot(sequence: Sequence[EvalFrame], radius: float = 2.0, class_name: str | None = None) -> MotSummary:
    """
    CLEAR-MOT summary over a sequence.

    Matching happens within each class; with ``class_name=None`` the counts
    of all classes are pooled.
    """
    names = [class_name] if class_name is not None else _class_names(sequence)
    return _summary([_accumulate(sequence, name, radius) for name in names])


def _check_confidences(sequence: Sequence[EvalFrame]) -> None:
    for frame in sequence:
        for e in frame.est:
            if e.confidence is None or not math.isfinite(e.confidence):
                raise NoConfidences(f"estimate {e.label!r} in frame {frame.frame} has no confidence score")


def recall_thresholds(scores: Sequence[float], gt_count: int, recall_points: int = 40) -> np.ndarray:
    """
    Confidence thresholds reaching each recall target in ``linspace(0.1, 1, n)``.

    ``scores`` are confidences of matched estimates; unreachable targets get NaN.
    """
    targets = np.linspace(0.1, 1.0, recall_points).round(12)
    if gt_count == 0 or len(scores) == 0:
        return np.full(recall_points, np.nan)
    ordered = np.sort(np.asarray(scores, dtype=float))[::-1]
    recalls = np.arange(1, ordered.size + 1) / gt_count
    thresholds = np.interp(targets, recalls, ordered, right=0.0)
    thresholds[targets > recalls[-1] + 1e-12] = np.nan
    return thresholds


def motar(acc: MotAccumulator, gt_count: int) -> float:
    """Recall-normalized MOTA, clipped at zero; NaN without true positives."""
    if acc.tp == 0 or gt_count == 0:
        return math.nan
    r = acc.tp / gt_count
    return max(0.0, 1.0 - (acc.fn + acc.ids + acc.fp - (1.0 - r) * gt_count) / (r * gt_count))


def _class_amota(sequence: Sequence[EvalFrame], class_name: str, radius: float, recall_points: int) -> Tuple[float, float]:
    scores = []
    acc = MotAccumulator(radius)
    for frame in sequence:
        gt = [g for g in frame.gt if g.class_name == class_name]
        est = [e for e in frame.est if e.class_name == class_name]
        match = acc.add_frame(gt, est)
        scores.extend(est[j].confidence for _, j, _ in match.pairs)
    gt_count = acc.gt
    if gt_count == 0:
        return math.nan, math.nan
    thresholds = recall_thresholds(scores, gt_count, recall_points)
    motars = []
    motps = []
    cache: Dict[float, Tuple[float, float]] = {}
    for threshold in thresholds[np.isfinite(thresholds)]:
        if threshold not in cache:
            thresholded = _accumulate(sequence, class_name, radius, float(threshold))
            value = motar(thresholded, gt_count)
            cache[threshold] = (0.0 if math.isnan(value) else value, radius if thresholded.tp == 0 else thresholded.motp())
        motars.append(cache[threshold][0])
        motps.append(cache[threshold][1])
    if not motars:
        return 0.0, radius
    return float(np.mean(motars)), float(np.mean(motps))


def amota(
    sequence: Sequence[EvalFrame],
    recall_points: int = 40,
    radius: float = 2.0,
    class_name: str | None = None,
) -> Tuple[float, float]:
    """
    AMOTA and AMOTP, averaged over classes that have ground truth.

    Raises:
        NoConfidences: if any estimate lacks a confidence score.
    """
    _check_confidences(sequence)
    names = [class_name] if class_name is not None else _class_names(sequence)
    values = [_class_amota(sequence, name, radius, recall_points) for name in names]
    values = [v for v in values if not math.isnan(v[0])]
    if not values:
        return math.nan, math.nan
    return float(np.mean([v[0] for v in values])), float(np.mean([v[1] for v in values]))


def evaluate(sequence: Sequence[EvalFrame], radius: float = 2.0, recall_points: int = 40) -> Dict[str, MotSummary]:
    """Per-class summaries plus ``overall`` (pooled counts, class-averaged AMOTA)."""
    has_scores = True
    try:
        _check_confidences(sequence)
    except NoConfidences:
        has_scores = False
        logger.warning("Estimates carry no confidences; AMOTA/AMOTP reported as NaN")
    results: Dict[str, MotSummary] = {}
    accumulators = []
    class_scores = []
    for name in _class_names(sequence):
        acc = _accumulate(sequence, name, radius)
        accumulators.append(acc)
        a, p = _class_amota(sequence, name, radius, recall_points) if has_scores else (math.nan, math.nan)
        if not math.isnan(a):
            class_scores.append((a, p))
        results[name] = _summary([acc], a, p)
    overall_amota = float(np.mean([a for a, _ in class_scores])) if class_scores else math.nan
    overall_amotp = float(np.mean([p for _, p in class_scores])) if class_scores else math.nan
    results["overall"] = _summary(accumulators, overall_amota, overall_amotp)
    return results


def format_table(results: Mapping[str, MotSummary]) -> str:
    """Fixed-width text table of metric summaries."""
    header = f"{'scope':<12} {'AMOTA':>7} {'AMOTP':>7} {'MOTA':>7} {'MOTP':>7} {'recall':>7} {'IDS':>5} {'FP':>6} {'FN':>6} {'MT':>4} {'ML':>4}"
    lines = [header]
    for scope, s in results.items():
        lines.append(
            f"{scope:<12} {s.amota:>7.3f} {s.amotp:>7.3f} {s.mota:>7.3f} {s.motp:>7.3f} {s.recall:>7.3f} "
            f"{s.ids:>5d} {s.fp:>6d} {s.fn:>6d} {s.mt:>4d} {s.ml:>4d}"
        )
    return "\n".join(lines)
