"""Interval similarity measures and retrieval-backed interval scoring.

The base similarity compares a candidate interval with its nearest
reference interval by feature distance plus an `alpha`-weighted relative
duration mismatch; it is always <= 0 and equals 0 only for an exact match.
The OOD variant compares end frames only and adds a `beta`-weighted
change-point heuristic so novel sub-tasks can still score well. An
interval's score is its duration times its similarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DecompositionResult, Demonstration, Interval, angular_distance, unit_distances
from .index import (
    MODE_END_ONLY,
    MODE_FULL,
    IntervalFeature,
    IntervalIndex,
    features_for_pairs,
    query_ids,
)

MODE_BASE = "base"
MODE_OOD = "ood"


@dataclass(frozen=True)
class ScoreParams:
    """Similarity weights and admissible interval lengths.

    `alpha` trades feature distance against relative duration mismatch in
    base mode; `beta` weights the change-point heuristic in OOD mode.
    `uvd_slack` is the additive tolerance of the monotone goal-distance
    scan backing that heuristic.
    """

    alpha: float = 1.0
    beta: float = 0.0
    mode: str = MODE_BASE
    uvd_slack: float = 1e-3
    l_min: int = 2
    l_max: int | None = None

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.uvd_slack < 0:
            raise ValueError("alpha, beta, and uvd_slack must be >= 0")
        if self.mode not in (MODE_BASE, MODE_OOD):
            raise ValueError(f"unknown scoring mode {self.mode!r}")
        if self.l_min < 2:
            raise ValueError(f"l_min must be >= 2, got {self.l_min}")
        if self.l_max is not None and self.l_max < self.l_min:
            raise ValueError(f"l_max {self.l_max} < l_min {self.l_min}")

    @property
    def feature_mode(self) -> str:
        return MODE_FULL if self.mode == MODE_BASE else MODE_END_ONLY


def interval_score(duration: int, sim: float) -> float:
    """Duration-weighted similarity: the score of one interval."""
    return duration * sim


def sim_base(probe: IntervalFeature, neighbor: IntervalFeature, alpha: float) -> float:
    """-(distance + alpha * |1 - duration ratio|); 0 only on exact match."""
    if probe.mode != MODE_FULL or neighbor.mode != MODE_FULL:
        raise ValueError("sim_base requires full-mode features")
    delta = angular_distance(probe.vector, neighbor.vector)
    return -(delta + alpha * abs(1.0 - probe.duration / neighbor.duration))


def sim_ood(probe: IntervalFeature, neighbor: IntervalFeature, g_value: float, beta: float) -> float:
    """End-frame retrieval term plus beta-weighted general heuristic."""
    if probe.mode != MODE_END_ONLY or neighbor.mode != MODE_END_ONLY:
        raise ValueError("sim_ood requires end_only features")
    return -angular_distance(probe.vector, neighbor.vector) + beta * g_value


def uvd_predict_begin(demo: Demonstration, goal: int, search_floor: int, slack: float = 1e-3) -> int:
    """Predicted sub-task start for the goal frame at index `goal - 1`.

    Returns the smallest t in [search_floor, goal - 1] such that the
    distance-to-goal series is non-increasing on [t, goal - 1] within
    additive `slack`; `goal - 1` itself when even the final step violates.
    """
    if not (0 <= search_floor <= goal - 1 < demo.length):
        raise ValueError(
            f"demo {demo.id!r}: need 0 <= search_floor <= goal-1 < {demo.length}, "
            f"got search_floor={search_floor}, goal={goal}"
        )
    d = unit_distances(demo.frames[search_floor:goal], demo.frames[goal - 1])
    rising = np.flatnonzero(d[1:] > d[:-1] + slack)  # step k -> k+1 violates
    if rising.size == 0:
        return search_floor
    return search_floor + int(rising[-1]) + 1


def g_score(demo: Demonstration, interval: Interval, uvd_slack: float = 1e-3) -> float:
    """How far the interval's start misses the heuristic's predicted start.

    -(|begin - predicted|) / duration, in (-inf, 0]; 0 on exact agreement.
    The scan floor is the demo start so the heuristic cannot saturate.
    """
    predicted = uvd_predict_begin(demo, interval.end, 0, uvd_slack)
    return -abs(interval.begin - predicted) / interval.duration


def _check_index_mode(index: IntervalIndex, params: ScoreParams) -> None:
    if index.mode != params.feature_mode:
        raise ValueError(
            f"{params.mode} scoring needs a {params.feature_mode!r} index, got {index.mode!r}"
        )


def _sims_for(
    demo: Demonstration,
    begins: np.ndarray,
    ends: np.ndarray,
    dists: np.ndarray,
    ids: np.ndarray,
    index: IntervalIndex,
    params: ScoreParams,
    uvd_cache: dict[int, int] | None = None,
) -> np.ndarray:
    durations = ends - begins
    if params.mode == MODE_BASE:
        ratio = np.abs(1.0 - durations / index.durations[ids])
        return -(dists + params.alpha * ratio)
    if uvd_cache is None:
        uvd_cache = {}
    g = np.empty(len(begins))
    for r, (b, e) in enumerate(zip(begins, ends)):
        t = uvd_cache.get(int(e))
        if t is None:
            t = uvd_predict_begin(demo, int(e), 0, params.uvd_slack)
            uvd_cache[int(e)] = t
        g[r] = -abs(int(b) - t) / int(e - b)
    return -dists + params.beta * g


def batch_score_intervals(demo: Demonstration, pairs, index: IntervalIndex, params: ScoreParams) -> np.ndarray:
    """Scores of candidate (begin, end) segments, as duration * sim."""
    _check_index_mode(index, params)
    if len(pairs) == 0:
        return np.empty(0)
    probes = features_for_pairs(demo, pairs, params.feature_mode)
    ids, dists = query_ids(index, probes)
    begins = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    ends = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    sims = _sims_for(demo, begins, ends, dists, ids, index, params)
    return (ends - begins) * sims


def score_interval(
    demo: Demonstration,
    interval: Interval,
    index: IntervalIndex,
    params: ScoreParams,
) -> tuple[float, IntervalFeature]:
    """Score one interval and return its matched neighbor for audit.

    The interval's duration must already satisfy the length bounds
    (adapted_score supplies the -inf semantics for out-of-bounds lengths).
    """
    if len(index) == 0:
        raise ValueError("cannot score against an empty index")
    if interval.duration < params.l_min or (
        params.l_max is not None and interval.duration > params.l_max
    ):
        raise ValueError(
            f"interval duration {interval.duration} outside [{params.l_min}, {params.l_max}]"
        )
    _check_index_mode(index, params)
    probes = features_for_pairs(demo, [(interval.begin, interval.end)], params.feature_mode)
    ids, dists = query_ids(index, probes)
    begins = np.asarray([interval.begin], dtype=np.int64)
    ends = np.asarray([interval.end], dtype=np.int64)
    sims = _sims_for(demo, begins, ends, dists, ids, index, params)
    score = float((ends - begins)[0] * sims[0])
    return score, index.entry(int(ids[0]))


def novelty(result: DecompositionResult) -> float:
    """Mean per-interval score of a decomposition (<= 0 in base scoring)."""
    if not result.interval_scores:
        raise ValueError("novelty of an empty partition is undefined")
    return math.fsum(result.interval_scores) / len(result.interval_scores)


def novelty_per_frame(result: DecompositionResult) -> float:
    """Secondary diagnostic: total score divided by covered frames.

    Unlike `novelty` (a plain mean over intervals, which inherits the
    duration weighting inside each interval score), this normalizes by
    covered duration, making demos of different lengths comparable.
    """
    covered = result.partition.covered_prefix
    if covered == 0:
        raise ValueError("novelty_per_frame of an empty partition is undefined")
    return result.total_score / covered
