"""Shared domain types and the unit-vector distance primitive.

Frame embeddings are stored as float32 row vectors; every distance or
score accumulation happens in float64. All types here are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# |l2norm(v) - 1| within this tolerance counts as normalized.
UNIT_NORM_TOL = 1e-6


def _as_vector(u, name: str) -> np.ndarray:
    v = np.asarray(u)
    if v.ndim != 1 or v.shape[0] < 1:
        raise ValueError(f"{name} must be a 1-D vector with at least one element")
    return v


def normalize(u) -> np.ndarray:
    """Scale a vector to unit L2 norm, returned as float32.

    Idempotent at the bit level: input already within UNIT_NORM_TOL of unit
    norm is returned unchanged (so load -> save -> load round-trips are
    exact). Rejects zero vectors.
    """
    v = _as_vector(u, "vector")
    v32 = v.astype(np.float32, copy=False)
    norm = float(np.linalg.norm(v32.astype(np.float64)))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    if abs(norm - 1.0) <= UNIT_NORM_TOL:
        return v32
    return (v32.astype(np.float64) / norm).astype(np.float32)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise `normalize` for a (frames x dim) float32 matrix.

    Rows already within UNIT_NORM_TOL of unit norm are passed through
    bit-exactly; zero rows are rejected with the offending row index.
    """
    m = np.asarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError("expected a 2-D (frames x dim) matrix")
    norms = np.linalg.norm(m.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot normalize zero row at index {int(zero[0])}")
    needs = np.abs(norms - 1.0) > UNIT_NORM_TOL
    if not needs.any():
        return m
    out = m.copy()
    rows = np.flatnonzero(needs)
    out[rows] = (m[rows].astype(np.float64) / norms[rows, None]).astype(np.float32)
    return out


def _check_unit(v: np.ndarray, name: str) -> None:
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm == 0.0:
        raise ValueError(f"{name} has zero norm")
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"{name} is not normalized (norm={norm!r})")


def angular_distance(u, v) -> float:
    """Angular distance sqrt(2*(1 - cos(u, v))) between unit vectors.

    Computed as the Euclidean distance between the (unit) inputs, which is
    algebraically identical and exact at u == v. Result is clamped into
    [0, 2]. Inputs must share one dimension and be normalized.
    """
    a = _as_vector(u, "u")
    b = _as_vector(v, "v")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    _check_unit(a, "u")
    _check_unit(b, "v")
    d = float(np.linalg.norm(a.astype(np.float64) - b.astype(np.float64)))
    return min(d, 2.0)


def unit_distances(matrix: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Angular distances from each row of `matrix` to `vec` (no validation).

    Internal hot-path variant of `angular_distance`; rows and `vec` are
    assumed unit-norm float32. float64 accumulation, clamped into [0, 2].
    """
    diff = matrix.astype(np.float64) - vec.astype(np.float64)
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return np.minimum(d, 2.0)


@dataclass(frozen=True)
class Interval:
    """Half-open frame range [begin, end) within one demonstration.

    Stored half-open so that consecutive intervals satisfy
    `end_k == begin_{k+1}` and duration is simply `end - begin`.
    """

    demo_id: str
    begin: int
    end: int

    def __post_init__(self) -> None:
        if self.begin < 0 or self.end <= self.begin:
            raise ValueError(
                f"invalid interval [{self.begin}, {self.end}) for demo {self.demo_id!r}"
            )

    @property
    def duration(self) -> int:
        return self.end - self.begin


def _validate_labels(labels: tuple[int, ...], length: int) -> None:
    if not labels:
        raise ValueError("labels, when present, must be non-empty")
    prev = 0
    for b in labels:
        if b <= prev:
            raise ValueError(f"labels must be strictly increasing and start above 0: {labels}")
        prev = b
    if labels[-1] != length:
        raise ValueError(f"labels must end at demo length {length}, got {labels[-1]}")


@dataclass(frozen=True)
class Demonstration:
    """A demonstration reduced to a sequence of unit-norm frame embeddings.

    `frames` is a read-only (length x dim) float32 matrix with every row
    normalized. `labels`, when present, are ground-truth segment boundaries:
    strictly increasing frame indices whose last element equals `length`.
    """

    id: str
    frames: np.ndarray
    labels: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        f = self.frames
        if not isinstance(f, np.ndarray) or f.ndim != 2:
            raise ValueError(f"demo {self.id!r}: frames must be a 2-D array")
        if f.dtype != np.float32:
            raise ValueError(f"demo {self.id!r}: frames must be float32, got {f.dtype}")
        if f.shape[0] < 2:
            raise ValueError(f"demo {self.id!r}: need at least 2 frames, got {f.shape[0]}")
        if f.shape[1] < 1:
            raise ValueError(f"demo {self.id!r}: embedding dim must be >= 1")
        norms = np.linalg.norm(f.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            raise ValueError(
                f"demo {self.id!r}: frame {int(bad[0])} is not unit-norm "
                f"(norm={float(norms[bad[0]])!r})"
            )
        f.flags.writeable = False
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(int(b) for b in self.labels))
            _validate_labels(self.labels, f.shape[0])

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])

    def label_intervals(self) -> tuple[Interval, ...]:
        """Ground-truth segments induced by `labels` (requires labels)."""
        if self.labels is None:
            raise ValueError(f"demo {self.id!r} has no boundary labels")
        begins = (0,) + self.labels[:-1]
        return tuple(
            Interval(self.id, b, e) for b, e in zip(begins, self.labels)
        )


@dataclass(frozen=True)
class Partition:
    """Consecutive, non-overlapping intervals starting at frame 0.

    May cover only a prefix of its demonstration (see the solver's
    fallback); `covered_prefix` is the number of frames covered.
    """

    intervals: tuple[Interval, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "intervals", tuple(self.intervals))
        prev_end = 0
        for iv in self.intervals:
            if iv.begin != prev_end:
                raise ValueError(
                    f"intervals must be consecutive from 0: "
                    f"[{iv.begin}, {iv.end}) after frame {prev_end}"
                )
            prev_end = iv.end
        if self.intervals:
            demo_ids = {iv.demo_id for iv in self.intervals}
            if len(demo_ids) != 1:
                raise ValueError(f"intervals span multiple demos: {sorted(demo_ids)}")

    @property
    def covered_prefix(self) -> int:
        return self.intervals[-1].end if self.intervals else 0

    def __len__(self) -> int:
        return len(self.intervals)


@dataclass(frozen=True)
class DecompositionResult:
    """Optimal partition plus its per-interval scores and bookkeeping.

    `novelty` is the arithmetic mean of `interval_scores` (None for an
    empty partition); `eval_count` is the number of interval-score
    evaluations the solver performed.
    """

    partition: Partition
    interval_scores: tuple[float, ...]
    total_score: float
    novelty: float | None
    full_coverage: bool
    eval_count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "interval_scores", tuple(float(s) for s in self.interval_scores))
        if len(self.interval_scores) != len(self.partition.intervals):
            raise ValueError("one score per interval required")
        total = math.fsum(self.interval_scores)
        if not math.isclose(total, self.total_score, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(
                f"total_score {self.total_score!r} != sum of interval scores {total!r}"
            )
        if self.interval_scores:
            mean = total / len(self.interval_scores)
            if self.novelty is None or not math.isclose(
                mean, self.novelty, rel_tol=1e-9, abs_tol=1e-12
            ):
                raise ValueError("novelty must be the mean interval score")
        elif self.novelty is not None:
            raise ValueError("novelty must be None for an empty partition")
