"""Length-bounded optimal-partition solver with evaluation accounting.

The dynamic program maximizes the sum of per-segment scores over all
partitions of [0, n) into segments whose lengths lie in [l_min, l_max].
Out-of-bounds segments score -inf (IEEE negative infinity), which poisons
any partition sum that contains them.

Two loop variants are provided. The default starts the outer loop at
i = l_min, which makes every bounded-length partition reachable and is
exact-optimal (verified against the brute-force oracle). `paper_faithful`
starts at i = l_min + 1; that variant performs exactly
`count_evaluations(n, l_min, l_max)` score evaluations when n >= l_max but
cannot propose a first interval of length exactly l_min. The default
variant evaluates exactly one more segment ([0, l_min)).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DecompositionResult, Interval, Partition

NEG_INF = float("-inf")

# Candidate segments are pre-scored in chunks of this size when
# parallel scoring is enabled.
SCORE_BATCH = 1024


class InfeasiblePartitionError(ValueError):
    """No partition with the required coverage exists under the bounds."""


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs; length bounds are inclusive.

    `strict_cover` turns the under-coverage fallback into an error.
    `parallel_scoring` pre-evaluates all candidate segments before the DP
    pass (batched; `threads` caps the workers). Results are identical
    regardless of scoring parallelism.
    """

    l_min: int = 2
    l_max: int | None = None
    strict_cover: bool = False
    parallel_scoring: bool = True
    paper_faithful: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if self.l_min < 2:
            raise ValueError(f"l_min must be >= 2, got {self.l_min}")
        if self.l_max is not None and self.l_max < self.l_min:
            raise ValueError(f"l_max {self.l_max} < l_min {self.l_min}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def count_evaluations(n: int, l_min: int, l_max: int) -> int:
    """Closed-form number of segment-score evaluations for the DP.

    Valid for n >= l_max; this is the count of the `paper_faithful` loop
    (outer index from l_min + 1). The default loop evaluates exactly one
    additional segment. For (500, 2, 100) this returns 44549.
    """
    if l_min < 1:
        raise ValueError(f"l_min must be >= 1, got {l_min}")
    if l_max < l_min:
        raise ValueError(f"l_max {l_max} < l_min {l_min}")
    if n < l_max:
        raise ValueError(f"closed form requires n >= l_max, got n={n}, l_max={l_max}")
    span = l_max - l_min
    return span * (span + 3) // 2 + (n - l_max) * (span + 1)


@dataclass(frozen=True)
class TableSolution:
    """Raw DP output over an abstract score table.

    `segments` are (begin, end) pairs covering [0, covered_end) exactly;
    `score` is the sum of `segment_scores`. `dp_final` is the raw dp value
    at n (it differs from `score` only when nothing was reachable at all).
    """

    score: float
    segments: tuple[tuple[int, int], ...]
    segment_scores: tuple[float, ...]
    covered_end: int
    eval_count: int
    dp_final: float


def solve_segment_table(
    n: int,
    l_min: int,
    l_max: int | None,
    score_rows,
    *,
    paper_faithful: bool = False,
) -> TableSolution:
    """Run the DP over scores served by `score_rows`.

    `score_rows(i, j_lo, j_hi)` must return the scores of segments
    [j, i) for j in range(j_lo, j_hi); each returned value counts as one
    evaluation. Ties on equal totals resolve to the smallest split point.
    When some index i has no reachable valid segment, dp[i]/parts[i] are
    copied from i - 1 (the under-coverage fallback), so the returned
    segments may cover only a prefix of [0, n).
    """
    if l_min < 1:
        raise ValueError(f"l_min must be >= 1, got {l_min}")
    if l_max is not None and l_max < l_min:
        raise ValueError(f"l_max {l_max} < l_min {l_min}")
    if n < l_min:
        raise ValueError(f"sequence of length {n} is shorter than l_min {l_min}")

    dp = np.full(n + 1, NEG_INF)
    dp_base = np.full(n + 1, NEG_INF)  # usable as a recurrence base: exact covers only
    back = np.full(n + 1, -2, dtype=np.int64)  # -2 unset, -1 copied, >=0 split point
    seg_score = np.zeros(n + 1)
    dp[0] = 0.0
    dp_base[0] = 0.0
    evals = 0

    start = l_min + 1 if paper_faithful else l_min
    for i in range(start, n + 1):
        j_lo = 0 if l_max is None else max(0, i - l_max)
        j_hi = i - l_min + 1  # exclusive
        row = np.asarray(score_rows(i, j_lo, j_hi), dtype=np.float64)
        if row.shape != (j_hi - j_lo,):
            raise ValueError(f"score_rows returned {row.shape}, expected ({j_hi - j_lo},)")
        evals += row.size
        totals = dp_base[j_lo:j_hi] + row
        m = int(np.argmax(totals))  # first max == smallest split point
        best = float(totals[m])
        if best > NEG_INF:
            dp[i] = best
            dp_base[i] = best
            back[i] = j_lo + m
            seg_score[i] = row[m]
        else:
            dp[i] = dp[i - 1]
            back[i] = -1

    c = n
    while c > 0 and back[c] < 0:
        c -= 1
    covered_end = c
    segments: list[tuple[int, int]] = []
    scores: list[float] = []
    while c > 0:
        j = int(back[c])
        segments.append((j, c))
        scores.append(float(seg_score[c]))
        c = j
    segments.reverse()
    scores.reverse()
    score = float(dp[covered_end]) if covered_end > 0 else 0.0
    return TableSolution(
        score=score,
        segments=tuple(segments),
        segment_scores=tuple(scores),
        covered_end=covered_end,
        eval_count=evals,
        dp_final=float(dp[n]),
    )


def brute_force_partition(n, segment_scores, l_min, l_max):
    """Exhaustive oracle: best (score, segments) over every composition.

    `segment_scores(j, i)` returns the score of segment [j, i). Uses the
    same tie-break as the DP: among equal-score partitions, prefer the one
    whose interval begins, compared from the last interval backwards, are
    smallest. Guarded to n <= 20; raises InfeasiblePartitionError when no
    composition of n into parts within the bounds exists.
    """
    if n > 20:
        raise ValueError(f"brute force is guarded to n <= 20, got {n}")
    if l_min < 1 or l_max < l_min:
        raise ValueError(f"invalid bounds [{l_min}, {l_max}]")

    best_score = NEG_INF
    best_key: tuple[int, ...] | None = None
    best_parts: list[tuple[int, int]] | None = None

    parts: list[tuple[int, int]] = []

    def recurse(pos: int, acc: float) -> None:
        nonlocal best_score, best_key, best_parts
        if pos == n:
            key = tuple(b for b, _ in reversed(parts))
            if acc > best_score or (acc == best_score and (best_key is None or key < best_key)):
                best_score = acc
                best_key = key
                best_parts = list(parts)
            return
        top = min(l_max, n - pos)
        for length in range(l_min, top + 1):
            parts.append((pos, pos + length))
            recurse(pos + length, acc + segment_scores(pos, pos + length))
            parts.pop()

    recurse(0, 0.0)
    if best_parts is None:
        raise InfeasiblePartitionError(
            f"no composition of {n} into parts within [{l_min}, {l_max}]"
        )
    return best_score, best_parts


def adapted_score(segment: Interval, params, index, demo) -> float:
    """Score of a segment, or -inf when its length is out of bounds."""
    from .scoring import score_interval

    if segment.duration < params.l_min:
        return NEG_INF
    if params.l_max is not None and segment.duration > params.l_max:
        return NEG_INF
    score, _ = score_interval(demo, segment, index, params)
    return score


def _enumerate_rows(n: int, l_min: int, l_max: int | None, start: int):
    """Yield (i, j_lo, j_hi) row bounds in DP order."""
    for i in range(start, n + 1):
        j_lo = 0 if l_max is None else max(0, i - l_max)
        yield i, j_lo, i - l_min + 1


def max_sum_partition(demo, index, params, config: SolverConfig) -> DecompositionResult:
    """Optimal bounded-length partition of a demonstration.

    Scores every candidate segment against `index` via the similarity in
    `params`, then runs the DP. When no exact cover of [0, n) exists the
    result covers the longest scorable prefix and `full_coverage` is False
    (or InfeasiblePartitionError under `config.strict_cover`).
    """
    from .scoring import batch_score_intervals

    if params.l_min != config.l_min or params.l_max != config.l_max:
        raise ValueError(
            "params and config disagree on length bounds: "
            f"({params.l_min}, {params.l_max}) vs ({config.l_min}, {config.l_max})"
        )
    n = demo.length
    if n < config.l_min:
        raise ValueError(f"demo {demo.id!r} has {n} frames, shorter than l_min {config.l_min}")

    start = config.l_min + 1 if config.paper_faithful else config.l_min

    if config.parallel_scoring:
        pairs: list[tuple[int, int]] = []
        offsets: dict[int, tuple[int, int]] = {}
        for i, j_lo, j_hi in _enumerate_rows(n, config.l_min, config.l_max, start):
            offsets[i] = (len(pairs), j_lo)
            pairs.extend((j, i) for j in range(j_lo, j_hi))
        flat = np.empty(len(pairs))

        def score_chunk(lo: int) -> None:
            hi = min(lo + SCORE_BATCH, len(pairs))
            flat[lo:hi] = batch_score_intervals(demo, pairs[lo:hi], index, params)

        chunk_starts = range(0, len(pairs), SCORE_BATCH)
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                list(pool.map(score_chunk, chunk_starts))
        else:
            for lo in chunk_starts:
                score_chunk(lo)

        def rows(i: int, j_lo: int, j_hi: int) -> np.ndarray:
            base, row_lo = offsets[i]
            assert row_lo == j_lo
            return flat[base : base + (j_hi - j_lo)]

    else:

        def rows(i: int, j_lo: int, j_hi: int) -> np.ndarray:
            pairs_row = [(j, i) for j in range(j_lo, j_hi)]
            return batch_score_intervals(demo, pairs_row, index, params)

    table = solve_segment_table(
        n, config.l_min, config.l_max, rows, paper_faithful=config.paper_faithful
    )

    if table.covered_end < n and config.strict_cover:
        raise InfeasiblePartitionError(
            f"demo {demo.id!r}: no partition covers all {n} frames with lengths in "
            f"[{config.l_min}, {config.l_max if config.l_max is not None else n}]"
        )

    partition = Partition(tuple(Interval(demo.id, b, e) for b, e in table.segments))
    scores = table.segment_scores
    total = table.score  # left-associated dp sum, bit-identical to the oracle's
    novelty = total / len(scores) if scores else None
    return DecompositionResult(
        partition=partition,
        interval_scores=scores,
        total_score=total,
        novelty=novelty,
        full_coverage=table.covered_end == n,
        eval_count=table.eval_count,
    )
