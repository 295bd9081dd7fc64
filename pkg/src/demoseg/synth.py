"""Synthetic ground-truthed corpora, segmentation metrics, and benchmarks.

Prototype sub-tasks are great-circle (slerp) paths between random unit
endpoints, so goal distance decreases monotonically along each segment and
the change-point heuristic is meaningful. Reference demos are clean
prototype concatenations with expert boundaries; test demos add optional
per-coordinate Gaussian noise and duration jitter, plus optional injected
segments drawn from prototypes the reference side never saw.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .bundles import reference_intervals
from .core import Demonstration, Interval, Partition
from .index import build_index, feature_of
from .scoring import ScoreParams, novelty_per_frame
from .solver import SolverConfig, max_sum_partition, solve_segment_table


@dataclass(frozen=True)
class SynthSpec:
    """Corpus generator parameters; fully deterministic per seed.

    `demos` is the number of test demonstrations; the reference side is
    sized so that every prototype appears at least once.
    `novel_segments_per_demo` replaces that many segments of each test
    demo with instances of prototypes absent from the reference set.
    """

    num_prototypes: int
    dim: int
    proto_len_range: tuple[int, int]
    demos: int
    segs_per_demo_range: tuple[int, int]
    noise_sigma: float = 0.0
    time_warp: float = 0.0
    seed: int = 0
    novel_segments_per_demo: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.proto_len_range
        slo, shi = self.segs_per_demo_range
        if self.num_prototypes < 1 or self.dim < 2 or self.demos < 1:
            raise ValueError("need num_prototypes >= 1, dim >= 2, demos >= 1")
        if not (2 <= lo <= hi):
            raise ValueError(f"prototype length range must satisfy 2 <= min <= max, got {self.proto_len_range}")
        if not (1 <= slo <= shi):
            raise ValueError(f"segments-per-demo range must satisfy 1 <= min <= max, got {self.segs_per_demo_range}")
        if self.noise_sigma < 0 or not (0 <= self.time_warp < 1):
            raise ValueError("need noise_sigma >= 0 and 0 <= time_warp < 1")
        if not (0 <= self.novel_segments_per_demo <= slo):
            raise ValueError("novel_segments_per_demo must fit within the smallest demo")


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            return v / norm


def _random_prototype(rng: np.random.Generator, dim: int, len_range: tuple[int, int]):
    a = _random_unit(rng, dim)
    while True:
        b = _random_unit(rng, dim)
        if abs(float(a @ b)) < 0.9:
            break
    length = int(rng.integers(len_range[0], len_range[1] + 1))
    return a, b, length


def _slerp(a: np.ndarray, b: np.ndarray, length: int) -> np.ndarray:
    omega = math.acos(float(np.clip(a @ b, -1.0, 1.0)))
    t = np.linspace(0.0, 1.0, length)
    path = (np.sin((1.0 - t) * omega)[:, None] * a + np.sin(t * omega)[:, None] * b) / math.sin(omega)
    return path / np.linalg.norm(path, axis=1)[:, None]


def _instance(proto, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """One noisy, duration-jittered sampling of a prototype path."""
    a, b, length = proto
    if spec.time_warp > 0:
        jitter = rng.uniform(-spec.time_warp, spec.time_warp)
        length = max(2, int(round(length * (1.0 + jitter))))
    path = _slerp(a, b, length)
    if spec.noise_sigma > 0:
        path = path + rng.normal(0.0, spec.noise_sigma, path.shape)
        path = path / np.linalg.norm(path, axis=1)[:, None]
    return path


def _assemble(demo_id: str, instances: list[np.ndarray]) -> Demonstration:
    frames = np.concatenate(instances, axis=0).astype(np.float32)
    boundaries = tuple(np.cumsum([inst.shape[0] for inst in instances]).tolist())
    return Demonstration(id=demo_id, frames=frames, labels=boundaries)


def generate_corpus(spec: SynthSpec) -> tuple[list[Demonstration], list[Demonstration]]:
    """Build (reference demos, test demos), both with ground-truth labels.

    Independent RNG streams keep the base test corpus identical across
    `novel_segments_per_demo` settings for one seed, so clean and
    novelty-injected corpora are paired except at the injected segments.
    """
    ss = np.random.SeedSequence(spec.seed)
    rng_proto, rng_ref, rng_test, rng_novel = (np.random.default_rng(s) for s in ss.spawn(4))

    protos = [_random_prototype(rng_proto, spec.dim, spec.proto_len_range) for _ in range(spec.num_prototypes)]
    novel_protos = [
        _random_prototype(rng_novel, spec.dim, spec.proto_len_range) for _ in range(spec.num_prototypes)
    ]
    clean = replace(spec, noise_sigma=0.0, time_warp=0.0)

    # Reference demos: clean concatenations covering every prototype.
    ref_demos: list[Demonstration] = []
    slo, shi = spec.segs_per_demo_range
    pending = list(rng_ref.permutation(spec.num_prototypes))
    while pending:
        k = int(rng_ref.integers(slo, shi + 1))
        slots = pending[:k]
        pending = pending[k:]
        while len(slots) < slo:
            slots.append(int(rng_ref.integers(spec.num_prototypes)))
        instances = [_instance(protos[s], clean, rng_ref) for s in slots]
        ref_demos.append(_assemble(f"ref-{len(ref_demos):04d}", instances))

    test_demos: list[Demonstration] = []
    for d in range(spec.demos):
        k = int(rng_test.integers(slo, shi + 1))
        slots = [int(rng_test.integers(spec.num_prototypes)) for _ in range(k)]
        instances = [_instance(protos[s], spec, rng_test) for s in slots]
        if spec.novel_segments_per_demo:
            positions = rng_novel.choice(k, size=spec.novel_segments_per_demo, replace=False)
            for pos in sorted(int(p) for p in positions):
                novel_slot = int(rng_novel.integers(len(novel_protos)))
                instances[pos] = _instance(novel_protos[novel_slot], spec, rng_novel)
        test_demos.append(_assemble(f"test-{d:04d}", instances))

    return ref_demos, test_demos


def _range_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union


def miou(predicted: Partition, truth_boundaries) -> float:
    """Mean IoU of truth segments against greedily matched predictions.

    Predicted and truth segments are matched one-to-one in descending IoU
    order; unmatched truth segments contribute 0. Under-coverage therefore
    counts against the score.
    """
    truth_boundaries = list(truth_boundaries)
    if not truth_boundaries:
        raise ValueError("truth boundary list is empty")
    truth = list(zip([0] + truth_boundaries[:-1], truth_boundaries))
    preds = [(iv.begin, iv.end) for iv in predicted.intervals]
    pairs = []
    for ti, t in enumerate(truth):
        for pi, p in enumerate(preds):
            iou = _range_iou(t, p)
            if iou > 0:
                pairs.append((-iou, ti, pi))
    pairs.sort()
    matched: dict[int, float] = {}
    used_preds: set[int] = set()
    for neg_iou, ti, pi in pairs:
        if ti in matched or pi in used_preds:
            continue
        matched[ti] = -neg_iou
        used_preds.add(pi)
    return sum(matched.values()) / len(truth)


def uniform_baseline(demo: Demonstration, k: int) -> Partition:
    """k consecutive intervals whose lengths differ by at most one frame."""
    n = demo.length
    if k < 1 or k > n // 2:
        raise ValueError(f"k must be in [1, {n // 2}] for a {n}-frame demo, got {k}")
    base, rem = divmod(n, k)
    intervals = []
    pos = 0
    for i in range(k):
        length = base + (1 if i < rem else 0)
        intervals.append(Interval(demo.id, pos, pos + length))
        pos += length
    return Partition(tuple(intervals))


@dataclass(frozen=True)
class EvalReport:
    """Decomposition quality and cost over one test corpus."""

    miou: float
    per_demo_iou: tuple[float, ...]
    mean_novelty: float
    novelties: tuple[float, ...]
    mean_novelty_per_frame: float
    eval_counts: tuple[int, ...]
    wall_times: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.per_demo_iou:
            mean = sum(self.per_demo_iou) / len(self.per_demo_iou)
            if not math.isclose(mean, self.miou, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError("miou must be the mean of per_demo_iou")


def build_reference_index(
    reference_demos,
    feature_mode: str,
    trees: int = 10,
    leaf_max: int = 32,
    seed: int = 0,
    exact_fallback: bool | None = None,
):
    """Index the expert-labeled intervals of the reference demos."""
    by_id = {d.id: d for d in reference_demos}
    features = [
        feature_of(by_id[iv.demo_id], iv, feature_mode)
        for iv, _duration in reference_intervals(reference_demos)
    ]
    return build_index(features, trees=trees, leaf_max=leaf_max, seed=seed, exact_fallback=exact_fallback)


def run_eval(
    reference_demos,
    test_demos,
    params: ScoreParams,
    config: SolverConfig,
    trees: int = 10,
    leaf_max: int = 32,
    seed: int = 0,
    exact_fallback: bool | None = True,
) -> EvalReport:
    """Decompose every test demo against the reference index and report.

    Test demos must carry ground-truth labels. Deterministic given seeds
    and an exact-mode index (wall times aside).
    """
    missing = [d.id for d in test_demos if d.labels is None]
    if missing:
        raise ValueError(f"test demos lack ground-truth labels: {missing}")
    index = build_reference_index(
        reference_demos, params.feature_mode, trees=trees, leaf_max=leaf_max, seed=seed,
        exact_fallback=exact_fallback,
    )
    ious, novelties, per_frame, counts, walls = [], [], [], [], []
    for demo in test_demos:
        t0 = time.perf_counter()
        result = max_sum_partition(demo, index, params, config)
        walls.append(time.perf_counter() - t0)
        ious.append(miou(result.partition, demo.labels))
        novelties.append(result.novelty if result.novelty is not None else float("-inf"))
        per_frame.append(novelty_per_frame(result))
        counts.append(result.eval_count)
    return EvalReport(
        miou=sum(ious) / len(ious),
        per_demo_iou=tuple(ious),
        mean_novelty=sum(novelties) / len(novelties),
        novelties=tuple(novelties),
        mean_novelty_per_frame=sum(per_frame) / len(per_frame),
        eval_counts=tuple(counts),
        wall_times=tuple(walls),
    )


def stub_score_rows(i: int, j_lo: int, j_hi: int) -> np.ndarray:
    """Constant-work-per-segment stub used by the runtime benchmark.

    A couple of transcendental ops per candidate keep per-evaluation cost
    well above the DP's per-row bookkeeping, so measured scaling reflects
    the evaluation counts.
    """
    js = np.arange(j_lo, j_hi, dtype=np.float64)
    x = np.sin(js * 0.754 + i * 0.131)
    y = np.cos(js * 0.327 + i * 0.017)
    return -1.0 - 0.01 * x * x - 0.005 * y * y


def bench_runtime(lengths, l_max: int, stub_score=None, repeats: int = 3) -> list[dict]:
    """Wall time and evaluation count for bounded vs unbounded solves.

    Returns plot-ready rows with keys n, l_max_mode, wall_ms, eval_count;
    each timing is the best of `repeats` single-threaded runs.
    """
    rows = stub_score if stub_score is not None else stub_score_rows
    out: list[dict] = []
    for n in lengths:
        for mode_name, bound in (("bounded", l_max), ("unbounded", None)):
            best = math.inf
            table = None
            for _ in range(repeats):
                t0 = time.perf_counter()
                table = solve_segment_table(n, 2, bound, rows)
                best = min(best, time.perf_counter() - t0)
            out.append(
                {
                    "n": int(n),
                    "l_max_mode": mode_name,
                    "wall_ms": best * 1000.0,
                    "eval_count": table.eval_count,
                }
            )
    return out
