"""Retrieval-backed decomposition of embedded demonstrations into sub-tasks.

Pipeline: ingest demonstration bundles of precomputed frame embeddings,
index expert-labeled reference intervals, score candidate intervals by
nearest-neighbor similarity, and solve for the optimal bounded-length
partition with a linear-time dynamic program.
"""

from .bundles import Bundle, BundleError, DemoEntry, read_bundle, reference_intervals, write_bundle
from .core import (
    DecompositionResult,
    Demonstration,
    Interval,
    Partition,
    angular_distance,
    normalize,
)
from .index import (
    MODE_END_ONLY,
    MODE_FULL,
    IndexFormatError,
    IntervalFeature,
    IntervalIndex,
    build_index,
    feature_of,
    load_index,
    query,
    save_index,
)
from .scoring import (
    MODE_BASE,
    MODE_OOD,
    ScoreParams,
    g_score,
    novelty,
    novelty_per_frame,
    score_interval,
    sim_base,
    sim_ood,
    uvd_predict_begin,
)
from .solver import (
    InfeasiblePartitionError,
    SolverConfig,
    adapted_score,
    brute_force_partition,
    count_evaluations,
    max_sum_partition,
    solve_segment_table,
)
from .synth import (
    EvalReport,
    SynthSpec,
    bench_runtime,
    generate_corpus,
    miou,
    run_eval,
    uniform_baseline,
)

__version__ = "0.1.0"
