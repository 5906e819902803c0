"""Deterministic simulator of expert-parallel multimodal MoE inference."""

from .core import (
    ClusterConfig,
    ExpertPlacement,
    PlacementMismatchError,
    Precision,
    RankLoad,
    aggregate_rank_loads,
    place_experts_static,
)
from .costmodel import (
    CostParams,
    dispatch_latency,
    memory_overhead,
    migration_latency,
    rank_compute_latency,
    transform_latency,
)
from .balancers import (
    STRATEGIES,
    EplbState,
    PrecisionPlan,
    RealbParams,
    eplb_observe,
    eplb_rebalance,
    plan_baseline,
    plan_fp4_all,
    plan_for,
    plan_realb,
)
from .engine import (
    LayerTiming,
    MigrationEvent,
    PipelineMode,
    RankPhases,
    RunResult,
    simulate_iteration,
    simulate_layer,
    simulate_run,
)
from .tracegen import (
    IterationTrace,
    TraceMismatchError,
    TraceParseError,
    TraceSpec,
    calibrate_zipf_s,
    generate_trace,
    read_trace,
    trace_stats,
    write_trace,
)
from .metrics import (
    ExposureReport,
    ImbalanceSeries,
    ReportRow,
    RunSummary,
    imbalance_series,
    speedup_report,
    summarize_run,
    text_exposure,
)

__version__ = "0.1.0"
