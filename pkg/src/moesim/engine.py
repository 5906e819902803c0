"""Per-layer pipeline timing and full simulation runs.

Pipeline modes:
  Sequential:  allgather + transform + dispatch + compute + combine per rank.
  Overlapped:  on W4A4 ranks the metadata allgather and the weight transform
               hide under dispatch, max(dispatch, allgather + transform);
               ranks staying at W16A16 have nothing to hide and keep the
               sequential shape.  Layer latency is the max over ranks
               (globally synchronized MoE execution).

Migration charging: eplb stalls for the full migration latency at rebalance
iterations; async-eplb only for the part exceeding that iteration's total
dispatch time.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .balancers import (
    EplbState,
    PrecisionPlan,
    RealbParams,
    eplb_observe,
    eplb_rebalance,
    plan_for,
)
from .core import (
    ClusterConfig,
    ExpertPlacement,
    Precision,
    RankLoad,
    aggregate_rank_loads,
    place_experts_static,
)
from .costmodel import (
    CostParams,
    dispatch_latency,
    migration_latency,
    rank_compute_latency,
    transform_latency,
)
from .tracegen import IterationTrace, TraceMismatchError


class PipelineMode(enum.Enum):
    SEQUENTIAL = "sequential"
    OVERLAPPED = "overlapped"


@dataclass(frozen=True)
class RankPhases:
    schedule_ns: int  # metadata allgather; scheduling cost is folded in
    transform_ns: int
    dispatch_ns: int
    compute_ns: int
    combine_ns: int

    def total(self, mode: PipelineMode, accelerated: bool) -> int:
        if mode is PipelineMode.OVERLAPPED and accelerated:
            return (
                max(self.dispatch_ns, self.schedule_ns + self.transform_ns)
                + self.compute_ns
                + self.combine_ns
            )
        return (
            self.schedule_ns
            + self.transform_ns
            + self.dispatch_ns
            + self.compute_ns
            + self.combine_ns
        )


@dataclass(frozen=True)
class LayerTiming:
    per_rank: tuple[RankPhases, ...]
    per_rank_total_ns: tuple[int, ...]
    layer_latency_ns: int
    compute_only_ns: int
    critical_rank: int
    pipeline_mode: PipelineMode


@dataclass(frozen=True)
class MigrationEvent:
    iteration: int
    replicas_moved: int
    volume_bytes: int
    charged_ns: int


@dataclass
class RunResult:
    strategy: str
    layer_timings: dict[tuple[int, int], LayerTiming] = field(default_factory=dict)
    plans: dict[tuple[int, int], PrecisionPlan] = field(default_factory=dict)
    migration_events: list[MigrationEvent] = field(default_factory=list)
    max_redundant_count: int = 0

    @property
    def e2e_time_ns(self) -> int:
        layers = sum(t.layer_latency_ns for t in self.layer_timings.values())
        stalls = sum(e.charged_ns for e in self.migration_events)
        return layers + stalls

    @property
    def compute_only_total_ns(self) -> int:
        return sum(t.compute_only_ns for t in self.layer_timings.values())

    @property
    def migration_volume_bytes(self) -> int:
        return sum(e.volume_bytes for e in self.migration_events)


def simulate_layer(
    loads: list[RankLoad],
    plan: PrecisionPlan,
    placement: ExpertPlacement,
    costs: CostParams,
    config: ClusterConfig,
    mode: PipelineMode,
) -> LayerTiming:
    dispatch = dispatch_latency(loads, costs)
    per_rank = []
    totals = []
    for rank, load in enumerate(loads):
        precision = plan.per_rank_precision[rank]
        accelerated = precision is Precision.W4A4
        transform = (
            transform_latency(
                placement.hosted_instance_count(rank), config.bytes_per_expert, costs
            )
            if accelerated
            else 0
        )
        phases = RankPhases(
            schedule_ns=round(costs.allgather_ns),
            transform_ns=transform,
            dispatch_ns=dispatch,
            compute_ns=rank_compute_latency(load, precision, costs),
            combine_ns=dispatch,
        )
        per_rank.append(phases)
        totals.append(phases.total(mode, accelerated))
    latency = max(totals)
    critical = totals.index(latency)
    return LayerTiming(
        per_rank=tuple(per_rank),
        per_rank_total_ns=tuple(totals),
        layer_latency_ns=latency,
        compute_only_ns=max(p.compute_ns for p in per_rank),
        critical_rank=critical,
        pipeline_mode=mode,
    )


def _strategy_mode(strategy: str, plan: PrecisionPlan) -> PipelineMode:
    # an inactive plan disables pipeline orchestration, so timing collapses
    # to the baseline shape exactly
    if strategy in ("fp4all", "realb") and plan.active:
        return PipelineMode.OVERLAPPED
    return PipelineMode.SEQUENTIAL


def simulate_iteration(
    trace: IterationTrace,
    iteration: int,
    strategy: str,
    placement: ExpertPlacement,
    costs: CostParams,
    realb_params: RealbParams,
    eplb_state: EplbState | None,
    result: RunResult,
) -> ExpertPlacement:
    """Simulate all layers of one iteration; returns the (possibly updated) placement."""
    config = trace.cluster
    migration_ns = 0
    if (
        strategy in ("eplb", "async-eplb")
        and eplb_state is not None
        and eplb_state.window
        and eplb_state.iterations_since_rebalance >= eplb_state.interval
    ):
        placement, moved = eplb_rebalance(eplb_state, config, placement)
        migration_ns, volume = migration_latency(
            moved, config.bytes_per_expert, costs
        )
        result.max_redundant_count = max(
            result.max_redundant_count, placement.redundant_count
        )
        result.migration_events.append(
            MigrationEvent(
                iteration=iteration,
                replicas_moved=moved,
                volume_bytes=volume,
                charged_ns=0,  # charged below once dispatch totals are known
            )
        )
    dispatch_total = 0
    for layer in range(config.num_layers):
        expert_loads = trace.layer_loads(iteration, layer)
        if not expert_loads:
            raise TraceMismatchError(
                f"iteration {iteration} has no records for layer {layer}"
            )
        loads = aggregate_rank_loads(expert_loads, placement, config.num_ranks)
        plan = plan_for(strategy, loads, config, realb_params)
        mode = _strategy_mode(strategy, plan)
        timing = simulate_layer(loads, plan, placement, costs, config, mode)
        result.layer_timings[(iteration, layer)] = timing
        result.plans[(iteration, layer)] = plan
        dispatch_total += timing.per_rank[0].dispatch_ns
    if migration_ns:
        if strategy == "async-eplb":
            charged = max(0, migration_ns - dispatch_total)
        else:
            charged = migration_ns
        ev = result.migration_events[-1]
        result.migration_events[-1] = MigrationEvent(
            iteration=ev.iteration,
            replicas_moved=ev.replicas_moved,
            volume_bytes=ev.volume_bytes,
            charged_ns=charged,
        )
    if strategy in ("eplb", "async-eplb") and eplb_state is not None:
        eplb_observe(
            eplb_state,
            trace.iteration_expert_totals(iteration),
            config.total_experts,
        )
    return placement


def simulate_run(
    trace: IterationTrace,
    strategy: str,
    costs: CostParams,
    realb_params: RealbParams | None = None,
    eplb_state: EplbState | None = None,
) -> RunResult:
    realb_params = realb_params or RealbParams()
    if strategy in ("eplb", "async-eplb") and eplb_state is None:
        eplb_state = EplbState()
    result = RunResult(strategy=strategy)
    placement = place_experts_static(trace.cluster)
    for it in range(trace.num_iterations):
        placement = simulate_iteration(
            trace, it, strategy, placement, costs, realb_params, eplb_state, result
        )
    return result


def write_layers_csv(result: RunResult, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iter", "layer", "strategy", "mode", "latency_ns", "compute_only_ns", "critical_rank"])
        for (it, layer), t in sorted(result.layer_timings.items()):
            w.writerow(
                [it, layer, result.strategy, t.pipeline_mode.value, t.layer_latency_ns, t.compute_only_ns, t.critical_rank]
            )


def write_ranks_csv(result: RunResult, iterations: list[int], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(
            ["iter", "layer", "rank", "schedule_ns", "transform_ns", "dispatch_ns", "compute_ns", "combine_ns", "total_ns"]
        )
        for (it, layer), t in sorted(result.layer_timings.items()):
            if it not in iterations:
                continue
            for rank, p in enumerate(t.per_rank):
                w.writerow(
                    [it, layer, rank, p.schedule_ns, p.transform_ns, p.dispatch_ns, p.compute_ns, p.combine_ns, t.per_rank_total_ns[rank]]
                )


def write_events_csv(result: RunResult, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iter", "replicas_moved", "volume_bytes", "charged_ns"])
        for e in result.migration_events:
            w.writerow([e.iteration, e.replicas_moved, e.volume_bytes, e.charged_ns])
