"""Imbalance diagnostics, text-exposure accounting, and the strategy comparison report.

Accuracy is never predicted here.  The report pairs the fraction of text
tokens that ran under W4A4 (an accuracy-risk proxy) with speedups; mapping
exposure to benchmark accuracy is explicitly out of scope.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import ClusterConfig, ExpertPlacement, Precision, aggregate_rank_loads, place_experts_static
from .costmodel import memory_overhead
from .engine import RunResult
from .tracegen import IterationTrace


@dataclass(frozen=True)
class ImbalanceSeries:
    expert_max_avg: np.ndarray  # shape (iters, layers)
    device_max_avg: np.ndarray  # shape (iters, layers)


@dataclass(frozen=True)
class ExposureReport:
    text_tokens_under_fp4: int
    total_text_tokens: int

    @property
    def exposure_fraction(self) -> float:
        if self.total_text_tokens == 0:
            return 0.0
        return self.text_tokens_under_fp4 / self.total_text_tokens


def imbalance_series(trace: IterationTrace, placement: ExpertPlacement) -> ImbalanceSeries:
    """Max/avg load ratios per (iteration, layer); zero-load slices emit 1.0."""
    config = trace.cluster
    iters = trace.num_iterations
    expert_imb = np.ones((iters, config.num_layers))
    device_imb = np.ones((iters, config.num_layers))
    for it in range(iters):
        for layer in range(config.num_layers):
            loads = trace.layer_loads(it, layer)
            totals = np.zeros(config.total_experts, dtype=np.int64)
            for e, (v, t) in loads.items():
                totals[e] = v + t
            if totals.sum() == 0:
                continue
            expert_imb[it, layer] = totals.max() / totals.mean()
            ranks = aggregate_rank_loads(loads, placement, config.num_ranks)
            rank_totals = np.array([r.total for r in ranks], dtype=np.int64)
            device_imb[it, layer] = rank_totals.max() / rank_totals.mean()
    return ImbalanceSeries(expert_max_avg=expert_imb, device_max_avg=device_imb)


def device_imbalance(
    expert_loads: np.ndarray, placement: ExpertPlacement, num_ranks: int
) -> float:
    """Max/avg rank load for one per-expert load vector under a placement."""
    loads = {e: (int(round(x)), 0) for e, x in enumerate(expert_loads)}
    ranks = aggregate_rank_loads(loads, placement, num_ranks)
    totals = np.array([r.total for r in ranks], dtype=np.float64)
    if totals.sum() == 0:
        return 1.0
    return float(totals.max() / totals.mean())


def text_exposure(run: RunResult, trace: IterationTrace) -> ExposureReport:
    """Text tokens whose hosting rank was planned W4A4, over the whole run.

    Uses the static placement: the only strategies that ever plan W4A4
    (fp4all, realb, realb-seq) never move experts.
    """
    config = trace.cluster
    placement = place_experts_static(config)
    exposed = 0
    total_text = 0
    for (it, layer), plan in run.plans.items():
        loads = aggregate_rank_loads(
            trace.layer_loads(it, layer), placement, config.num_ranks
        )
        for rank, load in enumerate(loads):
            total_text += load.text_tokens
            if plan.per_rank_precision[rank] is Precision.W4A4:
                exposed += load.text_tokens
    return ExposureReport(text_tokens_under_fp4=exposed, total_text_tokens=total_text)


@dataclass(frozen=True)
class RunSummary:
    """The per-run aggregates the comparison report needs."""

    strategy: str
    e2e_time_ns: int
    compute_only_total_ns: int
    mem_delta_bytes: int
    migration_bytes: int
    text_exposure: float


def summarize_run(
    run: RunResult, trace: IterationTrace, config: ClusterConfig
) -> RunSummary:
    redundant = run.max_redundant_count
    if redundant > 0:
        base = place_experts_static(config)
        # delta depends only on the replica count, not on which experts moved
        assignment = list(base.assignment)
        for e in range(redundant):
            hosts = assignment[e]
            extra = next(r for r in range(config.num_ranks) if r not in hosts)
            assignment[e] = tuple(hosts) + (extra,)
        _, delta = memory_overhead(
            config,
            ExpertPlacement(assignment=tuple(assignment), redundant_count=redundant),
        )
    else:
        delta = 0
    return RunSummary(
        strategy=run.strategy,
        e2e_time_ns=run.e2e_time_ns,
        compute_only_total_ns=run.compute_only_total_ns,
        mem_delta_bytes=delta,
        migration_bytes=run.migration_volume_bytes,
        text_exposure=text_exposure(run, trace).exposure_fraction,
    )


@dataclass(frozen=True)
class ReportRow:
    strategy: str
    layer_speedup: float
    e2e_speedup: float
    mem_delta_bytes: int
    migration_bytes: int
    text_exposure: float


def speedup_report(summaries: dict[str, RunSummary]) -> list[ReportRow]:
    """Per-strategy speedups versus the baseline run.

    Layer speedup compares compute-only totals (communication excluded);
    e2e speedup compares full-path times including migration stalls.
    """
    if "baseline" not in summaries:
        raise ValueError("speedup report requires a baseline run")
    base = summaries["baseline"]
    rows = []
    for name in sorted(summaries):
        s = summaries[name]
        rows.append(
            ReportRow(
                strategy=name,
                layer_speedup=base.compute_only_total_ns / s.compute_only_total_ns,
                e2e_speedup=base.e2e_time_ns / s.e2e_time_ns,
                mem_delta_bytes=s.mem_delta_bytes,
                migration_bytes=s.migration_bytes,
                text_exposure=s.text_exposure,
            )
        )
    return rows


def write_report_csv(rows: list[ReportRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", "layer_speedup", "e2e_speedup", "mem_delta_bytes", "migration_bytes", "text_exposure"])
        for r in rows:
            w.writerow(
                [
                    r.strategy,
                    f"{r.layer_speedup:.6g}",
                    f"{r.e2e_speedup:.6g}",
                    r.mem_delta_bytes,
                    r.migration_bytes,
                    f"{r.text_exposure:.6g}",
                ]
            )
