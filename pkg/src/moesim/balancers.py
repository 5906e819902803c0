"""The six load-balancing strategies.

baseline / fp4all pick a fixed precision; eplb / async-eplb periodically
replicate predicted-hot experts (precision untouched); realb / realb-seq
switch hot, vision-heavy ranks to W4A4 per layer.  realb vs realb-seq and
eplb vs async-eplb differ only in how the engine charges their overheads.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import ClusterConfig, ExpertPlacement, Precision, RankLoad

STRATEGIES = ("baseline", "fp4all", "eplb", "async-eplb", "realb", "realb-seq")


@dataclass(frozen=True)
class PrecisionPlan:
    per_rank_precision: tuple[Precision, ...]
    hot_ranks: frozenset[int]
    vision_heavy_ranks: frozenset[int]
    active: bool

    def __post_init__(self):
        if not self.active and any(
            p is not Precision.W16A16 for p in self.per_rank_precision
        ):
            raise ValueError("inactive plan must be all W16A16")


@dataclass(frozen=True)
class RealbParams:
    capacity_factor: float = 1.0
    modality_threshold: float = 0.7
    global_batch_threshold: int = 2048

    def __post_init__(self):
        if self.capacity_factor <= 0:
            raise ValueError("capacity_factor must be > 0")
        if not 0.0 <= self.modality_threshold <= 1.0:
            raise ValueError("modality_threshold must lie in [0, 1]")
        if self.global_batch_threshold < 0:
            raise ValueError("global_batch_threshold must be >= 0")


@dataclass
class EplbState:
    window_size: int = 100
    interval: int = 100
    redundant_budget: int = 8
    window: deque = field(default_factory=deque)
    iterations_since_rebalance: int = 0

    def __post_init__(self):
        if self.window_size < 1 or self.interval < 1:
            raise ValueError("window_size and interval must be >= 1")
        if self.redundant_budget < 0:
            raise ValueError("redundant_budget must be >= 0")


def plan_baseline(loads: list[RankLoad]) -> PrecisionPlan:
    if not loads:
        raise ValueError("loads must be non-empty")
    return PrecisionPlan(
        per_rank_precision=tuple(Precision.W16A16 for _ in loads),
        hot_ranks=frozenset(),
        vision_heavy_ranks=frozenset(),
        active=False,
    )


def plan_fp4_all(loads: list[RankLoad]) -> PrecisionPlan:
    if not loads:
        raise ValueError("loads must be non-empty")
    all_ranks = frozenset(range(len(loads)))
    return PrecisionPlan(
        per_rank_precision=tuple(Precision.W4A4 for _ in loads),
        hot_ranks=all_ranks,
        vision_heavy_ranks=all_ranks,
        active=True,
    )


def plan_realb(
    loads: list[RankLoad], params: RealbParams, config: ClusterConfig
) -> PrecisionPlan:
    """W4A4 exactly on ranks that are both hot (load above C x mean) and vision-heavy.

    Gates on the global token sum so every rank reaches the same decision; in
    modality-isolated mode the vision test is dropped and any loaded hot rank
    is eligible.
    """
    if len(loads) != config.num_ranks:
        raise ValueError("loads length must equal num_ranks")
    total = sum(r.total for r in loads)
    if total < params.global_batch_threshold or total == 0:
        return plan_baseline(loads)
    ideal = total / len(loads)
    hot = frozenset(r.rank for r in loads if r.total / ideal > params.capacity_factor)
    if config.modality_isolated:
        vision_heavy = frozenset(r.rank for r in loads if r.total > 0)
    else:
        vision_heavy = frozenset(
            r.rank
            for r in loads
            if r.total > 0 and r.vision_ratio > params.modality_threshold
        )
    accelerated = hot & vision_heavy
    return PrecisionPlan(
        per_rank_precision=tuple(
            Precision.W4A4 if r in accelerated else Precision.W16A16
            for r in range(len(loads))
        ),
        hot_ranks=hot,
        vision_heavy_ranks=vision_heavy,
        active=True,
    )


def eplb_observe(state: EplbState, expert_loads: np.ndarray, num_experts: int) -> None:
    """Record one iteration's per-expert loads in the sliding window."""
    if len(expert_loads) != num_experts:
        raise ValueError(
            f"expected {num_experts} expert loads, got {len(expert_loads)}"
        )
    state.window.append(np.asarray(expert_loads, dtype=np.float64).copy())
    while len(state.window) > state.window_size:
        state.window.popleft()
    state.iterations_since_rebalance += 1


def eplb_predicted_loads(state: EplbState) -> np.ndarray:
    if not state.window:
        raise ValueError("window is empty")
    return np.mean(np.stack(list(state.window)), axis=0)


def eplb_rebalance(
    state: EplbState, config: ClusterConfig, old_placement: ExpertPlacement
) -> tuple[ExpertPlacement, int]:
    """Replicate the predicted-hottest experts and re-pack instances greedily.

    Longest-processing-time packing: instances sorted by predicted per-instance
    share descending, each placed on the least-loaded rank with a free slot
    (slot capacity experts_per_rank + ceil(budget / num_ranks)), preferring
    ranks not already hosting that expert.  Returns the new placement and K,
    the number of replicas whose host rank is new relative to old_placement.
    """
    if state.iterations_since_rebalance < state.interval:
        raise ValueError("rebalance called before the interval elapsed")
    predicted = eplb_predicted_loads(state)
    n = config.total_experts
    if len(predicted) != n:
        raise ValueError("window dimension does not match config")
    replicas = np.ones(n, dtype=np.int64)
    if state.redundant_budget > 0:
        # stable top-k: highest predicted load, ties to the lowest expert id
        order = np.lexsort((np.arange(n), -predicted))
        for e in order[: state.redundant_budget]:
            replicas[e] += 1
    capacity = config.experts_per_rank + math.ceil(
        state.redundant_budget / config.num_ranks
    )
    instances = []  # (share, expert, replica_idx)
    for e in range(n):
        share = predicted[e] / replicas[e]
        for i in range(replicas[e]):
            instances.append((share, e, i))
    instances.sort(key=lambda x: (-x[0], x[1], x[2]))
    rank_load = [0.0] * config.num_ranks
    rank_slots = [0] * config.num_ranks
    hosts: list[list[int]] = [[] for _ in range(n)]
    for share, e, _ in instances:
        eligible = [
            r
            for r in range(config.num_ranks)
            if rank_slots[r] < capacity and r not in hosts[e]
        ]
        if not eligible:
            # capacity corner: tolerate a duplicate host rather than fail
            eligible = [r for r in range(config.num_ranks) if rank_slots[r] < capacity]
        r = min(eligible, key=lambda r: (rank_load[r], r))
        rank_load[r] += share
        rank_slots[r] += 1
        if r not in hosts[e]:
            hosts[e].append(r)
    assignment = tuple(tuple(sorted(h)) for h in hosts)
    redundant = sum(len(h) - 1 for h in assignment)
    new_placement = ExpertPlacement(assignment=assignment, redundant_count=redundant)
    moved = 0
    for e in range(n):
        moved += len(set(assignment[e]) - set(old_placement.assignment[e]))
    state.iterations_since_rebalance = 0
    return new_placement, moved


def plan_for(
    strategy: str,
    loads: list[RankLoad],
    config: ClusterConfig,
    realb_params: RealbParams | None = None,
) -> PrecisionPlan:
    """Per-layer precision plan for a strategy tag.

    EPLB variants never touch precision; their placement updates happen at
    iteration boundaries in the engine, not here.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGIES)}")
    if strategy in ("baseline", "eplb", "async-eplb"):
        return plan_baseline(loads)
    if strategy == "fp4all":
        return plan_fp4_all(loads)
    return plan_realb(loads, realb_params or RealbParams(), config)
