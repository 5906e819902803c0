"""Synthetic multimodal routing traces with Zipf-skewed, churning expert popularity.

The generative model: expert popularity follows a Zipf(zipf_s) profile over
popularity slots.  Every churn period one rank is picked as the "hot" rank;
the top half of its experts receive the most popular slots, concentrating
both load and vision tokens there.  Per iteration the slot weights get
lognormal jitter (popularity_jitter_sigma) so the max/avg expert ratio
fluctuates the way production routing logs do, and tokens are assigned to
experts multinomially.  Experts on the hot rank carry hot_rank_vision_frac
vision tokens; everyone else carries base_vision_frac.
"""

from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass

import numpy as np

from .core import ClusterConfig, ExpertPlacement, aggregate_rank_loads


class TraceParseError(ValueError):
    """Malformed trace file."""


class TraceMismatchError(ValueError):
    """Trace contents do not fit the declared cluster dimensions."""


TRACE_HEADER = "iter,layer,expert,vision_tokens,text_tokens"


@dataclass(frozen=True)
class TraceSpec:
    num_iterations: int
    seed: int
    # zipf_s calibrated by bisection so the top-1 expert carries ~5.5x the
    # mean expert load at the default jitter (see calibrate_zipf_s)
    zipf_s: float = 0.57
    hot_rank_vision_frac: float = 0.93
    base_vision_frac: float = 0.31
    tokens_per_iteration_mean: int = 4096
    tokens_per_iteration_jitter: int = 256
    decode_frac: float = 0.1
    churn_period: int | None = None
    popularity_jitter_sigma: float = 0.30

    def __post_init__(self):
        if self.num_iterations < 1:
            raise ValueError("num_iterations must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.zipf_s < 0:
            raise ValueError("zipf_s must be >= 0")
        for name in ("hot_rank_vision_frac", "base_vision_frac", "decode_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.tokens_per_iteration_mean < 1 or self.tokens_per_iteration_jitter < 0:
            raise ValueError("bad tokens_per_iteration parameters")
        if self.churn_period is not None and self.churn_period < 1:
            raise ValueError("churn_period must be >= 1 (or None for stationary)")
        if self.popularity_jitter_sigma < 0:
            raise ValueError("popularity_jitter_sigma must be >= 0")


@dataclass(frozen=True)
class IterationTrace:
    """Per (iteration, layer, expert) token counts split by modality."""

    records: tuple[tuple[int, int, int, int, int], ...]
    cluster: ClusterConfig

    def __post_init__(self):
        seen = set()
        for it, layer, expert, v, t in self.records:
            if not 0 <= layer < self.cluster.num_layers:
                raise TraceMismatchError(f"layer {layer} out of range")
            if not 0 <= expert < self.cluster.total_experts:
                raise TraceMismatchError(f"expert {expert} out of range")
            if it < 0 or v < 0 or t < 0:
                raise TraceMismatchError("negative field in trace record")
            key = (it, layer, expert)
            if key in seen:
                raise TraceMismatchError(f"duplicate record for {key}")
            seen.add(key)

    @property
    def num_iterations(self) -> int:
        return 1 + max((r[0] for r in self.records), default=-1)

    @functools.cached_property
    def _by_layer(self) -> dict[tuple[int, int], dict[int, tuple[int, int]]]:
        index: dict[tuple[int, int], dict[int, tuple[int, int]]] = {}
        for it, la, e, v, t in self.records:
            index.setdefault((it, la), {})[e] = (v, t)
        return index

    def layer_loads(self, iteration: int, layer: int) -> dict[int, tuple[int, int]]:
        """Per-expert (vision, text) counts for one layer of one iteration."""
        return self._by_layer.get((iteration, layer), {})

    def iteration_expert_totals(self, iteration: int) -> np.ndarray:
        """Per-expert total tokens summed over all layers of one iteration."""
        totals = np.zeros(self.cluster.total_experts, dtype=np.int64)
        for layer in range(self.cluster.num_layers):
            for e, (v, t) in self.layer_loads(iteration, layer).items():
                totals[e] += v + t
        return totals


def _slot_weights(n: int, s: float) -> np.ndarray:
    return np.arange(1, n + 1, dtype=np.float64) ** (-s)


def _period_assignment(config: ClusterConfig, seed: int, period: int) -> np.ndarray:
    """Map popularity slot -> expert id for one churn period.

    The hot rank's top half of experts take the most popular slots; all other
    slots are shuffled over the remaining experts.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, period)))
    hot_rank = int(rng.integers(config.num_ranks))
    hot_experts = np.arange(
        hot_rank * config.experts_per_rank, (hot_rank + 1) * config.experts_per_rank
    )
    n_top = max(1, config.experts_per_rank // 2)
    top = rng.permutation(hot_experts)[:n_top]
    rest = np.setdiff1d(np.arange(config.total_experts), top)
    slot_to_expert = np.concatenate([top, rng.permutation(rest)])
    return slot_to_expert


def hot_rank_for_period(config: ClusterConfig, spec: TraceSpec, period: int) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0, period)))
    return int(rng.integers(config.num_ranks))


def generate_trace(config: ClusterConfig, spec: TraceSpec) -> IterationTrace:
    """Deterministically generate a trace for (config, spec)."""
    n_experts = config.total_experts
    base_weights = _slot_weights(n_experts, spec.zipf_s)
    records: list[tuple[int, int, int, int, int]] = []
    slot_to_expert = None
    hot_rank = -1
    period = -1
    for it in range(spec.num_iterations):
        this_period = 0 if spec.churn_period is None else it // spec.churn_period
        if slot_to_expert is None or this_period != period:
            period = this_period
            slot_to_expert = _period_assignment(config, spec.seed, period)
            hot_rank = hot_rank_for_period(config, spec, period)
        total_rng = np.random.default_rng(
            np.random.SeedSequence(spec.seed, spawn_key=(2, it))
        )
        j = spec.tokens_per_iteration_jitter
        total = spec.tokens_per_iteration_mean + int(total_rng.integers(-j, j + 1)) if j else spec.tokens_per_iteration_mean
        total = max(1, total)
        hot_lo = hot_rank * config.experts_per_rank
        hot_hi = hot_lo + config.experts_per_rank
        for layer in range(config.num_layers):
            rng = np.random.default_rng(
                np.random.SeedSequence(spec.seed, spawn_key=(1, it, layer))
            )
            weights = base_weights
            if spec.popularity_jitter_sigma > 0:
                weights = weights * np.exp(
                    spec.popularity_jitter_sigma * rng.standard_normal(n_experts)
                )
            probs = weights / weights.sum()
            slot_counts = rng.multinomial(total, probs)
            expert_counts = np.zeros(n_experts, dtype=np.int64)
            expert_counts[slot_to_expert] = slot_counts
            for e in np.flatnonzero(expert_counts):
                count = int(expert_counts[e])
                frac = (
                    spec.hot_rank_vision_frac
                    if hot_lo <= e < hot_hi
                    else spec.base_vision_frac
                )
                v = int(round(count * frac))
                records.append((it, layer, int(e), v, count - v))
    return IterationTrace(records=tuple(records), cluster=config)


def calibrate_zipf_s(
    config: ClusterConfig,
    spec: TraceSpec,
    target_top1_ratio: float,
    lo: float = 0.0,
    hi: float = 3.0,
    tol: float = 0.01,
) -> float:
    """Bisect zipf_s so the mean top-1 expert load is target_top1_ratio x the mean expert load.

    The ratio is measured on traces actually emitted by generate_trace, so the
    calibration accounts for multinomial noise and popularity jitter.
    """

    def measured_ratio(s: float) -> float:
        trace = generate_trace(config, dataclasses.replace(spec, zipf_s=s))
        stats = trace_stats(trace, None)
        return float(np.mean(stats.expert_max_avg))

    while hi - lo > tol:
        mid = (lo + hi) / 2
        if measured_ratio(mid) < target_top1_ratio:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


@dataclass(frozen=True)
class TraceStats:
    """Per (iteration, layer) imbalance ratios and per-rank vision ratios."""

    expert_max_avg: np.ndarray  # shape (iters, layers)
    device_max_avg: np.ndarray  # shape (iters, layers); ones when no placement given
    rank_vision_ratio: np.ndarray  # shape (iters, layers, ranks)


def trace_stats(trace: IterationTrace, placement: ExpertPlacement | None) -> TraceStats:
    config = trace.cluster
    iters = trace.num_iterations
    layers = config.num_layers
    n_ranks = config.num_ranks
    expert_imb = np.ones((iters, layers))
    device_imb = np.ones((iters, layers))
    vision_ratio = np.zeros((iters, layers, n_ranks))
    per_key: dict[tuple[int, int], dict[int, tuple[int, int]]] = {}
    for it, la, e, v, t in trace.records:
        per_key.setdefault((it, la), {})[e] = (v, t)
    for (it, la), loads in per_key.items():
        totals = np.zeros(config.total_experts, dtype=np.int64)
        for e, (v, t) in loads.items():
            totals[e] = v + t
        if totals.sum() > 0:
            expert_imb[it, la] = totals.max() / totals.mean()
        if placement is not None:
            ranks = aggregate_rank_loads(loads, placement, n_ranks)
            rank_totals = np.array([r.total for r in ranks], dtype=np.int64)
            if rank_totals.sum() > 0:
                device_imb[it, la] = rank_totals.max() / rank_totals.mean()
            vision_ratio[it, la] = [r.vision_ratio for r in ranks]
    return TraceStats(
        expert_max_avg=expert_imb,
        device_max_avg=device_imb,
        rank_vision_ratio=vision_ratio,
    )


def write_trace(trace: IterationTrace, path) -> None:
    lines = [TRACE_HEADER]
    for rec in sorted(trace.records):
        lines.append(",".join(str(x) for x in rec))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_trace(path, config: ClusterConfig) -> IterationTrace:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise TraceParseError(f"{path}: line 1: bad or missing header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise TraceParseError(f"{path}: line {lineno}: expected 5 fields")
        try:
            rec = tuple(int(p) for p in parts)
        except ValueError:
            raise TraceParseError(f"{path}: line {lineno}: non-integer field") from None
        records.append(rec)
    return IterationTrace(records=tuple(records), cluster=config)
