"""Analytic latency model: affine compute, alpha-beta all-to-all, quantization and migration.

All public functions return integer nanoseconds; real intermediates are
rounded half-to-even at the model boundary so results are identical across
platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .core import ClusterConfig, ExpertPlacement, Precision, RankLoad


@dataclass(frozen=True)
class CostParams:
    gemm_ns_per_token_bf16: float = 400.0
    fp4_speedup: float = 4.0
    nongemm_fixed_ns: float = 600_000.0
    nongemm_ns_per_token: float = 5.0
    dispatch_alpha_ns: float = 5_000.0
    dispatch_bytes_per_ns: float = 200.0
    bytes_per_token: int = 4096
    allgather_ns: float = 3_000.0
    quant_bytes_per_ns: float = 2_000.0
    migration_bytes_per_ns: float = 50.0

    def __post_init__(self):
        for name in (
            "gemm_ns_per_token_bf16",
            "dispatch_bytes_per_ns",
            "quant_bytes_per_ns",
            "migration_bytes_per_ns",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.fp4_speedup <= 1:
            raise ValueError("fp4_speedup must be > 1")
        if self.bytes_per_token <= 0:
            raise ValueError("bytes_per_token must be > 0")
        for name in ("nongemm_fixed_ns", "nongemm_ns_per_token", "dispatch_alpha_ns", "allgather_ns"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_mapping(cls, values: dict) -> "CostParams":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown cost parameters: {sorted(unknown)}")
        kwargs = {k: (int(v) if k == "bytes_per_token" else float(v)) for k, v in values.items()}
        return cls(**kwargs)


def _ns(x: float) -> int:
    """Round half-to-even to integer nanoseconds."""
    return round(x)


def rank_compute_latency(load: RankLoad, precision: Precision, p: CostParams) -> int:
    """Affine non-GEMM cost plus linear GEMM cost; only GEMM is precision-accelerated."""
    t = load.total
    speedup = p.fp4_speedup if precision is Precision.W4A4 else 1.0
    return _ns(
        p.nongemm_fixed_ns
        + p.nongemm_ns_per_token * t
        + p.gemm_ns_per_token_bf16 * t / speedup
    )


def dispatch_latency(rank_loads: list[RankLoad], p: CostParams) -> int:
    """Bottleneck-receiver alpha-beta model over the busiest rank."""
    if not rank_loads:
        raise ValueError("rank_loads must be non-empty")
    max_tokens = max(r.total for r in rank_loads)
    return _ns(p.dispatch_alpha_ns + max_tokens * p.bytes_per_token / p.dispatch_bytes_per_ns)


def transform_latency(num_experts: int, bytes_per_expert: int, p: CostParams) -> int:
    """Online weight quantization cost for one rank's hosted experts."""
    if num_experts < 0 or bytes_per_expert < 0:
        raise ValueError("counts must be >= 0")
    return _ns(num_experts * bytes_per_expert / p.quant_bytes_per_ns)


def migration_latency(
    num_replicas_moved: int, bytes_per_expert: int, p: CostParams
) -> tuple[int, int]:
    """Returns (latency_ns, volume_bytes) for moving K expert replicas."""
    if num_replicas_moved < 0:
        raise ValueError("num_replicas_moved must be >= 0")
    volume = num_replicas_moved * bytes_per_expert
    return _ns(volume / p.migration_bytes_per_ns), volume


def memory_overhead(
    config: ClusterConfig, placement: ExpertPlacement
) -> tuple[int, int]:
    """Per-rank expert weight footprint and the delta vs a redundancy-free placement.

    overhead = L * bytes_per_expert * (E_original + E_redundant) / num_ranks
    """
    e_original = placement.num_experts
    e_redundant = placement.redundant_count
    total = _ns(
        config.num_layers
        * config.bytes_per_expert
        * (e_original + e_redundant)
        / config.num_ranks
    )
    base = _ns(config.num_layers * config.bytes_per_expert * e_original / config.num_ranks)
    return total, total - base
