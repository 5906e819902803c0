"""Foundational domain types: cluster topology, expert placement, per-rank loads."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Precision(enum.Enum):
    W16A16 = "w16a16"
    W4A4 = "w4a4"


class PlacementMismatchError(ValueError):
    """Expert load refers to an expert-id absent from the placement."""


@dataclass(frozen=True)
class ClusterConfig:
    num_ranks: int
    num_layers: int
    experts_per_rank: int
    bytes_per_expert: int
    modality_isolated: bool = False

    def __post_init__(self):
        if self.num_ranks < 1:
            raise ValueError("num_ranks must be >= 1")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.experts_per_rank < 1:
            raise ValueError("experts_per_rank must be >= 1")
        if self.bytes_per_expert <= 0:
            raise ValueError("bytes_per_expert must be > 0")

    @property
    def total_experts(self) -> int:
        return self.num_ranks * self.experts_per_rank


@dataclass(frozen=True)
class ExpertPlacement:
    """Mapping expert-id -> hosting rank-ids; replicated experts list > 1 host."""

    assignment: tuple[tuple[int, ...], ...]
    redundant_count: int = 0

    def __post_init__(self):
        n_redundant = 0
        for expert, hosts in enumerate(self.assignment):
            if len(hosts) < 1:
                raise ValueError(f"expert {expert} has no host")
            n_redundant += len(hosts) - 1
        if n_redundant != self.redundant_count:
            raise ValueError(
                f"redundant_count={self.redundant_count} but assignment implies {n_redundant}"
            )

    @property
    def num_experts(self) -> int:
        return len(self.assignment)

    def hosted_experts(self, rank: int) -> list[int]:
        return [e for e, hosts in enumerate(self.assignment) if rank in hosts]

    def hosted_instance_count(self, rank: int) -> int:
        return sum(1 for hosts in self.assignment if rank in hosts)


@dataclass(frozen=True)
class RankLoad:
    rank: int
    vision_tokens: int
    text_tokens: int

    def __post_init__(self):
        if self.vision_tokens < 0 or self.text_tokens < 0:
            raise ValueError("token counts must be >= 0")

    @property
    def total(self) -> int:
        return self.vision_tokens + self.text_tokens

    @property
    def vision_ratio(self) -> float:
        """Fraction of vision tokens; 0 for an empty rank (never vision-heavy)."""
        if self.total == 0:
            return 0.0
        return self.vision_tokens / self.total


def place_experts_static(config: ClusterConfig) -> ExpertPlacement:
    """Contiguous default placement: expert e -> rank e // experts_per_rank."""
    assignment = tuple(
        (e // config.experts_per_rank,) for e in range(config.total_experts)
    )
    return ExpertPlacement(assignment=assignment, redundant_count=0)


def _split_evenly(count: int, parts: int) -> list[int]:
    """Near-equal split; remainder goes to the earliest parts."""
    base, rem = divmod(count, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def aggregate_rank_loads(
    expert_loads: dict[int, tuple[int, int]],
    placement: ExpertPlacement,
    num_ranks: int,
) -> list[RankLoad]:
    """Sum per-expert (vision, text) counts onto their hosting ranks.

    A replicated expert's tokens are split into near-equal shares, one per
    hosting rank, with the remainder assigned to the lowest rank-ids.
    """
    vision = [0] * num_ranks
    text = [0] * num_ranks
    for expert, (v, t) in expert_loads.items():
        if expert < 0 or expert >= placement.num_experts:
            raise PlacementMismatchError(f"expert {expert} not in placement")
        hosts = sorted(set(placement.assignment[expert]))
        if len(hosts) == 1:
            vision[hosts[0]] += v
            text[hosts[0]] += t
        else:
            for host, share in zip(hosts, _split_evenly(v, len(hosts))):
                vision[host] += share
            for host, share in zip(hosts, _split_evenly(t, len(hosts))):
                text[host] += share
    return [RankLoad(rank=r, vision_tokens=vision[r], text_tokens=text[r]) for r in range(num_ranks)]
