"""Experiment configuration: flat dotted-key config files plus flag overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .balancers import RealbParams
from .core import ClusterConfig
from .costmodel import CostParams
from .tracegen import TraceSpec


class ConfigError(ValueError):
    """Malformed experiment config file."""


# defaults mirror the evaluated setup: C=1, M_d=0.7, batch threshold 2048
# (256 x 8 ranks), EPLB window 100 / interval 100 / 8 redundant experts,
# 4x FP4 GEMM speedup
@dataclass
class EplbConfig:
    window: int = 100
    interval: int = 100
    redundant: int = 8


@dataclass
class ExperimentConfig:
    cluster: ClusterConfig = field(
        default_factory=lambda: ClusterConfig(
            num_ranks=8,
            num_layers=4,
            experts_per_rank=8,
            bytes_per_expert=4 * 1024 * 1024,
        )
    )
    trace: TraceSpec = field(
        default_factory=lambda: TraceSpec(num_iterations=300, seed=2024)
    )
    cost: CostParams = field(default_factory=CostParams)
    realb: RealbParams = field(default_factory=RealbParams)
    eplb: EplbConfig = field(default_factory=EplbConfig)


_SECTIONS = {
    "cluster": ClusterConfig,
    "trace": TraceSpec,
    "cost": CostParams,
    "realb": RealbParams,
    "eplb": EplbConfig,
}

_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False}


def _coerce(cls, name: str, raw: str):
    ftypes = {f.name: f.type for f in fields(cls)}
    if name not in ftypes:
        raise ConfigError(f"unknown key {name!r} in section {cls.__name__}")
    t = ftypes[name]
    raw = raw.strip()
    if t == "bool":
        if raw.lower() not in _BOOL_VALUES:
            raise ConfigError(f"bad boolean for {name}: {raw!r}")
        return _BOOL_VALUES[raw.lower()]
    if t in ("int", "int | None"):
        if raw.lower() in ("none", "inf"):
            return None
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict[str, dict[str, object]]:
    """Parse `section.key = value` lines; '#' starts a comment."""
    out: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} missing section prefix")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        out[section][name] = _coerce(_SECTIONS[section], name, raw)
    return out


def load_experiment_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from defaults, then a config file, then flag overrides.

    overrides maps 'section.key' -> already-typed value; None values are kept
    for keys that allow them only when explicitly listed as nullable.
    """
    values: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            parsed = parse_config_text(f.read())
        for section, kv in parsed.items():
            values[section].update(kv)
    for key, value in (overrides or {}).items():
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r}")
        if all(f.name != name for f in fields(_SECTIONS[section])):
            raise ConfigError(f"unknown key {name!r} in section {section!r}")
        values[section][name] = value
    defaults = ExperimentConfig()
    try:
        cluster = ClusterConfig(
            **{
                f.name: values["cluster"].get(f.name, getattr(defaults.cluster, f.name))
                for f in fields(ClusterConfig)
            }
        )
        trace = TraceSpec(
            **{
                f.name: values["trace"].get(f.name, getattr(defaults.trace, f.name))
                for f in fields(TraceSpec)
            }
        )
        cost = CostParams(
            **{
                f.name: values["cost"].get(f.name, getattr(defaults.cost, f.name))
                for f in fields(CostParams)
            }
        )
        realb = RealbParams(
            **{
                f.name: values["realb"].get(f.name, getattr(defaults.realb, f.name))
                for f in fields(RealbParams)
            }
        )
        eplb = EplbConfig(
            **{
                f.name: values["eplb"].get(f.name, getattr(defaults.eplb, f.name))
                for f in fields(EplbConfig)
            }
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(cluster=cluster, trace=trace, cost=cost, realb=realb, eplb=eplb)
