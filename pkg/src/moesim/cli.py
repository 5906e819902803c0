"""Command-line front end: gen-trace, simulate, compare.

Exit codes: 0 success, 2 usage error, 3 data/format error.  Output files are
written atomically (temp file + rename) and every command is a pure function
of its flags, config, and inputs, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

from .balancers import STRATEGIES, EplbState, RealbParams
from .config import ConfigError, load_experiment_config
from .core import ClusterConfig
from .engine import (
    simulate_run,
    write_events_csv,
    write_layers_csv,
    write_ranks_csv,
)
from .metrics import RunSummary, speedup_report, summarize_run, write_report_csv
from .tracegen import (
    TraceMismatchError,
    TraceParseError,
    TraceSpec,
    generate_trace,
    read_trace,
    write_trace,
)

USAGE_ERROR = 2
DATA_ERROR = 3


def _atomic_write(path, write_fn):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _add_cluster_flags(p: argparse.ArgumentParser):
    p.add_argument("--ranks", type=int, help="number of EP ranks")
    p.add_argument("--experts-per-rank", type=int, help="experts hosted per rank")
    p.add_argument("--layers", type=int, help="number of MoE layers")


def cmd_gen_trace(args) -> int:
    overrides = {}
    for flag, key in [
        ("ranks", "cluster.num_ranks"),
        ("experts_per_rank", "cluster.experts_per_rank"),
        ("layers", "cluster.num_layers"),
        ("iters", "trace.num_iterations"),
        ("seed", "trace.seed"),
        ("zipf", "trace.zipf_s"),
        ("hot_vision_frac", "trace.hot_rank_vision_frac"),
        ("base_vision_frac", "trace.base_vision_frac"),
        ("tokens_mean", "trace.tokens_per_iteration_mean"),
        ("tokens_jitter", "trace.tokens_per_iteration_jitter"),
        ("churn", "trace.churn_period"),
        ("pop_jitter", "trace.popularity_jitter_sigma"),
    ]:
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    cfg = load_experiment_config(args.config, overrides)
    trace = generate_trace(cfg.cluster, cfg.trace)
    _atomic_write(args.out, lambda p: write_trace(trace, p))
    return 0


def _run_one(cfg, trace, strategy, out_dir, trace_digest, ranks_iters) -> None:
    eplb_state = None
    if strategy in ("eplb", "async-eplb"):
        eplb_state = EplbState(
            window_size=cfg.eplb.window,
            interval=cfg.eplb.interval,
            redundant_budget=cfg.eplb.redundant,
        )
    result = simulate_run(
        trace, strategy, cfg.cost, realb_params=cfg.realb, eplb_state=eplb_state
    )
    summary = summarize_run(result, trace, cfg.cluster)
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "layers.csv"), lambda p: write_layers_csv(result, p))
    _atomic_write(
        os.path.join(out_dir, "ranks.csv"),
        lambda p: write_ranks_csv(result, ranks_iters, p),
    )
    _atomic_write(os.path.join(out_dir, "events.csv"), lambda p: write_events_csv(result, p))
    meta = {
        "strategy": strategy,
        "trace_sha256": trace_digest,
        "e2e_time_ns": summary.e2e_time_ns,
        "compute_only_total_ns": summary.compute_only_total_ns,
        "mem_delta_bytes": summary.mem_delta_bytes,
        "migration_bytes": summary.migration_bytes,
        "text_exposure": summary.text_exposure,
    }
    _atomic_write(
        os.path.join(out_dir, "summary.json"),
        lambda p: open(p, "w").write(json.dumps(meta, indent=2, sort_keys=True) + "\n"),
    )


def cmd_simulate(args) -> int:
    overrides = {}
    if args.modality_threshold is not None:
        overrides["realb.modality_threshold"] = args.modality_threshold
    if args.ranks is not None:
        overrides["cluster.num_ranks"] = args.ranks
    if args.experts_per_rank is not None:
        overrides["cluster.experts_per_rank"] = args.experts_per_rank
    if args.layers is not None:
        overrides["cluster.num_layers"] = args.layers
    cfg = load_experiment_config(args.config, overrides)
    for strategy in args.strategy:
        if strategy not in STRATEGIES:
            print(
                f"error: unknown strategy {strategy!r}; valid: {', '.join(STRATEGIES)}",
                file=sys.stderr,
            )
            return USAGE_ERROR
    trace = read_trace(args.trace, cfg.cluster)
    digest = _sha256(args.trace)
    ranks_iters = [int(x) for x in args.ranks_iters.split(",")] if args.ranks_iters else [0]
    for strategy in args.strategy:
        out_dir = (
            args.out_dir
            if len(args.strategy) == 1
            else os.path.join(args.out_dir, strategy)
        )
        _run_one(cfg, trace, strategy, out_dir, digest, ranks_iters)
    return 0


def cmd_compare(args) -> int:
    summaries: dict[str, RunSummary] = {}
    digests = set()
    for run_dir in args.runs:
        path = os.path.join(run_dir, "summary.json")
        if not os.path.exists(path):
            print(f"error: {run_dir} has no summary.json", file=sys.stderr)
            return DATA_ERROR
        with open(path) as f:
            meta = json.load(f)
        digests.add(meta["trace_sha256"])
        summaries[meta["strategy"]] = RunSummary(
            strategy=meta["strategy"],
            e2e_time_ns=meta["e2e_time_ns"],
            compute_only_total_ns=meta["compute_only_total_ns"],
            mem_delta_bytes=meta["mem_delta_bytes"],
            migration_bytes=meta["migration_bytes"],
            text_exposure=meta["text_exposure"],
        )
    if len(digests) > 1:
        print("error: run directories were produced from different traces", file=sys.stderr)
        return DATA_ERROR
    try:
        rows = speedup_report(summaries)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    _atomic_write(args.out, lambda p: write_report_csv(rows, p))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moesim",
        description="Deterministic simulator of expert-parallel multimodal MoE inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="generate a synthetic routing trace")
    _add_cluster_flags(g)
    g.add_argument("--iters", type=int, help="iterations to generate")
    g.add_argument("--seed", type=int, help="64-bit RNG seed")
    g.add_argument("--zipf", type=float, help="expert popularity skew exponent")
    g.add_argument("--hot-vision-frac", type=float, help="vision fraction on the hot rank")
    g.add_argument("--base-vision-frac", type=float, help="vision fraction elsewhere")
    g.add_argument("--tokens-mean", type=int, help="mean tokens per iteration")
    g.add_argument("--tokens-jitter", type=int, help="tokens-per-iteration jitter")
    g.add_argument("--churn", type=int, help="iterations between hot-set re-samples")
    g.add_argument("--pop-jitter", type=float, help="per-iteration popularity jitter sigma")
    g.add_argument("--config", help="experiment config file")
    g.add_argument("--out", required=True, help="trace file to write")
    g.set_defaults(func=cmd_gen_trace)

    s = sub.add_parser("simulate", help="simulate one or more strategies over a trace")
    s.add_argument("--trace", required=True, help="trace file")
    s.add_argument(
        "--strategy",
        required=True,
        nargs="+",
        help=f"strategy tags ({', '.join(STRATEGIES)})",
    )
    s.add_argument("--config", help="experiment config file")
    s.add_argument("--out-dir", required=True, help="output directory")
    s.add_argument("--modality-threshold", type=float, help="override realb.modality_threshold")
    s.add_argument(
        "--ranks-iters",
        help="comma-separated iterations to dump per-rank phases for (default: 0)",
    )
    _add_cluster_flags(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="assemble a speedup report from run directories")
    c.add_argument("--runs", required=True, nargs="+", help="run directories (one per strategy)")
    c.add_argument("--out", required=True, help="report.csv path")
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TraceParseError, TraceMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
