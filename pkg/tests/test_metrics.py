import numpy as np
import pytest

from moesim import (
    ClusterConfig,
    CostParams,
    IterationTrace,
    RealbParams,
    RunSummary,
    TraceSpec,
    generate_trace,
    imbalance_series,
    place_experts_static,
    simulate_run,
    speedup_report,
    summarize_run,
    text_exposure,
)
from moesim.metrics import write_report_csv


def cfg(layers=1):
    return ClusterConfig(
        num_ranks=8, num_layers=layers, experts_per_rank=8, bytes_per_expert=1 << 20
    )


class TestImbalanceSeries:
    def test_uniform_trace_all_ones(self):
        config = cfg()
        records = tuple((0, 0, e, 2, 2) for e in range(64))
        trace = IterationTrace(records=records, cluster=config)
        series = imbalance_series(trace, place_experts_static(config))
        assert series.expert_max_avg[0, 0] == 1.0
        assert series.device_max_avg[0, 0] == 1.0

    def test_single_expert_concentration(self):
        config = cfg()
        trace = IterationTrace(records=((0, 0, 0, 640, 0),), cluster=config)
        series = imbalance_series(trace, place_experts_static(config))
        assert series.expert_max_avg[0, 0] == 64.0
        assert series.device_max_avg[0, 0] == 8.0

    def test_zero_load_convention(self):
        config = cfg(layers=2)
        trace = IterationTrace(records=((0, 0, 0, 0, 0),), cluster=config)
        series = imbalance_series(trace, place_experts_static(config))
        assert series.expert_max_avg[0, 0] == 1.0
        assert series.device_max_avg[0, 1] == 1.0

    def test_calibrated_device_peaks(self, calibrated_trace, placement):
        series = imbalance_series(calibrated_trace, placement)
        assert series.device_max_avg.max() > 3.0
        assert (series.device_max_avg > 2.0).mean() > 0.5


class TestTextExposure:
    def test_baseline_zero(self, sweep_runs, calibrated_trace):
        report = text_exposure(sweep_runs["baseline"], calibrated_trace)
        assert report.text_tokens_under_fp4 == 0
        assert report.exposure_fraction == 0.0

    def test_fp4all_full(self, sweep_runs, calibrated_trace):
        report = text_exposure(sweep_runs["fp4all"], calibrated_trace)
        assert report.exposure_fraction == 1.0

    def test_monotone_in_modality_threshold(self, calibrated_trace, costs):
        fractions = []
        for md in (0.0, 0.7, 0.9):
            run = simulate_run(
                calibrated_trace,
                "realb",
                costs,
                realb_params=RealbParams(modality_threshold=md),
            )
            fractions.append(text_exposure(run, calibrated_trace).exposure_fraction)
        assert fractions[0] >= fractions[1] >= fractions[2]


class TestSpeedupReport:
    def test_identity_row(self):
        s = RunSummary(
            strategy="baseline",
            e2e_time_ns=1000,
            compute_only_total_ns=600,
            mem_delta_bytes=0,
            migration_bytes=0,
            text_exposure=0.0,
        )
        rows = speedup_report({"baseline": s})
        assert rows[0].layer_speedup == 1.0
        assert rows[0].e2e_speedup == 1.0

    def test_requires_baseline(self):
        s = RunSummary("realb", 1, 1, 0, 0, 0.0)
        with pytest.raises(ValueError):
            speedup_report({"realb": s})

    def test_fp4all_amdahl_oracle(self, sweep_runs, calibrated_trace, costs):
        # layer speedup must equal 1 / (1 - g + g/s) with g the GEMM share of
        # the baseline compute-only total
        base = sweep_runs["baseline"]
        fp4 = sweep_runs["fp4all"]
        gemm_total = 0.0
        base_total = 0.0
        for (it, la), timing in base.layer_timings.items():
            crit = max(range(len(timing.per_rank)), key=lambda r: timing.per_rank[r].compute_ns)
            compute = timing.per_rank[crit].compute_ns
            base_total += compute
            loads_tokens = (
                compute - costs.nongemm_fixed_ns
            )  # solve tokens back out of the affine model
            tokens = loads_tokens / (costs.nongemm_ns_per_token + costs.gemm_ns_per_token_bf16)
            gemm_total += costs.gemm_ns_per_token_bf16 * tokens
        g = gemm_total / base_total
        expected = 1.0 / (1.0 - g + g / costs.fp4_speedup)
        actual = base.compute_only_total_ns / fp4.compute_only_total_ns
        assert actual == pytest.approx(expected, rel=1e-3)

    def test_non_eplb_memory_delta_zero(self, sweep_summaries):
        for tag in ("baseline", "fp4all", "realb", "realb-seq"):
            assert sweep_summaries[tag].mem_delta_bytes == 0
        for tag in ("eplb", "async-eplb"):
            assert sweep_summaries[tag].mem_delta_bytes > 0

    def test_report_csv_format(self, sweep_summaries, tmp_path):
        rows = speedup_report(sweep_summaries)
        path = tmp_path / "report.csv"
        write_report_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "strategy,layer_speedup,e2e_speedup,mem_delta_bytes,migration_bytes,text_exposure"
        assert len(lines) == 1 + len(rows)
        base_line = [l for l in lines if l.startswith("baseline,")][0]
        assert base_line.split(",")[1] == "1"
