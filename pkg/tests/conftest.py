import sys

import pytest

from moesim import (
    ClusterConfig,
    CostParams,
    TraceSpec,
    generate_trace,
    place_experts_static,
    simulate_run,
    summarize_run,
)


@pytest.fixture(scope="session")
def cluster():
    return ClusterConfig(
        num_ranks=8,
        num_layers=4,
        experts_per_rank=8,
        bytes_per_expert=4 * 1024 * 1024,
    )


@pytest.fixture(scope="session")
def costs():
    return CostParams()


@pytest.fixture(scope="session")
def calibrated_trace(cluster):
    """The paper-like trace: Zipf-skewed experts, one vision-dominated hot rank."""
    return generate_trace(cluster, TraceSpec(num_iterations=300, seed=2024))


@pytest.fixture(scope="session")
def placement(cluster):
    return place_experts_static(cluster)


@pytest.fixture(scope="session")
def sweep_runs(calibrated_trace, costs):
    from moesim import STRATEGIES

    return {s: simulate_run(calibrated_trace, s, costs) for s in STRATEGIES}


@pytest.fixture(scope="session")
def sweep_summaries(sweep_runs, calibrated_trace, cluster):
    return {
        s: summarize_run(r, calibrated_trace, cluster) for s, r in sweep_runs.items()
    }


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    acceptance = sys.modules.get("test_acceptance")
    verdicts = getattr(acceptance, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
