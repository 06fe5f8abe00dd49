"""Shared fixtures: hypothesis profile + the two desk-scale experiment runs.

The desk-scale runs (known-count CRC and unknown-count Pareto testing) are
expensive, so they are computed once per session and shared between the
module tests and the acceptance checks.
"""
from __future__ import annotations

import time
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from doarisk.harness import (
    ExperimentPlan,
    build_stack,
    generate_dataset,
    run_trials,
)

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def _run_desk(plan):
    t0 = time.perf_counter()
    samples, failures = generate_dataset(plan)
    stack = build_stack(plan, samples)
    report = run_trials(plan, stack)
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(
        plan=plan,
        samples=samples,
        failures=failures,
        stack=stack,
        report=report,
        elapsed=elapsed,
    )


@pytest.fixture(scope="session")
def desk_known_crc():
    """K=1, order-1 reverberation, 200 cal / 100 test, 100 trials."""
    plan = ExperimentPlan(
        mode="known_crc",
        seed=101,
        k_max=1,
        counts_per_k={1: 300},
        n_cal=200,
        n_test=100,
        n_trials=100,
    )
    return _run_desk(plan)


@pytest.fixture(scope="session")
def desk_unknown_pt():
    """K in {1,2,3}, order-1 reverberation, 240 cal / 60 test, 50 trials."""
    plan = ExperimentPlan(
        mode="unknown_pt",
        seed=202,
        k_max=3,
        counts_per_k={1: 100, 2: 100, 3: 100},
        n_cal=240,
        n_test=60,
        n_trials=50,
    )
    return _run_desk(plan)


@pytest.fixture(scope="session")
def fwer_unknown():
    """100 Pareto-testing runs on synthetic losses with known true risks."""
    from doarisk.losses import ConfigGrid
    from doarisk.riskctl import pareto_testing

    from .oracles import synth_curve_stack, true_risk_mc, true_risk_md

    alpha, delta, trials, n = 0.1, 0.1, 100, 200
    grid = ConfigGrid.uniform(3, 15, 15)
    rng = np.random.default_rng(606)
    t0 = time.perf_counter()
    violations = 0
    rejected_counts = []
    for _ in range(trials):
        stack = synth_curve_stack(rng, n)
        outcome = pareto_testing(stack, grid, alpha, alpha, delta, rng)
        bad = False
        for j in outcome.final:
            cfg = outcome.configs[j]
            if true_risk_mc(cfg) > alpha or true_risk_md(cfg) > alpha:
                bad = True
        violations += bad
        rejected_counts.append(len(outcome.rejected))
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(
        alpha=alpha,
        delta=delta,
        trials=trials,
        violations=violations,
        rejected_counts=rejected_counts,
        elapsed=elapsed,
    )
