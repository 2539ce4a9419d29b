"""
Theta benchmark and full-size oracle checks. These take minutes; run them with

    pytest -m slow
"""

import os
import time

import numpy as np
import pytest

from mindisp.adjoint import estimate_p
from mindisp.costs import squared_distance_cost
from mindisp.descent import EnsembleControl, run_descent
from mindisp.diagnostics import run_diagnostics
from mindisp.experiment import DiagnosticsSection, ExperimentConfig, GridSection
from mindisp.models import brownian_model
from mindisp.sde_core import NoiseStream, TimeGrid

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
SEEDS = (1, 2, 3, 4, 5)

pytestmark = pytest.mark.slow


def _theta_run(name: str, seed: int):
    cfg = ExperimentConfig.from_file(os.path.join(CONFIGS, name)).with_overrides(seed=seed).validate()
    model = cfg.build_model()
    return run_descent(model, cfg.build_grid(), cfg.build_cost(), cfg.build_descent_config(model, threads=0))


@pytest.fixture(scope="module")
def p1_reports():
    return {seed: _theta_run("theta_p1.ini", seed) for seed in SEEDS}


def test_feynman_kac_value_is_fast():
    grid = TimeGrid.uniform(6.0)
    start = time.perf_counter()
    est = estimate_p(brownian_model(0.05), grid, EnsembleControl.zeros(grid, 1), 0.0, [1.0], 10_000,
                     squared_distance_cost([0.0]), NoiseStream(1))
    assert time.perf_counter() - start < 5.0
    assert abs(est.value - 1.6) <= 3 * est.std_error


def test_default_diagnostics_pass():
    results = run_diagnostics(DiagnosticsSection(), GridSection(), seed=20240501)
    failed = [r.name for r in results if not r.passed]
    assert not failed


def test_theta_uncontrolled_baseline(p1_reports):
    for report in p1_reports.values():
        assert 1.9 <= report.costs[0] <= 2.9


def test_theta_descent_reaches_low_cost(p1_reports):
    hits = sum(report.best_cost < 0.25 for report in p1_reports.values())
    assert hits >= 4
    for report in p1_reports.values():
        assert report.n_iterations <= 10


def test_theta_second_power_denoises_further(p1_reports):
    hits = 0
    for seed, p1 in p1_reports.items():
        p2 = _theta_run("theta_p2.ini", seed)
        hits += p2.best_cost * 5.0 <= p1.costs[0]
    assert hits >= 4


def test_theta_step_count_matches_prediction(p1_reports):
    grid = TimeGrid.uniform(6.0)
    k, n, n_paths, n_particles = grid.n_intervals, 2, 100, 1
    steps_per_path = grid.substeps_per_knot
    for report in p1_reports.values():
        for record in report.iterations[1:]:
            # a synthesis path runs from its knot to T, on average half the horizon
            predicted = n_paths * n_particles * k * 2 * n * steps_per_path * k / 2
            assert 0.5 * predicted <= record.sde_steps <= 2.0 * predicted
            assert np.isfinite(record.cost)
