from dataclasses import replace

import numpy as np
import pytest

from mindisp.costs import constant_cost, spike_cost, squared_distance_cost
from mindisp.descent import (STOP_FIXED_POINT, STOP_MAX_ITERS, DescentConfig, EnsembleControl, evaluate_cost,
                             ks_synthesize, run_descent)
from mindisp.errors import ControlSpaceError, DescentAborted, IntegrationBlowupError
from mindisp.hamiltonian import ControlSpace
from mindisp.models import brownian_model, controlled_linear_model, frozen_model
from mindisp.sde_core import NoiseStream, StepTally, TimeGrid


def test_control_validation(unit_grid):
    with pytest.raises(ControlSpaceError):
        EnsembleControl(unit_grid, np.zeros((3, 1)))
    with pytest.raises(ControlSpaceError):
        EnsembleControl(unit_grid, np.full((20, 1), np.inf))
    control = EnsembleControl.constant(unit_grid, [1.0, 2.0])
    assert control.coeffs.shape == (20, 2)
    with pytest.raises(ValueError):
        control.coeffs[0, 0] = 5.0
    with pytest.raises(ControlSpaceError):
        control.check_feasible(ControlSpace.box([-1.0, -1.0], [1.0, 1.0]))


def test_control_value_at(unit_grid):
    control = EnsembleControl(unit_grid, np.arange(20.0)[:, None])
    assert control.value_at(0.0)[0] == 0.0
    assert control.value_at(0.07)[0] == 1.0
    assert control.value_at(0.1)[0] == 2.0
    assert control.value_at(1.0)[0] == 19.0


def test_descent_config_validation():
    with pytest.raises(ValueError):
        DescentConfig(n_paths=0)
    with pytest.raises(ValueError):
        DescentConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        DescentConfig(n_eval=1)
    with pytest.raises(ControlSpaceError):
        DescentConfig(control_space=ControlSpace.penalty(2)).space_for(frozen_model())


def test_evaluate_cost_trivial_cases(unit_grid, theta, frozen, square, noise):
    assert evaluate_cost(theta, unit_grid, EnsembleControl.zeros(unit_grid, 4), constant_cost(0.5), 10,
                         noise) == (0.5, 0.0)
    assert evaluate_cost(theta, unit_grid, EnsembleControl.zeros(unit_grid, 4), constant_cost(0.1), 1000,
                         noise) == (0.1, 0.0)
    assert evaluate_cost(frozen, unit_grid, EnsembleControl.zeros(unit_grid, 1), square, 10, noise) == (1.0, 0.0)
    with pytest.raises(ValueError):
        evaluate_cost(frozen, unit_grid, EnsembleControl.zeros(unit_grid, 1), square, 1, noise)


def test_evaluate_cost_brownian(long_grid, brownian, square, noise):
    value, se = evaluate_cost(brownian, long_grid, EnsembleControl.zeros(long_grid, 1), square, 10_000, noise)
    assert abs(value - 0.6) <= 3 * se


def test_synthesis_with_zero_gradients(unit_grid, frozen, noise):
    cfg = DescentConfig(n_paths=5, n_particles=3)
    control = ks_synthesize(frozen, unit_grid, EnsembleControl.zeros(unit_grid, 1), constant_cost(1.0), cfg, noise)
    np.testing.assert_array_equal(control.coeffs, np.zeros((20, 1)))


def test_synthesis_steers_against_the_mean(unit_grid, noise):
    model = controlled_linear_model(0.0, 1.0, 0.1, initial_state=1.0)
    cfg = DescentConfig(n_paths=100, n_particles=10, control_space=ControlSpace.penalty(1, 10.0))
    control = ks_synthesize(model, unit_grid, EnsembleControl.zeros(unit_grid, 1), squared_distance_cost([0.0]),
                            cfg, noise)
    assert np.all(control.coeffs < 0.0)


def test_synthesis_is_deterministic(unit_grid, theta, noise):
    cfg = DescentConfig(n_paths=20, n_particles=2)
    ref = EnsembleControl.zeros(unit_grid, 4)
    first = ks_synthesize(theta, unit_grid, ref, spike_cost(1), cfg, noise)
    second = ks_synthesize(theta, unit_grid, ref, spike_cost(1), replace(cfg, threads=4), noise)
    np.testing.assert_array_equal(first.coeffs, second.coeffs)


def test_frozen_model_stops_at_first_iteration(unit_grid, frozen, square):
    report = run_descent(frozen, unit_grid, square, DescentConfig(n_paths=4, n_particles=2, n_eval=10))
    assert report.n_iterations == 1
    assert report.stop_reason == STOP_FIXED_POINT
    assert report.costs.tolist() == [1.0, 1.0]
    assert report.best_iteration == 0


def test_descent_reduces_linear_cost(unit_grid, linear, square):
    cfg = DescentConfig(n_paths=1000, n_particles=100, n_eval=10_000, max_iters=1, seed=3)
    report = run_descent(linear, unit_grid, square, cfg)
    first, second = report.iterations[0], report.iterations[1]
    assert first.cost - second.cost > 3 * np.hypot(first.std_error, second.std_error)
    assert report.stop_reason == STOP_MAX_ITERS
    assert report.best_control is second.control


def test_descent_report_bookkeeping(unit_grid, theta):
    seen = []
    cfg = DescentConfig(n_paths=10, n_particles=1, n_eval=50, max_iters=3, patience=5, seed=11)
    report = run_descent(theta, unit_grid, spike_cost(1), cfg, on_iteration=seen.append)
    assert [r.iteration for r in seen] == list(range(len(report.iterations)))
    assert np.all(np.diff(report.best_costs) <= 0.0)
    assert report.best_cost == report.best_costs[-1]
    assert report.wall_time > 0.0
    assert report.final_control is report.iterations[-1].control


def test_descent_is_deterministic(unit_grid, theta):
    cfg = DescentConfig(n_paths=10, n_particles=2, n_eval=50, max_iters=2, seed=5)
    first = run_descent(theta, unit_grid, spike_cost(1), cfg)
    second = run_descent(theta, unit_grid, spike_cost(1), replace(cfg, threads=3))
    np.testing.assert_array_equal(first.costs, second.costs)
    for a, b in zip(first.iterations, second.iterations):
        np.testing.assert_array_equal(a.control.coeffs, b.control.coeffs)
        assert (a.path_segments, a.sde_steps) == (b.path_segments, b.sde_steps)
    assert first.stop_reason == second.stop_reason


def test_step_accounting(unit_grid, theta):
    n_paths, n_particles, n_eval = 10, 3, 20
    cfg = DescentConfig(n_paths=n_paths, n_particles=n_particles, n_eval=n_eval, max_iters=1)
    report = run_descent(theta, unit_grid, spike_cost(1), cfg)
    k, n = unit_grid.n_intervals, theta.state_dim
    synthesis = k * n_particles * 2 * n * n_paths
    assert report.iterations[0].path_segments == n_eval
    assert report.iterations[1].path_segments == synthesis + (k - 1) * n_particles + n_eval
    assert report.iterations[1].path_segments <= 2 * synthesis


def test_blowup_aborts_with_partial_report(unit_grid, square):
    base = brownian_model(0.05)

    def exploding(t, x, w):
        return np.full_like(x, np.inf) if t > 0.5 else np.zeros_like(x)

    model = replace(base, drift=exploding)
    with pytest.raises(DescentAborted) as err:
        run_descent(model, unit_grid, square, DescentConfig(n_paths=2, n_particles=1, n_eval=5))
    assert isinstance(err.value.cause, IntegrationBlowupError)
    assert err.value.report.stop_reason == "aborted"
    assert err.value.report.iterations == []


def test_tally_is_shared_across_threads(unit_grid, theta, noise):
    tally = StepTally()
    cfg = DescentConfig(n_paths=4, n_particles=5, threads=3)
    ks_synthesize(theta, unit_grid, EnsembleControl.zeros(unit_grid, 4), spike_cost(1), cfg, noise, tally)
    assert tally.snapshot()[0] == 20 * 5 * 4 * 4 + 19 * 5


def test_custom_noise_root(unit_grid, frozen, square):
    report = run_descent(frozen, unit_grid, square, DescentConfig(n_eval=4), noise=NoiseStream(9).child(1))
    assert report.best_cost == 1.0


def test_box_space_keeps_controls_feasible(unit_grid, theta):
    space = ControlSpace.box([-0.5] * 4, [0.5] * 4)
    cfg = DescentConfig(n_paths=10, n_particles=1, n_eval=20, max_iters=2, control_space=space)
    report = run_descent(theta, unit_grid, spike_cost(1), cfg)
    for record in report.iterations:
        assert space.contains(record.control.coeffs)


def test_grid_built_from_knots_is_accepted(theta):
    grid = TimeGrid((0.0, 0.2, 0.5, 1.0), substeps_per_knot=3)
    cfg = DescentConfig(n_paths=5, n_particles=1, n_eval=10, max_iters=1)
    report = run_descent(theta, grid, spike_cost(2), cfg)
    assert report.best_control.coeffs.shape == (3, 4)


def test_uncontrolled_theta_cost_sits_in_calibrated_band(long_grid, theta, noise):
    # excitable neurons rest at V = -sqrt(-Y), costing 4|Y| / (1 + |Y|); about 2.2 on average
    value, se = evaluate_cost(theta, long_grid, EnsembleControl.zeros(long_grid, 4), spike_cost(1), 1000, noise)
    assert 1.9 <= value <= 2.9
    assert se < 0.05
