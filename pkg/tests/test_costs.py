import numpy as np
import pytest

from mindisp.costs import (MomentIndex, central_moment_cost, constant_cost, cost_from_callable, doubled_model,
                           finite_difference_gradient, moment_sum_cost, pairwise_dispersion_cost, product_model,
                           spike_cost, squared_distance_cost, trace_covariance)
from mindisp.descent import EnsembleControl, evaluate_cost
from mindisp.models import brownian_model, frozen_model, theta_model
from mindisp.sde_core import NoiseStream, ParticleEnsemble, markov_value, simulate_paths


def test_central_moment_cases():
    second = central_moment_cost(MomentIndex((2,), (1.0,)))
    assert np.mean(second(np.array([[0.0], [2.0]]))) == 1.0
    assert np.all(second(np.full((5, 1), 1.0)) == 0.0)
    mixed = central_moment_cost(MomentIndex((2, 2), (1.0, 1.0)))
    assert mixed(np.array([2.0, 3.0])) == 4.0


def test_moment_index_validation():
    with pytest.raises(ValueError):
        MomentIndex((0, 0), (0.0, 0.0))
    with pytest.raises(ValueError):
        MomentIndex((-1, 2), (0.0, 0.0))
    with pytest.raises(ValueError):
        MomentIndex((2,), (0.0, 1.0))
    assert MomentIndex((1, 2), (0.0, 0.0)).order == 3


def test_moment_sum_adds_terms():
    total = moment_sum_cost([MomentIndex((2,), (0.0,)), MomentIndex((0, 2), (0.0, 1.0))])
    assert total(np.array([3.0, 4.0])) == pytest.approx(9.0 + 9.0)
    with pytest.raises(ValueError):
        moment_sum_cost([])


def test_spike_cost_cases():
    assert spike_cost(1)(np.array([0.0, 5.0])) == 0.0
    assert spike_cost(1)(np.array([4 * np.pi, 0.0])) == pytest.approx(0.0, abs=1e-28)
    assert spike_cost(1)(np.array([np.pi, 0.0])) == pytest.approx(4.0)
    assert spike_cost(2)(np.array([np.pi / 2, 0.0])) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        spike_cost(0)


def test_spike_cost_is_periodic():
    x = np.random.default_rng(0).uniform(-10.0, 10.0, size=(100, 2))
    shifted = x.copy()
    shifted[:, 0] += 2 * np.pi
    for p in (1, 2):
        np.testing.assert_allclose(spike_cost(p)(x), spike_cost(p)(shifted), atol=1e-13)


@pytest.mark.parametrize("cost", [
    spike_cost(1),
    spike_cost(2),
    central_moment_cost(MomentIndex((2, 2), (0.5, -0.3))),
    central_moment_cost(MomentIndex((3, 1), (0.0, 1.0))),
    squared_distance_cost([1.0, -2.0]),
    pairwise_dispersion_cost(1),
], ids=lambda c: c.name)
def test_gradient_matches_finite_differences(cost):
    x = np.random.default_rng(1).normal(size=(100, 2))
    fd = finite_difference_gradient(cost.value_fn, x, step=1e-5)
    np.testing.assert_allclose(cost.gradient(x), fd, rtol=1e-4, atol=1e-6)


def test_callable_cost_uses_finite_differences():
    cost = cost_from_callable(lambda x: np.sum(x ** 3, axis=-1))
    np.testing.assert_allclose(cost.gradient(np.array([1.0, -2.0])), [3.0, 12.0], rtol=1e-8)
    assert constant_cost(2.5)(np.zeros((4, 3))).tolist() == [2.5] * 4
    np.testing.assert_array_equal(constant_cost(2.5).gradient(np.ones((4, 3))), np.zeros((4, 3)))


def test_trace_covariance_cases():
    assert trace_covariance(np.full((6, 3), 0.7)) == 0.0
    assert trace_covariance(np.array([[-1.0], [1.0]])) == pytest.approx(1.0)
    assert trace_covariance(np.array([[4.0, 2.0]])) == 0.0


def test_trace_covariance_identity():
    rng = np.random.default_rng(2)
    for _ in range(100):
        m, n = rng.integers(2, 201), rng.integers(1, 6)
        samples = rng.normal(scale=3.0, size=(m, n))
        biased = np.sum((samples - samples.mean(axis=0)) ** 2) / m
        assert trace_covariance(samples) == pytest.approx(biased, rel=1e-12, abs=1e-12)


def test_trace_covariance_weighted():
    ens = ParticleEnsemble(0.0, [[0.0], [3.0]], weights=[0.25, 0.75])
    assert trace_covariance(ens) == pytest.approx(np.trace(ens.covariance()))


def test_doubled_frozen_model_stays_frozen(unit_grid, noise):
    model = doubled_model(frozen_model(2, 1.5))
    assert (model.state_dim, model.noise_dim, model.basis_size) == (4, 2, 1)
    paths = simulate_paths(model, unit_grid, EnsembleControl.zeros(unit_grid, 1), 3, noise)
    np.testing.assert_array_equal(paths, np.full(paths.shape, 1.5))


def test_doubled_diffusion_is_block_diagonal():
    model = doubled_model(brownian_model(0.05))
    sigma = model.diffusion(0.0, np.zeros((3, 2)))
    assert sigma.shape == (3, 2, 2)
    np.testing.assert_allclose(sigma[0], np.diag([np.sqrt(0.1)] * 2))


def test_doubled_theta_shares_coefficients():
    base = theta_model()
    model = doubled_model(base)
    z = np.array([0.3, 0.1, -0.4, 0.2])
    u = np.array([0.5, -1.0, 0.25, 2.0])
    w = markov_value(model, z, u)
    np.testing.assert_allclose(w, np.concatenate([markov_value(base, z[:2], u), markov_value(base, z[2:], u)]))
    drift = model.drift(0.0, z, w)
    np.testing.assert_allclose(drift[:2], base.drift(0.0, z[:2], w[:1]))
    np.testing.assert_allclose(drift[2:], base.drift(0.0, z[2:], w[1:]))
    gain = model.control_gain(0.0, z)
    np.testing.assert_allclose(model.drift(0.0, z, w), model.drift(0.0, z, np.zeros(2)) + gain @ w)


def test_product_model_dimensions():
    model = product_model(theta_model(), 3)
    assert (model.state_dim, model.noise_dim, model.control_dim, model.basis_size) == (6, 3, 3, 4)
    draws = model.initial_law(np.random.default_rng(0), 5)
    assert draws.shape == (5, 6)
    assert model.feedback_basis(draws).shape == (5, 4, 3)
    with pytest.raises(ValueError):
        product_model(theta_model(), 0)


def test_doubled_brownian_dispersion_equals_variance(long_grid):
    model = doubled_model(brownian_model(0.05))
    control = EnsembleControl.zeros(long_grid, 1)
    value, se = evaluate_cost(model, long_grid, control, pairwise_dispersion_cost(1), 10_000, NoiseStream(4))
    assert abs(value - 0.6) <= 3 * se


def test_doubled_marginal_matches_base(long_grid):
    control = EnsembleControl.zeros(long_grid, 1)
    paths = simulate_paths(doubled_model(brownian_model(0.05)), long_grid, control, 5000, NoiseStream(6))
    for block in (0, 1):
        terminal = paths[:, -1, block]
        se = 0.6 * np.sqrt(2.0 / (terminal.size - 1))
        assert abs(np.var(terminal, ddof=1) - 0.6) <= 3 * se
    # independent blocks
    assert abs(np.corrcoef(paths[:, -1, 0], paths[:, -1, 1])[0, 1]) <= 3 / np.sqrt(5000)
