"""
Monte-Carlo Feynman-Kac estimates of the backward Kolmogorov solution

    p_t(x) = E l(X_{t,T}(x))

under a fixed reference control, its spatial gradient by central differences
with common random numbers, and the duality / increment-formula checks that
tie p to the forward law mu.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from mindisp import config
from mindisp.costs import CostFunction
from mindisp.hamiltonian import hamiltonian
from mindisp.sde_core import (ModelDefinition, NoiseStream, Purpose, StepTally, TimeGrid, check_state,
                              propagate, simulate_paths)

if TYPE_CHECKING:
    from mindisp.descent import EnsembleControl

logger = logging.getLogger(__name__)

# Upper bound on Brownian increments held in memory per particle chunk.
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class AdjointEstimate:
    """
    Estimate of p_t(x) and grad_x p_t(x).

    `std_error` is the standard error of the value; `gradient_std_error` holds
    the per-coordinate standard error of the CRN difference quotients (zeros when
    no gradient was estimated).
    """

    value: float
    gradient: np.ndarray
    std_error: float
    n_paths: int
    gradient_std_error: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError(f"non-finite gradient estimate {np.asarray(self.gradient).tolist()}")


def mean_and_error(values: np.ndarray, axis: int = -1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample mean and standard error along `axis`. The mean is shifted by the
    first sample, so identical samples return that sample and a zero error exactly.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    shift = np.take(values, [0], axis=axis)
    mean = np.squeeze(shift, axis=axis) + np.mean(values - shift, axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, np.std(values - shift, axis=axis, ddof=1) / np.sqrt(n)


def _workers(threads: int) -> int:
    """0 means one worker per CPU."""
    if threads == 0:
        return os.cpu_count() or 1
    return max(1, threads)


def _fd_steps(points: np.ndarray, h: Optional[float]) -> np.ndarray:
    if h is None:
        return config.FD_RELATIVE_STEP * np.maximum(1.0, np.abs(points))
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    return np.full(points.shape, float(h))


def estimate_p(model: ModelDefinition, grid: TimeGrid, ref_control: "EnsembleControl", t: float, x,
               n_paths: int, cost: CostFunction, noise: NoiseStream,
               tally: Optional[StepTally] = None) -> AdjointEstimate:
    """p_t(x) ~ (1/N) sum_j l(X^j_{t,T}(x)) over N paths under `ref_control`."""
    if n_paths < 1:
        raise ValueError(f"need at least one path, got {n_paths}")
    step = grid.step_index(t)
    x = check_state(model, x)
    dW = noise.brownian_increments(n_paths, grid, step, grid.n_steps, model.noise_dim)
    x0 = np.broadcast_to(x, (n_paths, model.state_dim))
    terminal = propagate(model, grid, ref_control, step, grid.n_steps, x0, dW, tally)
    value, std_error = mean_and_error(cost(terminal))
    return AdjointEstimate(float(value), np.zeros(model.state_dim), float(std_error), n_paths)


def estimate_grad_p_batch(model: ModelDefinition, grid: TimeGrid, ref_control: "EnsembleControl", t: float,
                          points, n_paths: int, cost: CostFunction, noise: NoiseStream,
                          h: Optional[float] = None, threads: int = 1,
                          tally: Optional[StepTally] = None) -> List[AdjointEstimate]:
    """
    Central-difference gradients of p_t at every row of `points`.

    All 2n perturbed starts of every point share ONE block of N Brownian paths
    drawn from `noise`. Points are split across `threads` workers; the result
    does not depend on the split.
    """
    if n_paths < 1:
        raise ValueError(f"need at least one path, got {n_paths}")
    step = grid.step_index(t)
    points = check_state(model, np.atleast_2d(points))
    n_points, n = points.shape
    steps = _fd_steps(points, h)

    offsets = np.zeros((n_points, 2 * n, n))
    for i in range(n):
        offsets[:, 2 * i, i] = steps[:, i]
        offsets[:, 2 * i + 1, i] = -steps[:, i]
    starts = points[:, None, :] + offsets

    dW = noise.brownian_increments(n_paths, grid, step, grid.n_steps, model.noise_dim)

    def run(chunk: np.ndarray) -> np.ndarray:
        x0 = np.broadcast_to(chunk[:, :, None, :], chunk.shape[:2] + (n_paths, n))
        terminal = propagate(model, grid, ref_control, step, grid.n_steps, x0, dW, tally)
        return cost(terminal)

    chunks = [c for c in np.array_split(starts, min(_workers(threads), n_points)) if len(c)]
    if len(chunks) == 1:
        values = run(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            values = np.concatenate(list(pool.map(run, chunks)))

    plus, minus = values[:, 0::2, :], values[:, 1::2, :]  # (P, n, N)
    quotients = (plus - minus) / (2.0 * steps[:, :, None])
    gradient, gradient_error = mean_and_error(quotients)
    per_path, _ = mean_and_error(np.swapaxes(values, 1, 2), axis=-1)  # stencil average, (P, N)
    value, value_error = mean_and_error(per_path)
    return [
        AdjointEstimate(float(value[k]), gradient[k], float(value_error[k]), n_paths, gradient_error[k])
        for k in range(n_points)
    ]


def estimate_grad_p(model: ModelDefinition, grid: TimeGrid, ref_control: "EnsembleControl", t: float, x,
                    n_paths: int, cost: CostFunction, noise: NoiseStream, h: Optional[float] = None,
                    tally: Optional[StepTally] = None) -> AdjointEstimate:
    """grad_x p_t(x) by CRN central differences; `value` is the stencil average of the 2n estimates."""
    x = check_state(model, x)
    return estimate_grad_p_batch(model, grid, ref_control, t, x[None, :], n_paths, cost, noise, h,
                                 tally=tally)[0]


def _pairing(model: ModelDefinition, grid: TimeGrid, adjoint_control: "EnsembleControl",
             cost: CostFunction, knot: int, particles: np.ndarray, n_paths: int, noise: NoiseStream,
             tally: Optional[StepTally]) -> Tuple[float, float]:
    """Estimate of the integral of p_{t_k} against the empirical measure of `particles`, with its standard error."""
    step = grid.step_of_knot(knot)
    n_steps = grid.n_steps - step
    per_chunk = max(1, _CHUNK_ELEMENTS // max(1, n_paths * max(1, n_steps) * model.noise_dim))
    estimates = []
    for start in range(0, len(particles), per_chunk):
        chunk = particles[start:start + per_chunk]
        # one independent stream per particle, so chunking never changes the draws
        dW = np.stack([
            noise.keyed(knot, start + l, Purpose.DUALITY).brownian_increments(
                n_paths, grid, step, grid.n_steps, model.noise_dim)
            for l in range(len(chunk))
        ])
        x0 = np.broadcast_to(chunk[:, None, :], (len(chunk), n_paths, model.state_dim))
        terminal = propagate(model, grid, adjoint_control, step, grid.n_steps, x0, dW, tally)
        estimates.append(mean_and_error(cost(terminal))[0])
    value, std_error = mean_and_error(np.concatenate(estimates))
    return float(value), float(std_error)


def duality_check(model: ModelDefinition, grid: TimeGrid, control: "EnsembleControl", cost: CostFunction,
                  times: Sequence[float], n_paths: int, n_particles: int, noise: NoiseStream,
                  adjoint_control: Optional["EnsembleControl"] = None,
                  tally: Optional[StepTally] = None) -> List[Tuple[float, float]]:
    """
    (defect, combined standard error) of  int p_t dmu^M_t - int p_0 dmu^M_0  at each
    requested knot time. mu is generated by `control`, p by `adjoint_control`
    (default: the same control, where every defect should vanish).
    """
    adjoint_control = control if adjoint_control is None else adjoint_control
    knots = [grid.knot_index(t) for t in times]
    paths = simulate_paths(model, grid, control, n_particles, noise.child(Purpose.PATHS), tally)
    knot_states = paths[:, ::grid.substeps_per_knot, :]

    base, base_error = _pairing(model, grid, adjoint_control, cost, 0, knot_states[:, 0, :], n_paths,
                                noise, tally)
    result = []
    for k in knots:
        value, error = _pairing(model, grid, adjoint_control, cost, k, knot_states[:, k, :], n_paths,
                                noise, tally)
        result.append((value - base, float(np.hypot(error, base_error))))
        logger.debug(f"duality pairing at t={grid.knots[k]:.4g}: {value:.6g} (base {base:.6g})")
    return result


def duality_defect(model: ModelDefinition, grid: TimeGrid, control: "EnsembleControl", cost: CostFunction,
                   times: Sequence[float], n_paths: int, n_particles: int, noise: NoiseStream,
                   adjoint_control: Optional["EnsembleControl"] = None) -> List[float]:
    """int p_t dmu^M_t - int p_0 dmu^M_0 at each requested time."""
    return [d for d, _ in duality_check(model, grid, control, cost, times, n_paths, n_particles, noise,
                                        adjoint_control)]


def cost_difference(model: ModelDefinition, grid: TimeGrid, control: "EnsembleControl",
                    ref_control: "EnsembleControl", cost: CostFunction, n_eval: int, noise: NoiseStream,
                    tally: Optional[StepTally] = None) -> Tuple[float, float]:
    """J[control] - J[ref_control] from the same initial draws and Brownian paths, with standard error."""
    x0 = check_state(model, model.initial_law(noise.child(Purpose.EVALUATION_INITIAL).generator(), n_eval))
    dW = noise.child(Purpose.EVALUATION).brownian_increments(n_eval, grid, 0, grid.n_steps, model.noise_dim)
    target = propagate(model, grid, control, 0, grid.n_steps, x0, dW, tally)
    reference = propagate(model, grid, ref_control, 0, grid.n_steps, x0, dW, tally)
    delta, error = mean_and_error(cost(target) - cost(reference))
    return float(delta), float(error)


@dataclass(frozen=True)
class IncrementCheck:
    """Both sides of the exact increment formula, each with its standard error."""

    direct: float
    direct_error: float
    integral: float
    integral_error: float

    @property
    def gap(self) -> float:
        return self.direct - self.integral

    @property
    def combined_error(self) -> float:
        return float(np.hypot(self.direct_error, self.integral_error))


def increment_check(model: ModelDefinition, grid: TimeGrid, control: "EnsembleControl",
                    ref_control: "EnsembleControl", cost: CostFunction, n_paths: int, n_particles: int,
                    n_eval: int, noise: NoiseStream, h: Optional[float] = None, threads: int = 1,
                    tally: Optional[StepTally] = None) -> IncrementCheck:
    """
    Direct J[u] - J[u_bar] against the time integral of
    (1/M) sum_l [H(x_l, grad p_bar, u_s) - H(x_l, grad p_bar, u_bar_s)] over mu = Law(X[u]),
    discretised by the left-endpoint rule on the control knots.
    """
    direct, direct_error = cost_difference(model, grid, control, ref_control, cost, n_eval, noise, tally)

    paths = simulate_paths(model, grid, control, n_particles, noise.child(Purpose.PATHS), tally)
    contributions = np.zeros(n_particles)
    for k in range(grid.n_intervals):
        t = grid.knots[k]
        states = paths[:, grid.step_of_knot(k), :]
        estimates = estimate_grad_p_batch(model, grid, ref_control, t, states, n_paths, cost,
                                          noise.keyed(k, 0, Purpose.ADJOINT), h, threads, tally)
        grads = np.array([e.gradient for e in estimates])
        gap = (hamiltonian(model, t, states, grads, control.coeffs[k])
               - hamiltonian(model, t, states, grads, ref_control.coeffs[k]))
        contributions += (grid.knots[k + 1] - t) * gap
    integral, integral_error = mean_and_error(contributions)
    return IncrementCheck(direct, direct_error, float(integral), float(integral_error))
