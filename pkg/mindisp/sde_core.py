"""
Controlled SDE state, time discretization and seeded Euler-Maruyama integration.

Everything here is vectorised over leading axes: a state batch has shape
(..., n), a Brownian block has shape (..., steps, m). The control entering the
drift is always the Markovian value w = sum_j xi_j(x) u_j(t_k), with u(t)
piecewise constant on the control knots.

Usage:
-------
grid = TimeGrid.uniform(horizon=6.0, knots_per_unit_time=20, substeps_per_knot=5)
noise = NoiseStream(seed=7)
ensembles = sample_ensemble(model, grid, control, 1000, noise)
"""

import logging
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from mindisp import config
from mindisp.errors import GridError, IntegrationBlowupError

if TYPE_CHECKING:
    from mindisp.descent import EnsembleControl

logger = logging.getLogger(__name__)

# A state (or a batch of states along leading axes), coordinates in model units.
State = npt.NDArray[np.float64]

DriftFn = Callable[[float, State, np.ndarray], np.ndarray]
DiffusionFn = Callable[[float, State], np.ndarray]
BasisFn = Callable[[State], np.ndarray]
GainFn = Callable[[float, State], np.ndarray]
InitialLaw = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    """
    Control knots 0 = t_0 < ... < t_K = T, each interval split into
    `substeps_per_knot` equal Euler-Maruyama steps.
    """

    knots: Tuple[float, ...]
    substeps_per_knot: int = config.SUBSTEPS_PER_KNOT

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise GridError("a time grid needs at least two knots")
        if knots[0] != 0.0:
            raise GridError(f"first knot must be 0, got {knots[0]}")
        if not np.all(np.diff(knots) > 0):
            raise GridError("knots must be strictly increasing")
        if int(self.substeps_per_knot) != self.substeps_per_knot or self.substeps_per_knot < 1:
            raise GridError(f"substeps_per_knot must be a positive integer, got {self.substeps_per_knot}")
        object.__setattr__(self, "knots", tuple(float(t) for t in knots))
        object.__setattr__(self, "substeps_per_knot", int(self.substeps_per_knot))

    @classmethod
    def uniform(cls, horizon: float, knots_per_unit_time: float = config.KNOTS_PER_UNIT_TIME,
                substeps_per_knot: int = config.SUBSTEPS_PER_KNOT) -> "TimeGrid":
        if horizon <= 0:
            raise GridError(f"horizon must be positive, got {horizon}")
        n_intervals = max(1, int(round(horizon * knots_per_unit_time)))
        knots = np.linspace(0.0, horizon, n_intervals + 1)
        knots[-1] = horizon
        return cls(tuple(knots), substeps_per_knot)

    @property
    def horizon(self) -> float:
        return self.knots[-1]

    @property
    def n_intervals(self) -> int:
        return len(self.knots) - 1

    @property
    def n_steps(self) -> int:
        return self.n_intervals * self.substeps_per_knot

    @cached_property
    def knot_times(self) -> np.ndarray:
        return np.asarray(self.knots)

    @cached_property
    def times(self) -> np.ndarray:
        """All substep boundaries, length n_steps + 1."""
        left = self.knot_times[:-1, None]
        width = np.diff(self.knot_times)[:, None]
        fractions = np.arange(self.substeps_per_knot)[None, :] / self.substeps_per_knot
        inner = (left + width * fractions).ravel()
        return np.append(inner, self.horizon)

    @cached_property
    def step_sizes(self) -> np.ndarray:
        return np.repeat(np.diff(self.knot_times) / self.substeps_per_knot, self.substeps_per_knot)

    def knot_of_step(self, step: int) -> int:
        return step // self.substeps_per_knot

    def step_of_knot(self, knot: int) -> int:
        return knot * self.substeps_per_knot

    def step_index(self, t: float) -> int:
        """Index of the substep boundary at time t; GridError if t is off-grid."""
        idx = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[idx], t, rtol=0.0, atol=1e-9 * max(1.0, self.horizon)):
            raise GridError(f"t={t} is not a substep boundary of the grid")
        return idx

    def knot_index(self, t: float) -> int:
        step = self.step_index(t)
        if step % self.substeps_per_knot:
            raise GridError(f"t={t} is not a control knot")
        return step // self.substeps_per_knot


@dataclass(frozen=True)
class ModelDefinition:
    """
    A controlled SDE dX = f_t(X, w) dt + sigma_t(X) dW with the Markovian
    control structure w(t, x) = sum_j xi_j(x) u_j(t).

    Args:
        state_dim (int): n.
        noise_dim (int): m.
        control_dim (int): d, the dimension of the Markovian value w.
        basis_size (int): J, the number of feedback basis functions xi_j, i.e.
            the length of the coefficient vector u(t).
        drift (callable): (t, x[..., n], w[..., d]) -> [..., n].
        diffusion (callable): (t, x[..., n]) -> [..., n, m]; never depends on w.
        feedback_basis (callable): x[..., n] -> [..., J, d], row j is xi_j(x).
        initial_law (callable): (rng, size) -> [size, n], i.i.d. draws of X_0.
        control_gain (callable, optional): (t, x) -> [..., n, d] such that
            drift(t, x, w) = drift(t, x, 0) + control_gain(t, x) @ w. Present
            only for drifts affine in w; enables the closed-form minimizer.
        name (str): label used in reports.
    """

    state_dim: int
    noise_dim: int
    control_dim: int
    basis_size: int
    drift: DriftFn
    diffusion: DiffusionFn
    feedback_basis: BasisFn
    initial_law: InitialLaw
    control_gain: Optional[GainFn] = None
    name: str = "model"

    @property
    def is_control_affine(self) -> bool:
        return self.control_gain is not None


class Purpose(IntEnum):
    """Last component of a stream id: what the random numbers are used for."""

    PATHS = 0
    INITIAL = 1
    ADJOINT = 2
    SYNTHESIS = 3
    SYNTHESIS_INITIAL = 4
    EVALUATION = 5
    EVALUATION_INITIAL = 6
    DUALITY = 7
    PLOT = 8


@dataclass(frozen=True)
class NoiseStream:
    """
    Counter-based keyed random stream: Philox seeded through a SeedSequence
    whose spawn key is `stream_id`. The same (seed, stream_id) always yields the
    same draws; distinct ids give independent streams, so any block of paths
    can be regenerated in isolation and in any order.
    """

    seed: int
    stream_id: Tuple[int, ...] = ()

    def __post_init__(self):
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream_id", tuple(int(k) for k in self.stream_id))

    def child(self, *key: int) -> "NoiseStream":
        return NoiseStream(self.seed, self.stream_id + tuple(int(k) for k in key))

    def keyed(self, iteration: int, particle: int, purpose: Purpose) -> "NoiseStream":
        return self.child(iteration, particle, int(purpose))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream_id)
        return np.random.Generator(np.random.Philox(seq))

    def brownian_increments(self, n_paths: int, grid: TimeGrid, first_step: int, last_step: int,
                            noise_dim: int) -> np.ndarray:
        """Increments dW ~ N(0, dt I_m) for substeps [first_step, last_step), shape (n_paths, steps, m)."""
        steps = last_step - first_step
        z = self.generator().standard_normal((n_paths, steps, noise_dim))
        return z * np.sqrt(grid.step_sizes[first_step:last_step])[None, :, None]


@dataclass
class StepTally:
    """Counts simulated path segments and Euler-Maruyama path-steps; safe across threads."""

    path_segments: int = 0
    sde_steps: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, paths: int, steps: int):
        with self._lock:
            self.path_segments += paths
            self.sde_steps += paths * steps

    def snapshot(self) -> Tuple[int, int]:
        with self._lock:
            return self.path_segments, self.sde_steps


@dataclass(frozen=True)
class ParticleEnsemble:
    """Weighted samples approximating the law mu_t; uniform weights unless given."""

    time: float
    particles: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        particles = np.atleast_2d(np.asarray(self.particles, dtype=float))
        if particles.shape[0] < 1:
            raise ValueError("an ensemble needs at least one particle")
        weights = self.weights
        if weights is None:
            weights = np.full(particles.shape[0], 1.0 / particles.shape[0])
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (particles.shape[0],) or np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
            raise ValueError("weights must be non-negative, one per particle, summing to 1")
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def expectation(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(self.weights @ fn(self.particles))

    def covariance(self) -> np.ndarray:
        """Biased (1/M) covariance matrix."""
        centered = self.particles - self.mean()
        return (centered * self.weights[:, None]).T @ centered


def check_state(model: ModelDefinition, x) -> State:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.state_dim,):
        raise ValueError(f"state has shape {x.shape}, expected trailing dimension {model.state_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"state has non-finite coordinates: {x.tolist()}")
    return x


def markov_value(model: ModelDefinition, x: State, u: np.ndarray) -> np.ndarray:
    """w = sum_j xi_j(x) u_j, shape (..., d)."""
    xi = model.feedback_basis(x)
    w = xi[..., 0, :] * u[0]
    for j in range(1, model.basis_size):
        w = w + xi[..., j, :] * u[j]
    return w


def em_step(model: ModelDefinition, t: float, x: State, w, dt: float, dW) -> State:
    """One Euler-Maruyama step x + f_t(x, w) dt + sigma_t(x) dW."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = np.asarray(w, dtype=float)
    dW = np.asarray(dW, dtype=float)
    sigma = model.diffusion(t, x)
    x_next = x + model.drift(t, x, w) * dt + (sigma * dW[..., None, :]).sum(axis=-1)
    if not np.all(np.isfinite(x_next)):
        first_bad = ()
        if x_next.ndim > 1:
            first_bad = tuple(np.argwhere(~np.isfinite(x_next).all(axis=-1))[0])
        raise IntegrationBlowupError(t, np.broadcast_to(x, x_next.shape)[first_bad])
    return x_next


def _coefficients(control: "EnsembleControl", grid: TimeGrid) -> np.ndarray:
    coeffs = np.asarray(control.coeffs, dtype=float)
    if coeffs.shape[0] != grid.n_intervals:
        raise GridError(f"control has {coeffs.shape[0]} rows, grid has {grid.n_intervals} intervals")
    return coeffs


def propagate(model: ModelDefinition, grid: TimeGrid, control: "EnsembleControl", first_step: int,
              last_step: int, x0: State, dW: np.ndarray, tally: Optional[StepTally] = None,
              record: bool = False) -> np.ndarray:
    """
    Integrates a batch of states from substep `first_step` to `last_step`.

    `dW` has shape (..., last_step - first_step, m) and broadcasts against the
    leading axes of `x0`; sharing one block across a batch gives common random
    numbers. Returns the end states, or with `record=True` the whole path with
    time on axis -2.
    """
    coeffs = _coefficients(control, grid)
    x = np.asarray(x0, dtype=float)
    path = [x] if record else None
    for i, step in enumerate(range(first_step, last_step)):
        u = coeffs[grid.knot_of_step(step)]
        w = markov_value(model, x, u)
        x = em_step(model, grid.times[step], x, w, grid.step_sizes[step], dW[..., i, :])
        if record:
            path.append(x)
    if tally is not None:
        tally.add(int(np.prod(x.shape[:-1], dtype=np.int64)), last_step - first_step)
    if record:
        return np.stack(path, axis=-2)
    return x


def simulate_path(model: ModelDefinition, grid: TimeGrid, control: "EnsembleControl",
                  start: Tuple[float, State], noise: NoiseStream,
                  tally: Optional[StepTally] = None) -> List[Tuple[float, State]]:
    """One path from (start time, start state) to T as a list of (time, state) pairs."""
    t0, x0 = start
    first = grid.step_index(t0)
    x0 = check_state(model, x0)
    dW = noise.brownian_increments(1, grid, first, grid.n_steps, model.noise_dim)[0]
    states = propagate(model, grid, control, first, grid.n_steps, x0, dW, tally, record=True)
    return list(zip(grid.times[first:].tolist(), states))


def simulate_paths(model: ModelDefinition, grid: TimeGrid, control: "EnsembleControl", n_paths: int,
                   noise: NoiseStream, tally: Optional[StepTally] = None) -> np.ndarray:
    """M full paths from i.i.d. initial draws on every substep, shape (M, n_steps + 1, n)."""
    if n_paths < 1:
        raise ValueError(f"need at least one path, got {n_paths}")
    x0 = check_state(model, model.initial_law(noise.child(Purpose.INITIAL).generator(), n_paths))
    dW = noise.child(Purpose.PATHS).brownian_increments(n_paths, grid, 0, grid.n_steps, model.noise_dim)
    return propagate(model, grid, control, 0, grid.n_steps, x0, dW, tally, record=True)


def sample_ensemble(model: ModelDefinition, grid: TimeGrid, control: "EnsembleControl", n_particles: int,
                    noise: NoiseStream, tally: Optional[StepTally] = None) -> List[ParticleEnsemble]:
    """Empirical measures mu^M_{t_k} at every knot, from M independent paths."""
    paths = simulate_paths(model, grid, control, n_particles, noise, tally)
    knot_states = paths[:, ::grid.substeps_per_knot, :]
    return [ParticleEnsemble(t, knot_states[:, k, :]) for k, t in enumerate(grid.knots)]
