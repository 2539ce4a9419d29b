"""
The descent loop: each iteration synthesizes a new piecewise-constant control
knot by knot (Krasovskii-Subbotin sampling) from Feynman-Kac gradients of the
reference adjoint, then evaluates it on a fixed Monte-Carlo test sample.

Usage:
-------
cfg = DescentConfig(n_paths=100, n_particles=1, n_eval=1000, seed=7)
report = run_descent(model, grid, spike_cost(1), cfg)
report.best_control.coeffs
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from mindisp import config
from mindisp.adjoint import estimate_grad_p_batch, mean_and_error
from mindisp.costs import CostFunction
from mindisp.errors import ControlSpaceError, DescentAborted, MinDispError
from mindisp.hamiltonian import ControlSpace, knot_control
from mindisp.sde_core import (ModelDefinition, NoiseStream, Purpose, StepTally, TimeGrid, check_state,
                              propagate)

logger = logging.getLogger(__name__)

STOP_TOLERANCE = "tolerance"
STOP_PATIENCE = "patience"
STOP_MAX_ITERS = "max_iters"
STOP_FIXED_POINT = "fixed_point"


@dataclass(frozen=True, eq=False)
class EnsembleControl:
    """u(t) = coeffs[k] on [t_k, t_{k+1}); one row per control interval, one column per basis function."""

    grid: TimeGrid
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float, ndmin=2)
        if coeffs.ndim != 2 or coeffs.shape[0] != self.grid.n_intervals:
            raise ControlSpaceError(
                f"control needs {self.grid.n_intervals} rows, got array of shape {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ControlSpaceError("control coefficients must be finite")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, grid: TimeGrid, basis_size: int) -> "EnsembleControl":
        return cls(grid, np.zeros((grid.n_intervals, basis_size)))

    @classmethod
    def constant(cls, grid: TimeGrid, values) -> "EnsembleControl":
        return cls(grid, np.tile(np.atleast_1d(np.asarray(values, dtype=float)), (grid.n_intervals, 1)))

    @property
    def basis_size(self) -> int:
        return self.coeffs.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.grid.knot_times, t, side="right")) - 1
        return self.coeffs[min(max(k, 0), self.grid.n_intervals - 1)]

    def same_as(self, other: "EnsembleControl") -> bool:
        return np.array_equal(self.coeffs, other.coeffs) and self.grid.knots == other.grid.knots

    def check_feasible(self, space: ControlSpace):
        if self.basis_size != space.dim or not space.contains(self.coeffs):
            raise ControlSpaceError(f"control is not admissible for the {space.kind} space of dim {space.dim}")


@dataclass(frozen=True)
class DescentConfig:
    """
    Args:
        n_paths (int): N, Feynman-Kac paths per adjoint estimate.
        n_particles (int): M, synthesis particles.
        tolerance (float): epsilon on the decrease of the best-so-far cost.
        max_iters (int): maximum number of synthesized controls.
        n_eval (int): test sample for the evaluated cost.
        seed (int): root of every noise stream.
        patience (int): consecutive iterations without an epsilon-decrease before stopping.
        fd_step (float, optional): absolute finite-difference step; default is relative.
        threads (int): worker threads for adjoint estimates, 0 = one per CPU.
        control_space (ControlSpace, optional): defaults to the penalty space with the default lambda.
        show_progress (bool): tqdm bar over the knots of every synthesis.
    """

    n_paths: int = config.ADJOINT_PATHS
    n_particles: int = config.SYNTHESIS_PARTICLES
    tolerance: float = config.TOLERANCE
    max_iters: int = config.MAX_ITERS
    n_eval: int = config.EVAL_PATHS
    seed: int = config.SEED
    patience: int = config.PATIENCE
    fd_step: Optional[float] = None
    threads: int = 1
    control_space: Optional[ControlSpace] = None
    show_progress: bool = False

    def __post_init__(self):
        for name in ("n_paths", "n_particles", "max_iters", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.n_eval < 2:
            raise ValueError(f"n_eval must be at least 2, got {self.n_eval}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.threads < 0:
            raise ValueError(f"threads must be non-negative, got {self.threads}")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")

    def space_for(self, model: ModelDefinition) -> ControlSpace:
        space = self.control_space or ControlSpace.penalty(model.basis_size)
        if space.dim != model.basis_size:
            raise ControlSpaceError(f"control space has dim {space.dim}, model has {model.basis_size} basis functions")
        return space


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    control: EnsembleControl
    cost: float
    std_error: float
    best_cost: float
    elapsed: float
    path_segments: int
    sde_steps: int


@dataclass
class DescentReport:
    """Per-iteration trace (iteration 0 is the initial control) and the best control seen."""

    iterations: List[IterationRecord] = field(default_factory=list)
    best_control: Optional[EnsembleControl] = None
    best_cost: float = np.inf
    best_std_error: float = np.nan
    best_iteration: int = -1
    wall_time: float = 0.0
    stop_reason: str = ""

    @property
    def n_iterations(self) -> int:
        """Number of synthesized controls (iteration 0 not counted)."""
        return max(0, len(self.iterations) - 1)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.iterations])

    @property
    def best_costs(self) -> np.ndarray:
        return np.minimum.accumulate(self.costs) if self.iterations else np.array([])

    @property
    def final_control(self) -> Optional[EnsembleControl]:
        return self.iterations[-1].control if self.iterations else None

    def add(self, record: IterationRecord):
        self.iterations.append(record)
        if record.cost < self.best_cost:
            self.best_cost = record.cost
            self.best_std_error = record.std_error
            self.best_control = record.control
            self.best_iteration = record.iteration


def evaluate_cost(model: ModelDefinition, grid: TimeGrid, control: EnsembleControl, cost: CostFunction,
                  n_eval: int, noise: NoiseStream, tally: Optional[StepTally] = None) -> Tuple[float, float]:
    """Monte-Carlo mean of l(X_T) over n_eval paths from independent initial draws, with standard error."""
    if n_eval < 2:
        raise ValueError(f"n_eval must be at least 2, got {n_eval}")
    x0 = check_state(model, model.initial_law(noise.child(Purpose.EVALUATION_INITIAL).generator(), n_eval))
    dW = noise.child(Purpose.EVALUATION).brownian_increments(n_eval, grid, 0, grid.n_steps, model.noise_dim)
    terminal = propagate(model, grid, control, 0, grid.n_steps, x0, dW, tally)
    value, std_error = mean_and_error(cost(terminal))
    return float(value), float(std_error)


def ks_synthesize(model: ModelDefinition, grid: TimeGrid, ref_control: EnsembleControl, cost: CostFunction,
                  cfg: DescentConfig, noise: NoiseStream, tally: Optional[StepTally] = None) -> EnsembleControl:
    """
    Builds the new control left to right. At knot t_k the M particles are first
    advanced from t_{k-1} under the rows already synthesized, then the row for
    [t_k, t_{k+1}) minimizes the particle-averaged Hamiltonian built from
    gradients of p under `ref_control`.
    """
    space = cfg.space_for(model)
    m = cfg.n_particles
    coeffs = np.zeros((grid.n_intervals, model.basis_size))
    particles = check_state(model, model.initial_law(noise.child(Purpose.SYNTHESIS_INITIAL).generator(), m))
    dW = noise.child(Purpose.SYNTHESIS).brownian_increments(m, grid, 0, grid.n_steps, model.noise_dim)

    knots = tqdm(range(grid.n_intervals), desc="Synthesizing knots", leave=False, disable=not cfg.show_progress)
    for k in knots:
        if k > 0:
            first, last = grid.step_of_knot(k - 1), grid.step_of_knot(k)
            # rows >= k are still zero and are not read while advancing to t_k
            partial = EnsembleControl(grid, coeffs)
            particles = propagate(model, grid, partial, first, last, particles, dW[:, first:last, :], tally)
        t = grid.knots[k]
        estimates = estimate_grad_p_batch(model, grid, ref_control, t, particles, cfg.n_paths, cost,
                                          noise.keyed(k, 0, Purpose.ADJOINT), cfg.fd_step, cfg.threads, tally)
        grads = np.array([e.gradient for e in estimates])
        coeffs[k] = knot_control(model, t, particles, grads, space)
    return EnsembleControl(grid, coeffs)


def run_descent(model: ModelDefinition, grid: TimeGrid, cost: CostFunction, cfg: DescentConfig,
                initial_control: Optional[EnsembleControl] = None, noise: Optional[NoiseStream] = None,
                on_iteration: Optional[Callable[[IterationRecord], None]] = None) -> DescentReport:
    """
    u^{k+1} = ks_synthesize(ref=u^k) until the best evaluated cost stops
    decreasing by at least epsilon for `patience` consecutive iterations, the
    synthesized control reproduces its reference exactly, or max_iters is hit.
    Returns the best control seen, which need not be the last one.
    """
    noise = NoiseStream(cfg.seed) if noise is None else noise
    space = cfg.space_for(model)
    control = EnsembleControl.zeros(grid, model.basis_size) if initial_control is None else initial_control
    control.check_feasible(space)
    eval_noise = noise.keyed(0, 0, Purpose.EVALUATION)

    report = DescentReport()
    started = time.perf_counter()

    def record(iteration: int, ctrl: EnsembleControl, tally: StepTally) -> IterationRecord:
        value, std_error = evaluate_cost(model, grid, ctrl, cost, cfg.n_eval, eval_noise, tally)
        rec = IterationRecord(iteration, ctrl, value, std_error, min(value, report.best_cost),
                              time.perf_counter() - started, *tally.snapshot())
        report.add(rec)
        logger.debug(f"iteration {iteration}: cost {value:.6g} +- {std_error:.2g}, "
                     f"{rec.path_segments} path segments, {rec.sde_steps} steps")
        if on_iteration is not None:
            on_iteration(rec)
        return rec

    try:
        record(0, control, StepTally())
        report.stop_reason = STOP_MAX_ITERS
        stale = 0
        for iteration in range(1, cfg.max_iters + 1):
            previous_best = report.best_cost
            tally = StepTally()
            new_control = ks_synthesize(model, grid, control, cost, cfg, noise.child(iteration), tally)
            record(iteration, new_control, tally)
            if new_control.same_as(control):
                report.stop_reason = STOP_FIXED_POINT
                break
            stale = 0 if previous_best - report.best_cost >= cfg.tolerance else stale + 1
            if stale >= cfg.patience:
                report.stop_reason = STOP_TOLERANCE if cfg.patience == 1 else STOP_PATIENCE
                break
            control = new_control
    except MinDispError as exc:
        report.wall_time = time.perf_counter() - started
        report.stop_reason = "aborted"
        logger.error(f"descent failed: {exc}")
        raise DescentAborted(report, exc) from exc

    report.wall_time = time.perf_counter() - started
    logger.info(f"descent stopped ({report.stop_reason}) after {report.n_iterations} iteration(s); "
                f"best cost {report.best_cost:.6g} at iteration {report.best_iteration}")
    return report
