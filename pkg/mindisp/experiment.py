"""
Experiment files and result artifacts.

An experiment file is INI-style with flat sections; every key is optional and
falls back to mindisp.config:

    [model]       name = theta | brownian | linear | frozen, plus its parameters
    [cost]        kind = spike | moment | squared_distance | trace_covariance
    [grid]        horizon, knots_per_unit_time, substeps_per_knot
    [control]     kind = penalty | box, penalty_weight, lo, hi, grid_resolution
    [descent]     n_paths, n_particles, tolerance, max_iters, n_eval, seed, patience, fd_step
    [output]      directory, plot_paths
    [diagnostics] oracle sample sizes and the pass threshold in standard errors
"""

import configparser
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from mindisp import config
from mindisp.costs import (CostFunction, MomentIndex, central_moment_cost, doubled_model, pairwise_dispersion_cost,
                           spike_cost, squared_distance_cost)
from mindisp.descent import DescentConfig, DescentReport, EnsembleControl
from mindisp.errors import ConfigError, MinDispError
from mindisp.hamiltonian import ControlSpace
from mindisp.models import (THETA_BASIS_SIZE, ThetaParams, brownian_model, controlled_linear_model, frozen_model,
                            theta_model)
from mindisp.sde_core import ModelDefinition, NoiseStream, TimeGrid

logger = logging.getLogger(__name__)

MODELS = ("theta", "brownian", "linear", "frozen")
COSTS = ("spike", "moment", "squared_distance", "trace_covariance")

CALIBRATION_NOTE = ("the initial law and the penalty weight are calibration choices; "
                    "they are not taken from a published configuration")


@dataclass(frozen=True)
class ModelSection:
    name: str = "theta"
    beta: float = config.THETA_BETA
    phase_mean: float = config.THETA_PHASE_MEAN
    phase_std: float = config.THETA_PHASE_STD
    current_mean: float = config.THETA_CURRENT_MEAN
    current_std: float = config.THETA_CURRENT_STD
    a: float = 0.0
    b: float = 1.0
    sigma: float = 0.3
    initial_state: float = 1.0
    initial_std: float = 0.0
    state_dim: int = 1


@dataclass(frozen=True)
class CostSection:
    kind: str = "spike"
    p: int = config.SPIKE_POWER
    alpha: Tuple[int, ...] = (2,)
    target: Tuple[float, ...] = (0.0,)


@dataclass(frozen=True)
class GridSection:
    horizon: float = config.HORIZON
    knots_per_unit_time: float = config.KNOTS_PER_UNIT_TIME
    substeps_per_knot: int = config.SUBSTEPS_PER_KNOT


@dataclass(frozen=True)
class ControlSection:
    kind: str = "penalty"
    penalty_weight: float = config.PENALTY_WEIGHT
    lo: Tuple[float, ...] = ()
    hi: Tuple[float, ...] = ()
    grid_resolution: int = config.GRID_RESOLUTION


@dataclass(frozen=True)
class DescentSection:
    n_paths: int = config.ADJOINT_PATHS
    n_particles: int = config.SYNTHESIS_PARTICLES
    tolerance: float = config.TOLERANCE
    max_iters: int = config.MAX_ITERS
    n_eval: int = config.EVAL_PATHS
    seed: int = config.SEED
    patience: int = config.PATIENCE
    fd_step: float = 0.0  # 0 selects the relative default step


@dataclass(frozen=True)
class OutputSection:
    directory: str = config.OUTPUT_DIR
    plot_paths: int = config.PLOT_PATHS


@dataclass(frozen=True)
class DiagnosticsSection:
    beta: float = config.THETA_BETA
    horizon: float = config.HORIZON
    n_paths: int = config.DIAGNOSE_PATHS
    duality_paths: int = 1000
    n_particles: int = config.DIAGNOSE_PARTICLES
    increment_paths: int = 200
    increment_particles: int = 200
    sigmas: float = config.DIAGNOSE_SIGMAS


_SECTIONS = {
    "model": ModelSection,
    "cost": CostSection,
    "grid": GridSection,
    "control": ControlSection,
    "descent": DescentSection,
    "output": OutputSection,
    "diagnostics": DiagnosticsSection,
}


def _convert(raw: str, default: Any, where: str):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [item.strip() for item in raw.split(",") if item.strip()]
            cast = int if default and isinstance(default[0], int) else float
            return tuple(cast(item) for item in items)
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"{where}: cannot parse {raw!r}: {e}") from e


def _read_section(parser: configparser.ConfigParser, name: str, cls):
    if not parser.has_section(name):
        return cls()
    defaults = cls()
    known = {f.name for f in fields(cls)}
    values = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}; expected one of {sorted(known)}")
        values[key] = _convert(raw, getattr(defaults, key), f"[{name}] {key}")
    return cls(**values)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    cost: CostSection = field(default_factory=CostSection)
    grid: GridSection = field(default_factory=GridSection)
    control: ControlSection = field(default_factory=ControlSection)
    descent: DescentSection = field(default_factory=DescentSection)
    output: OutputSection = field(default_factory=OutputSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    source: str = ""

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as e:
            raise ConfigError(f"{source}: {e}") from e
        unknown = set(parser.sections()) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}; expected {sorted(_SECTIONS)}")
        sections = {name: _read_section(parser, name, cls_) for name, cls_ in _SECTIONS.items()}
        return cls(**sections, source=source)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read experiment file {path}: {e}") from e
        return cls.from_text(text, source=path)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, descent=replace(cfg.descent, seed=seed))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=out))
        return cfg

    @property
    def seed(self) -> int:
        return self.descent.seed

    def theta_params(self) -> ThetaParams:
        """[model] parameters plus the [control] space, sized for the four theta feedback coefficients."""
        m = self.model
        return ThetaParams(m.beta, m.phase_mean, m.phase_std, m.current_mean, m.current_std,
                           self._section_control_space(THETA_BASIS_SIZE))

    def build_base_model(self) -> ModelDefinition:
        m = self.model
        if m.name == "theta":
            return theta_model(self.theta_params())
        if m.name == "brownian":
            return brownian_model(m.beta, m.initial_state, m.initial_std)
        if m.name == "linear":
            return controlled_linear_model(m.a, m.b, m.sigma, m.initial_state, m.initial_std)
        if m.name == "frozen":
            return frozen_model(m.state_dim, m.initial_state)
        raise ConfigError(f"[model] name must be one of {MODELS}, got {m.name!r}")

    def build_model(self) -> ModelDefinition:
        """The simulated model; the trace-covariance cost runs on the doubled state."""
        base = self.build_base_model()
        return doubled_model(base) if self.cost.kind == "trace_covariance" else base

    def build_cost(self) -> CostFunction:
        c = self.cost
        base = self.build_base_model()
        if c.kind == "spike":
            if self.model.name != "theta":
                raise ConfigError("[cost] the spike cost needs the theta model's phase coordinate")
            return spike_cost(c.p)
        if c.kind == "moment":
            if len(c.alpha) > base.state_dim:
                raise ConfigError(f"[cost] alpha has {len(c.alpha)} entries, state dimension is {base.state_dim}")
            return central_moment_cost(MomentIndex(c.alpha, c.target))
        if c.kind == "squared_distance":
            if len(c.target) > base.state_dim:
                raise ConfigError(f"[cost] target has {len(c.target)} entries, state dimension is {base.state_dim}")
            return squared_distance_cost(c.target)
        if c.kind == "trace_covariance":
            return pairwise_dispersion_cost(base.state_dim)
        raise ConfigError(f"[cost] kind must be one of {COSTS}, got {c.kind!r}")

    def build_grid(self) -> TimeGrid:
        g = self.grid
        return TimeGrid.uniform(g.horizon, g.knots_per_unit_time, g.substeps_per_knot)

    def build_control_space(self, model: ModelDefinition) -> ControlSpace:
        if self.model.name == "theta":
            return self.theta_params().control
        return self._section_control_space(model.basis_size)

    def _section_control_space(self, dim: int) -> ControlSpace:
        c = self.control
        if c.kind == "penalty":
            return ControlSpace.penalty(dim, c.penalty_weight, grid_resolution=c.grid_resolution)
        if c.kind == "box":
            lo = np.broadcast_to(c.lo, (dim,)) if len(c.lo) == 1 else c.lo
            hi = np.broadcast_to(c.hi, (dim,)) if len(c.hi) == 1 else c.hi
            return ControlSpace.box(tuple(lo), tuple(hi), grid_resolution=c.grid_resolution)
        raise ConfigError(f"[control] kind must be 'penalty' or 'box', got {c.kind!r}")

    def build_descent_config(self, model: ModelDefinition, threads: int = 1,
                             show_progress: bool = False) -> DescentConfig:
        d = self.descent
        return DescentConfig(
            n_paths=d.n_paths, n_particles=d.n_particles, tolerance=d.tolerance, max_iters=d.max_iters,
            n_eval=d.n_eval, seed=d.seed, patience=d.patience, fd_step=d.fd_step or None, threads=threads,
            control_space=self.build_control_space(model), show_progress=show_progress,
        )

    def validate(self) -> "ExperimentConfig":
        """Builds every object once so that all preconditions are checked before any simulation."""
        try:
            model = self.build_model()
            self.build_cost()
            self.build_grid()
            self.build_descent_config(model)
            NoiseStream(self.seed)
            if self.output.plot_paths < 1:
                raise ConfigError("[output] plot_paths must be at least 1")
            dg = self.diagnostics
            if min(dg.n_paths, dg.duality_paths, dg.n_particles, dg.increment_paths, dg.increment_particles) < 2:
                raise ConfigError("[diagnostics] sample sizes must be at least 2")
            if dg.sigmas < 0 or dg.beta < 0 or dg.horizon <= 0:
                raise ConfigError("[diagnostics] sigmas and beta must be non-negative, horizon positive")
        except ConfigError:
            raise
        except (MinDispError, ValueError) as e:
            raise ConfigError(f"{self.source}: {e}") from e
        return self

    def echo(self) -> Dict[str, Any]:
        """Resolved parameters, JSON-ready. The output directory is left out so artifacts do not depend on it."""
        echo = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        del echo["output"]["directory"]
        return echo


def _header(cfg: ExperimentConfig) -> str:
    return (f"# mindisp experiment seed={cfg.seed}\n"
            f"# config={json.dumps(cfg.echo(), sort_keys=True)}\n")


def _write_csv(path: str, cfg: ExperimentConfig, frame: pd.DataFrame):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(_header(cfg))
        frame.to_csv(f, index=False, float_format=config.CSV_FLOAT_FORMAT, lineterminator="\n")


def control_frame(control: EnsembleControl) -> pd.DataFrame:
    frame = pd.DataFrame(control.coeffs, columns=[f"u_{j + 1}" for j in range(control.basis_size)])
    frame.insert(0, "knot_time", control.grid.knot_times[:-1])
    return frame


def cost_trace_frame(report: DescentReport) -> pd.DataFrame:
    return pd.DataFrame({
        "iteration": [r.iteration for r in report.iterations],
        "cost": [r.cost for r in report.iterations],
        "std_error": [r.std_error for r in report.iterations],
        "best_cost": [r.best_cost for r in report.iterations],
        "path_segments": [r.path_segments for r in report.iterations],
        "sde_steps": [r.sde_steps for r in report.iterations],
    })


def paths_frame(times: np.ndarray, paths: np.ndarray) -> pd.DataFrame:
    """Long format: one row per (particle, time) with every state coordinate."""
    n_paths, n_times, n = paths.shape
    frame = pd.DataFrame(paths.reshape(-1, n), columns=[f"x_{i}" for i in range(n)])
    frame.insert(0, "particle", np.repeat(np.arange(n_paths), n_times))
    frame.insert(0, "time", np.tile(times, n_paths))
    return frame


def report_dict(cfg: ExperimentConfig, report: DescentReport) -> Dict[str, Any]:
    return {
        "seed": cfg.seed,
        "config": cfg.echo(),
        "note": CALIBRATION_NOTE,
        "stop_reason": report.stop_reason,
        "n_iterations": report.n_iterations,
        "best_iteration": report.best_iteration,
        "best_cost": report.best_cost,
        "best_std_error": report.best_std_error,
        "best_control": None if report.best_control is None else report.best_control.coeffs.tolist(),
        "iterations": [
            {
                "iteration": r.iteration,
                "cost": r.cost,
                "std_error": r.std_error,
                "best_cost": r.best_cost,
                "path_segments": r.path_segments,
                "sde_steps": r.sde_steps,
                "control": r.control.coeffs.tolist(),
            }
            for r in report.iterations
        ],
    }


def timing_dict(report: DescentReport) -> Dict[str, Any]:
    return {
        "wall_time": report.wall_time,
        "elapsed": [r.elapsed for r in report.iterations],
    }


def write_json(path: str, payload: Dict[str, Any]):
    with open(path, "w", encoding="utf-8") as f:
        # repr-exact floats: json writes the shortest round-tripping form
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_run_artifacts(out_dir: str, cfg: ExperimentConfig, report: DescentReport,
                        paths_initial: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                        paths_learned: Optional[Tuple[np.ndarray, np.ndarray]] = None):
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "cost_trace.csv"), cfg, cost_trace_frame(report))
    if report.best_control is not None:
        _write_csv(os.path.join(out_dir, "control.csv"), cfg, control_frame(report.best_control))
    if paths_initial is not None:
        _write_csv(os.path.join(out_dir, "paths_initial.csv"), cfg, paths_frame(*paths_initial))
    if paths_learned is not None:
        _write_csv(os.path.join(out_dir, "paths_learned.csv"), cfg, paths_frame(*paths_learned))
    write_json(os.path.join(out_dir, "report.json"), report_dict(cfg, report))
    write_json(os.path.join(out_dir, "timing.json"), timing_dict(report))
    logger.info(f"artifacts written to {out_dir}")
