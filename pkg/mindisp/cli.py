"""
Command-line entry point.

    python -m mindisp run configs/theta_p1.ini --seed 7 --threads 0 --out results/theta_p1
    python -m mindisp diagnose configs/diagnose.ini

Exit status: 0 on success, 2 for an invalid experiment file, 1 for any other
failure (including a failed diagnostic).
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from mindisp import config
from mindisp.descent import DescentAborted, EnsembleControl, IterationRecord, run_descent
from mindisp.diagnostics import CheckResult, run_diagnostics
from mindisp.errors import ConfigError, MinDispError
from mindisp.experiment import ExperimentConfig, write_json, write_run_artifacts
from mindisp.sde_core import NoiseStream, Purpose, simulate_paths

logger = logging.getLogger("mindisp")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def setup_logging(level: str = config.LOG_LEVEL):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
    root = logging.getLogger("mindisp")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mindisp",
                                     description="Minimum-dispersion control of SDE ensembles by particle descent.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run the descent and write result artifacts"),
                       ("diagnose", "run the oracle checks and write diagnostics.json")):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("config", help="INI experiment file")
        cmd.add_argument("--seed", type=int, default=None, help="override [descent] seed")
        cmd.add_argument("--threads", type=int, default=1, help="worker threads, 0 = one per CPU")
        cmd.add_argument("--out", default=None, help="override [output] directory")
        cmd.add_argument("--dry-run", action="store_true", help="validate the experiment file and exit")
        cmd.add_argument("--log-level", default=config.LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR")
        cmd.add_argument("--progress", action="store_true", help="show a progress bar over the knots")
    return parser


def print_progress(rec: IterationRecord):
    print(f"PROGRESS iteration={rec.iteration} cost={rec.cost:.17g} std_error={rec.std_error:.17g} "
          f"best={rec.best_cost:.17g} elapsed={rec.elapsed:.3f}", file=sys.stderr, flush=True)


def _plot_bundles(cfg: ExperimentConfig, model, grid, best: Optional[EnsembleControl]):
    # both bundles share initial draws and increments
    noise = NoiseStream(cfg.seed).child(Purpose.PLOT)
    initial = EnsembleControl.zeros(grid, model.basis_size)
    bundles = [(grid.times, simulate_paths(model, grid, initial, cfg.output.plot_paths, noise))]
    if best is not None:
        bundles.append((grid.times, simulate_paths(model, grid, best, cfg.output.plot_paths, noise)))
    else:
        bundles.append(None)
    return bundles


def command_run(cfg: ExperimentConfig, threads: int, show_progress: bool) -> int:
    model, cost, grid = cfg.build_model(), cfg.build_cost(), cfg.build_grid()
    descent_cfg = cfg.build_descent_config(model, threads, show_progress)
    out_dir = cfg.output.directory
    logger.info(f"model {model.name}, cost {cost.name}, {grid.n_intervals} knots x {grid.substeps_per_knot} "
                f"substeps on [0, {grid.horizon:g}], N={descent_cfg.n_paths}, M={descent_cfg.n_particles}")
    try:
        report = run_descent(model, grid, cost, descent_cfg, on_iteration=print_progress)
    except DescentAborted as e:
        logger.error(f"writing partial report to {out_dir}")
        write_run_artifacts(out_dir, cfg, e.report)
        return EXIT_FAILURE
    initial, learned = _plot_bundles(cfg, model, grid, report.best_control)
    write_run_artifacts(out_dir, cfg, report, initial, learned)
    return EXIT_OK


def command_diagnose(cfg: ExperimentConfig, threads: int = 1) -> int:
    results: List[CheckResult] = run_diagnostics(cfg.diagnostics, cfg.grid, cfg.seed, threads)
    passed = all(r.passed for r in results)
    out_dir = cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "diagnostics.json"), {
        "seed": cfg.seed,
        "config": cfg.echo(),
        "passed": passed,
        "checks": [r.as_dict() for r in results],
    })
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        return EXIT_FAILURE
    logger.info(f"all {len(results)} checks passed")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        if args.threads < 0:
            raise ConfigError(f"--threads must be non-negative, got {args.threads}")
        cfg = ExperimentConfig.from_file(args.config).with_overrides(args.seed, args.out).validate()
        if args.dry_run:
            print(json.dumps(cfg.echo(), indent=2, sort_keys=True))
            logger.info(f"{args.config}: experiment file is valid, nothing written")
            return EXIT_OK
        if args.command == "run":
            return command_run(cfg, args.threads, args.progress)
        return command_diagnose(cfg, args.threads)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except (MinDispError, OSError) as e:
        logger.error(str(e))
        return EXIT_FAILURE
