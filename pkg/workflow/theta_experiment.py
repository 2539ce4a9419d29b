import os
import pandas as pd
import time
import sys

# Add the repo root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from mindisp.cli import setup_logging
from mindisp.descent import DescentAborted, run_descent
from mindisp.experiment import ExperimentConfig, write_run_artifacts

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
OUTPUT_PATH = "results/theta_sweep.csv"
CONFIGS = {1: "theta_p1.ini", 2: "theta_p2.ini"}
SEEDS = [1, 2, 3, 4, 5]
THREADS = 0  # one per CPU

setup_logging("INFO")

# Load old results if exists
if os.path.exists(OUTPUT_PATH):
    old_df = pd.read_csv(OUTPUT_PATH)
    results = old_df.to_dict('records')
    done = {(r['p'], r['seed']) for r in results}
else:
    results = []
    done = set()

for p, config_name in CONFIGS.items():
    for seed in SEEDS:
        if (p, seed) in done:
            continue

        print(f"\n--- p={p}, seed={seed} ---")
        start_time = time.time()

        out_dir = os.path.join("results", f"theta_p{p}", f"seed_{seed}")
        cfg = ExperimentConfig.from_file(os.path.join(CONFIG_DIR, config_name))
        cfg = cfg.with_overrides(seed=seed, out=out_dir).validate()
        model = cfg.build_model()

        try:
            report = run_descent(model, cfg.build_grid(), cfg.build_cost(), cfg.build_descent_config(model, THREADS))
        except DescentAborted as e:
            print(f"[ERROR] {e}")
            report = e.report
        write_run_artifacts(out_dir, cfg, report)

        results.append({
            'p': p,
            'seed': seed,
            'baseline_cost': report.costs[0] if report.iterations else None,
            'best_cost': report.best_cost,
            'best_std_error': report.best_std_error,
            'best_iteration': report.best_iteration,
            'n_iterations': report.n_iterations,
            'stop_reason': report.stop_reason,
            'sde_steps': sum(r.sde_steps for r in report.iterations),
        })

        # Save results after every run
        os.makedirs(os.path.dirname(OUTPUT_PATH), exist_ok=True)
        pd.DataFrame(results).to_csv(OUTPUT_PATH, index=False)
        print(f"Results saved to {OUTPUT_PATH}")

        elapsed_time = time.time() - start_time
        print(f"Time taken for p={p}, seed={seed}: {elapsed_time/60:.3f} minutes")

summary = pd.DataFrame(results).groupby('p').agg(
    baseline=('baseline_cost', 'mean'),
    best=('best_cost', 'mean'),
    best_below_025=('best_cost', lambda c: int((c < 0.25).sum())),
)
print(summary.to_string())
