"""
Plot the phase ensemble without control next to the learned one.

    python workflow/plot_paths.py results/theta_p1
"""

import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402


def load(path):
    frame = pd.read_csv(path, comment="#")
    return {particle: group for particle, group in frame.groupby("particle")}


run_dir = sys.argv[1] if len(sys.argv) > 1 else "results/theta_p1"
fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
for ax, name, title in zip(axes, ("paths_initial.csv", "paths_learned.csv"), ("u = 0", "learned control")):
    path = os.path.join(run_dir, name)
    if not os.path.exists(path):
        ax.set_title(f"{title} (missing)")
        continue
    for group in load(path).values():
        # wrap the phase to (-pi, pi] so spikes sit at 0
        phase = np.angle(np.exp(1j * group["x_0"].to_numpy()))
        ax.plot(group["time"], phase, "-", color="tab:red", alpha=0.3, linewidth=0.8)
    ax.set_title(title)
    ax.set_xlabel("t")
axes[0].set_ylabel("phase")
fig.tight_layout()
out = os.path.join(run_dir, "paths.png")
fig.savefig(out, dpi=150)
print(f"[INFO] figure saved to {out}")
