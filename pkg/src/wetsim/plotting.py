"""Static plots of run artifacts (trajectories, costmap, planned paths)."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def read_csv_rows(path: str) -> list[dict]:
    """CSV rows as dicts, skipping `#` comment lines. Values stay strings."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no data rows")
    reader = csv.DictReader(lines)
    rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def _columns(rows: list[dict], names: list[str]) -> np.ndarray:
    return np.array([[float(r[n]) for n in names] for r in rows])


_TRACES = (
    ("truth", ("truth_x", "truth_y"), dict(color="black", lw=1.6)),
    ("position filter", ("est_x", "est_y"), dict(color="tab:blue", lw=1.1)),
    ("velocity filter", ("odom_x", "odom_y"), dict(color="tab:orange", lw=1.1)),
    ("kinematics only", ("dr_x", "dr_y"), dict(color="tab:green", lw=1.1, ls="--")),
)


def render_run(run_dir: str, out_path: str) -> None:
    """Overlay all recorded pose traces, plus map and paths when present."""
    traj_path = os.path.join(run_dir, "trajectory.csv")
    if not os.path.exists(traj_path):
        raise FileNotFoundError(traj_path)
    rows = read_csv_rows(traj_path)

    fig, ax = plt.subplots(figsize=(7.0, 7.0))
    grid_path = os.path.join(run_dir, "costmap.npz")
    if os.path.exists(grid_path):
        data = np.load(grid_path)
        cost, origin, res = data["cost"], data["origin"], float(data["resolution"])
        h, w = cost.shape
        extent = (origin[0], origin[0] + w * res, origin[1], origin[1] + h * res)
        ax.imshow(cost, extent=extent, origin="lower", cmap="Greys",
                  vmin=0, vmax=255, alpha=0.55, zorder=0)

    paths_path = os.path.join(run_dir, "paths.csv")
    if os.path.exists(paths_path):
        try:
            prows = read_csv_rows(paths_path)
        except ValueError:
            prows = []
        if prows:
            arr = _columns(prows, ["ring_id", "x", "y"])
            for rid in np.unique(arr[:, 0]):
                seg = arr[arr[:, 0] == rid]
                ax.plot(seg[:, 1], seg[:, 2], color="magenta", lw=0.9,
                        alpha=0.8, zorder=2,
                        label="planned path" if rid == arr[0, 0] else None)

    rings_path = os.path.join(run_dir, "rings.csv")
    if os.path.exists(rings_path):
        try:
            rrows = read_csv_rows(rings_path)
        except ValueError:
            rrows = []
        if rrows:
            arr = _columns(rrows, ["ring_id", "x", "y"])
            ax.scatter(arr[:, 1], arr[:, 2], s=90, facecolors="none",
                       edgecolors="crimson", zorder=4, label="collars")
            for rid, x, y in arr:
                ax.annotate(str(int(rid)), (x, y), fontsize=7,
                            ha="center", va="center", color="crimson")

    for label, (cx, cy), style in _TRACES:
        xy = _columns(rows, [cx, cy])
        ax.plot(xy[:, 0], xy[:, 1], label=label, zorder=3, **style)
    start = _columns(rows[:1], ["truth_x", "truth_y"])[0]
    ax.plot(start[0], start[1], marker="o", color="black", ms=6, zorder=5)

    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(os.path.basename(os.path.normpath(run_dir)))
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
