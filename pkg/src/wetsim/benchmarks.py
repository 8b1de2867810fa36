"""Benchmark harnesses: localization accuracy, filter consistency,
alignment repeatability.

Each produces a report of per-run rows plus aggregates recomputable
from those rows; the CLI turns reports into CSV files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import noise
from .geometry import Twist, angle_diff
from .mission import (MissionLog, MissionPlan, MissionSettings, RingGoal,
                      run_mission_with_world)
from .scenario import Scenario
from .world import SimWorld

_STREAM_BENCH = noise.stream_id("bench")


@dataclass
class BenchmarkReport:
    kind: str
    rows: list[dict] = field(default_factory=list)
    aggregates: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _aggregate(rows: list[dict], group_key: str | None, metrics: list[str]) -> list[dict]:
    """mean/std/min/max per metric, optionally per group value.

    std is the population standard deviation (ddof=0); aggregates are
    exactly recomputable from the row values.
    """
    out = []
    groups = sorted({r[group_key] for r in rows}) if group_key else [None]
    for g in groups:
        sel = [r for r in rows if group_key is None or r[group_key] == g]
        for metric in metrics:
            vals = np.array([float(r[metric]) for r in sel])
            vals = vals[np.isfinite(vals)]  # failed rings carry NaN fields
            if vals.size == 0:
                continue
            row = {
                "metric": metric,
                "mean": float(vals.mean()),
                "std": float(vals.std()),
                "min": float(vals.min()),
                "max": float(vals.max()),
            }
            if group_key:
                row = {group_key: g, **row}
            out.append(row)
    return out


def _loop_params(scn: Scenario) -> tuple[float, float, float]:
    length = float(scn.benchmark.get("loop_length", 7.0))
    speed = float(scn.benchmark.get("loop_speed", 0.5))
    radius = length / (2.0 * math.pi)
    duration = length / speed
    return speed, speed / radius, duration


def make_world(scn: Scenario, seed: int, init_spread=None) -> SimWorld:
    return SimWorld(
        start_pose=scn.start_pose,
        profile=scn.profile,
        seed=seed,
        chassis=scn.chassis,
        ukf=scn.ukf,
        rings=list(scn.rings),
        init_spread=init_spread,
    )


def drive_loop(scn: Scenario, seed: int, init_spread=None) -> SimWorld:
    """One closed-loop constant-twist transit of the benchmark circle.

    The command ramps up over ramp_time instead of stepping; a step
    would demand infinite acceleration and spends the first second
    fighting the innovation gate.
    """
    v, w, duration = _loop_params(scn)
    world = make_world(scn, seed, init_spread=init_spread)
    settle = float(scn.benchmark.get("settle_time", 0.0))
    if settle > 0:
        world.run_for(settle)
    ramp = float(scn.benchmark.get("ramp_time", 1.0))
    steps = max(1, int(round(ramp / world.control_period)))
    if ramp > 0:
        for k in range(1, steps + 1):
            f = k / steps
            world.set_command(Twist(v * f, w * f))
            world.advance_control()
    world.set_command(Twist(v, w))
    world.run_for(duration)
    world.set_command(Twist(0.0, 0.0))
    return world


def _trajectory_errors(world: SimWorld) -> dict[str, np.ndarray]:
    truth = np.array([[s.truth.x, s.truth.y, s.truth.psi] for s in world.trajectory])
    out = {}
    for method, arr in (
        ("position_filter",
         np.array([[s.est.mean[0], s.est.mean[1], s.est.mean[2]]
                   for s in world.trajectory])),
        ("velocity_filter",
         np.array([[s.odom.x, s.odom.y, s.odom.psi] for s in world.trajectory])),
        ("kinematics_only",
         np.array([[s.dead_reckon.x, s.dead_reckon.y, s.dead_reckon.psi]
                   for s in world.trajectory])),
    ):
        pos = np.hypot(arr[:, 0] - truth[:, 0], arr[:, 1] - truth[:, 1])
        head = np.abs([angle_diff(a, b) for a, b in zip(arr[:, 2], truth[:, 2])])
        out[method] = np.column_stack([pos, head])
    return out


_METHOD_ORDER = ("kinematics_only", "velocity_filter", "position_filter")


def run_localization_benchmark(scn: Scenario, n_runs: int) -> BenchmarkReport:
    report = BenchmarkReport(kind="localization")
    for i in range(n_runs):
        seed = scn.seed + i
        world = drive_loop(scn, seed)
        errs = _trajectory_errors(world)
        for method in _METHOD_ORDER:
            e = errs[method]
            report.rows.append({
                "seed": seed,
                "method": method,
                "mean_pos_err": float(e[:, 0].mean()),
                "final_pos_err": float(e[-1, 0]),
                "max_pos_err": float(e[:, 0].max()),
                "mean_heading_err": float(e[:, 1].mean()),
            })
    report.aggregates = _aggregate(
        report.rows, "method",
        ["mean_pos_err", "final_pos_err", "max_pos_err", "mean_heading_err"])
    return report


def run_consistency_analysis(scn: Scenario, n_runs: int = 50) -> BenchmarkReport:
    """Normalized squared error of the position estimate, averaged
    across Monte-Carlo runs with sampled initial conditions.

    The per-timestep run average is compared against the 95% chi-square
    envelope for the 2D position block.
    """
    spread = tuple(scn.benchmark.get("init_spread", (0.05, 0.05, 0.05)))
    per_run = []
    for i in range(n_runs):
        world = drive_loop(scn, scn.seed + i, init_spread=spread)
        vals = []
        for s in world.trajectory:
            e = np.array([s.est.mean[0] - s.truth.x, s.est.mean[1] - s.truth.y])
            p = s.est.cov[:2, :2]
            vals.append(float(e @ np.linalg.solve(p, e)))
        per_run.append(vals)
    n_steps = min(len(v) for v in per_run)
    nees = np.array([v[:n_steps] for v in per_run])  # runs x steps
    avg = nees.mean(axis=0)
    dof = 2 * n_runs
    lo = stats.chi2.ppf(0.025, dof) / n_runs
    hi = stats.chi2.ppf(0.975, dof) / n_runs
    inside = (avg >= lo) & (avg <= hi)
    report = BenchmarkReport(kind="consistency")
    report.rows = [
        {"step": int(k), "avg_nees": float(avg[k]), "inside": bool(inside[k])}
        for k in range(n_steps)
    ]
    report.extra = {
        "runs": n_runs,
        "envelope_lo": float(lo),
        "envelope_hi": float(hi),
        "fraction_inside": float(inside.mean()),
    }
    report.aggregates = _aggregate(report.rows, None, ["avg_nees"])
    return report


def run_alignment_benchmark(scn: Scenario, n_runs: int) -> BenchmarkReport:
    """Repeated staging -> alignment -> coupling cycles on one collar.

    Each run is a fresh single-ring mission with a survey error drawn
    per seed, so the staging pose lands off the ideal spot and the
    vision stage has to absorb the difference.
    """
    if not scn.rings:
        raise ValueError("alignment benchmark needs one ring in the scenario")
    report = BenchmarkReport(kind="alignment")
    for i in range(n_runs):
        row, _, _ = single_alignment_run(scn, scn.seed + i)
        report.rows.append(row)
    errs = np.array([r["tcp_error"] for r in report.rows if r["reached"]])
    report.extra = {
        "sealed_rate": float(np.mean([r["sealed"] for r in report.rows])),
        "median_tcp_error": float(np.median(errs)) if errs.size else math.nan,
        "repeatability_std": float(errs.std()) if errs.size else math.nan,
    }
    report.aggregates = _aggregate(
        report.rows, None, ["time_to_staging", "tcp_error", "recoveries"])
    return report


def single_alignment_run(scn: Scenario, seed: int) -> tuple[dict, MissionLog, SimWorld]:
    """One staging -> alignment -> coupling cycle on the scenario's collar.

    The collar position handed to the planner carries a survey error
    drawn from benchmark.staging_jitter, while the world keeps the true
    one; the sighting stage has to absorb the difference.
    """
    collar = scn.rings[0]
    jitter = float(scn.benchmark.get("staging_jitter", 0.0))
    dx = jitter * noise.normal(seed, _STREAM_BENCH, 0, channel=0)
    dy = jitter * noise.normal(seed, _STREAM_BENCH, 0, channel=1)
    ring = RingGoal(0, (collar[0] + dx, collar[1] + dy),
                    collar_center_truth=collar)
    plan = MissionPlan(rings=[ring], map=scn.build_map(),
                       metadata={"name": scn.name}, seed=seed)
    log, world = run_mission_with_world(plan, _mission_settings_for_bench(scn))
    m = log.metrics[0]
    row = {
        "seed": seed,
        "time_to_staging": float(m.time_to_staging),
        "tcp_error": float(m.tcp_error),
        "sealed": bool(m.sealed),
        "reached": bool(m.reached),
        "recoveries": int(m.recoveries),
    }
    return row, log, world


def _mission_settings_for_bench(scn: Scenario) -> MissionSettings:
    # no dwell, and slip left to the per-run world seed
    return replace(scn.mission_settings(), dwell_time=0.0, slip=None)
