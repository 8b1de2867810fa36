"""Command-line front end.

    wetsim run --scenario indoor.yaml --out runs/indoor
    wetsim bench-localization --scenario loop.yaml --runs 20 --out runs/loc
    wetsim bench-alignment --scenario dock.yaml --runs 20 --out runs/dock
    wetsim plot --run runs/indoor --out runs/indoor/traces.svg

Exit codes: 0 completed (failed rings included), 1 configuration or
input error, 2 internal error. WETSIM_OUT sets the default output dir.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import traceback

import numpy as np

from .benchmarks import (BenchmarkReport, _aggregate, drive_loop,
                         run_alignment_benchmark, run_consistency_analysis,
                         run_localization_benchmark, single_alignment_run)
from .mission import MissionLog, run_mission_with_world
from .scenario import Scenario, ScenarioError, load_scenario

TRAJECTORY_SCHEMA = "# wetsim trajectory v1"
METRICS_SCHEMA = "# wetsim metrics v1"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))  # plain shortest round-trip, even for numpy scalars
    return str(v)


def _write_csv(path: str, schema_line: str, rows: list[dict],
               sections: list[tuple[str, list[dict]]] = ()) -> None:
    """One main table plus optional named sections, all comment-framed."""
    lines = [schema_line]
    for title, sec_rows in [("rows", rows), *sections]:
        if title != "rows":
            lines.append(f"# {title}")
        if not sec_rows:
            continue
        fields = list(sec_rows[0].keys())
        lines.append(",".join(fields))
        for r in sec_rows:
            lines.append(",".join(_fmt(r[f]) for f in fields))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trajectory_csv(path: str, world) -> None:
    rows = []
    for s in world.trajectory:
        rows.append({
            "t": s.t,
            "truth_x": s.truth.x, "truth_y": s.truth.y, "truth_psi": s.truth.psi,
            "est_x": float(s.est.mean[0]), "est_y": float(s.est.mean[1]),
            "est_psi": float(s.est.mean[2]),
            "odom_x": s.odom.x, "odom_y": s.odom.y, "odom_psi": s.odom.psi,
            "dr_x": s.dead_reckon.x, "dr_y": s.dead_reckon.y,
            "dr_psi": s.dead_reckon.psi,
        })
    _write_csv(path, TRAJECTORY_SCHEMA, rows)


def _write_report(path: str, report: BenchmarkReport) -> None:
    sections = [("aggregates", report.aggregates)]
    if report.extra:
        sections.append(("extra", [
            {"key": k, "value": report.extra[k]} for k in sorted(report.extra)
        ]))
    _write_csv(path, f"{METRICS_SCHEMA} kind={report.kind}", report.rows, sections)


def _write_mission_outputs(out_dir: str, scn: Scenario, log: MissionLog,
                           world) -> None:
    write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), world)
    with open(os.path.join(out_dir, "mission_log.jsonl"), "w",
              encoding="utf-8") as fh:
        fh.write(log.to_jsonl())
    rows = [{
        "ring_id": m.ring_id,
        "time_to_staging": m.time_to_staging,
        "tcp_error": m.tcp_error,
        "sealed": m.sealed,
        "reached": m.reached,
        "collisions": m.collisions,
        "recoveries": m.recoveries,
    } for m in log.metrics]
    report = BenchmarkReport(kind="mission", rows=rows)
    if rows:
        report.aggregates = _aggregate(
            rows, None, ["time_to_staging", "tcp_error", "collisions", "recoveries"])
        report.extra = {
            "rings": len(rows),
            "reached": sum(1 for r in rows if r["reached"]),
            "sealed": sum(1 for r in rows if r["sealed"]),
            "collision_free": sum(1 for r in rows if r["collisions"] == 0),
        }
    _write_report(os.path.join(out_dir, "metrics.csv"), report)

    cmap = scn.build_map()
    np.savez_compressed(
        os.path.join(out_dir, "costmap.npz"),
        cost=cmap.cost, origin=np.array(cmap.origin), resolution=cmap.resolution)
    ring_rows = [{"ring_id": i, "x": xy[0], "y": xy[1]}
                 for i, xy in enumerate(scn.rings)]
    _write_csv(os.path.join(out_dir, "rings.csv"), "# wetsim rings v1", ring_rows)
    path_rows = [
        {"ring_id": ring_id, "x": p.x, "y": p.y}
        for ring_id, planned in log.paths
        for p in planned.poses
    ]
    _write_csv(os.path.join(out_dir, "paths.csv"), "# wetsim paths v1", path_rows)


def _empty_log_report(kind: str) -> MissionLog:
    log = MissionLog()
    log.add(0.0, "phase", None, phase=kind)
    return log


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    if args.seed is not None:
        scn = dataclasses.replace(scn, seed=args.seed)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    if scn.mode == "mission":
        plan = scn.mission_plan()
        log, world = run_mission_with_world(plan, scn.mission_settings())
        _write_mission_outputs(out_dir, scn, log, world)
    elif scn.mode == "localization_benchmark":
        world = drive_loop(scn, scn.seed)
        write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), world)
        report = run_localization_benchmark(scn, 1)
        _write_report(os.path.join(out_dir, "metrics.csv"), report)
        log = _empty_log_report("localization_benchmark")
        with open(os.path.join(out_dir, "mission_log.jsonl"), "w",
                  encoding="utf-8") as fh:
            fh.write(log.to_jsonl())
    else:  # alignment_benchmark
        row, log, world = single_alignment_run(scn, scn.seed)
        write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), world)
        report = BenchmarkReport(kind="alignment", rows=[row])
        report.aggregates = _aggregate([row], None, ["time_to_staging", "tcp_error"])
        _write_report(os.path.join(out_dir, "metrics.csv"), report)
        with open(os.path.join(out_dir, "mission_log.jsonl"), "w",
                  encoding="utf-8") as fh:
            fh.write(log.to_jsonl())
    print(f"run complete: {out_dir}")
    return 0


def cmd_bench_localization(args) -> int:
    scn = load_scenario(args.scenario)
    _require_mode(scn, "localization_benchmark")
    runs = args.runs if args.runs is not None else int(scn.benchmark.get("runs", 20))
    os.makedirs(args.out, exist_ok=True)
    report = run_localization_benchmark(scn, runs)
    _write_report(os.path.join(args.out, "metrics.csv"), report)
    if runs > 0:
        world = drive_loop(scn, scn.seed)
        write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), world)
    if args.consistency:
        consistency = run_consistency_analysis(scn, runs if runs > 0 else 50)
        _write_report(os.path.join(args.out, "consistency.csv"), consistency)
    _print_aggregates(report)
    return 0


def cmd_bench_alignment(args) -> int:
    scn = load_scenario(args.scenario)
    _require_mode(scn, "alignment_benchmark")
    runs = args.runs if args.runs is not None else int(scn.benchmark.get("runs", 20))
    os.makedirs(args.out, exist_ok=True)
    report = run_alignment_benchmark(scn, runs)
    _write_report(os.path.join(args.out, "metrics.csv"), report)
    if runs > 0:
        _, _, world = single_alignment_run(scn, scn.seed)
        write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), world)
    _print_aggregates(report)
    return 0


def cmd_plot(args) -> int:
    from .plotting import render_run

    try:
        render_run(args.run, args.out)
    except (FileNotFoundError, ValueError) as e:
        print(f"plot: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


def _require_mode(scn: Scenario, mode: str) -> None:
    if scn.mode != mode:
        raise ScenarioError(f"{scn.name}.mode", f"expected {mode}, got {scn.mode}")


def _print_aggregates(report: BenchmarkReport) -> None:
    for row in report.aggregates:
        parts = [f"{k}={_fmt(v)}" for k, v in row.items()]
        print("  ".join(parts))
    for key in sorted(report.extra):
        val = report.extra[key]
        if isinstance(val, float) and math.isnan(val):
            continue
        print(f"{key}={_fmt(val)}")


def _default_out() -> str:
    return os.environ.get("WETSIM_OUT", "wetsim_out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wetsim",
        description="Deterministic wetland sampling-robot simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one scenario")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.set_defaults(func=cmd_run)

    bl = sub.add_parser("bench-localization", help="fusion-level comparison")
    bl.add_argument("--scenario", required=True)
    bl.add_argument("--runs", type=int, default=None)
    bl.add_argument("--out", default=None)
    bl.add_argument("--consistency", action="store_true",
                    help="also run the Monte-Carlo consistency analysis")
    bl.set_defaults(func=cmd_bench_localization)

    ba = sub.add_parser("bench-alignment", help="docking repeatability")
    ba.add_argument("--scenario", required=True)
    ba.add_argument("--runs", type=int, default=None)
    ba.add_argument("--out", default=None)
    ba.set_defaults(func=cmd_bench_alignment)

    pl = sub.add_parser("plot", help="render a run directory to an image")
    pl.add_argument("--run", required=True)
    pl.add_argument("--out", default=None)
    pl.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    if getattr(args, "out", None) is None:
        if args.command == "plot":
            args.out = os.path.join(_default_out(), "traces.svg")
        else:
            args.out = _default_out()
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
