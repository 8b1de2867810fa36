"""Mission executive: visit collars, align, seat the chamber, sample.

Per ring the phase order is fixed: plan, follow, acquire, align,
lower, couple, dwell, raise. Any failure downgrades to the recovery
routine (back off, re-sight, eventually re-stage and replan); a ring
that exhausts recovery is marked failed and the mission moves on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .alignment import PiGains, TcpFrame, align_until_converged
from .chassis import ChassisParams, SlipModel
from .costmap import (NoGoRegion, OccupancyCostmap, add_lethal_mask,
                      is_pose_collision_free, padded, OutOfBoundsError)
from .estimation import UkfConfig
from .follower import PathLostError, RppConfig, follow_until_done
from .geometry import Pose2D, Twist
from .lift import (LiftParams, LiftState, RAISED, SEATED, attempt_coupling,
                   lift_step)
from .planner import InvalidEndpointError, NoPathFound, PlannerConfig, plan
from .sensors import NoiseProfile
from .world import SimWorld


class StagingUnreachableError(Exception):
    """No collision-free staging candidate around the collar."""


@dataclass
class RingGoal:
    id: int
    collar_center_map: tuple[float, float]   # surveyed position, drives planning
    collar_center_truth: tuple[float, float] | None = None  # where it really is
    staging_pose: Pose2D | None = None
    sampled: bool = False

    @property
    def truth(self) -> tuple[float, float]:
        return self.collar_center_truth or self.collar_center_map


@dataclass
class MissionPlan:
    rings: list[RingGoal]
    map: OccupancyCostmap          # static no-go only; collars added per ring
    metadata: dict
    seed: int

    def __post_init__(self):
        ids = [r.id for r in self.rings]
        if len(ids) != len(set(ids)):
            raise ValueError("ring ids must be unique")
        for r in self.rings:
            x, y = r.collar_center_map
            if not self.map.contains(x, y):
                raise ValueError(f"collar {r.id} at ({x:.2f}, {y:.2f}) outside map")


@dataclass
class MissionEvent:
    t: float
    kind: str                      # phase | plan | recovery | coupling | error
    ring_id: int | None
    detail: dict

    def to_json(self) -> str:
        return json.dumps(
            {"t": round(self.t, 6), "kind": self.kind, "ring": self.ring_id,
             **self.detail},
            sort_keys=True,
        )


@dataclass
class RingMetrics:
    ring_id: int
    time_to_staging: float = math.nan
    tcp_error: float = math.nan
    sealed: bool = False
    collisions: int = 0
    recoveries: int = 0
    reached: bool = False


@dataclass
class MissionLog:
    events: list[MissionEvent] = field(default_factory=list)
    metrics: list[RingMetrics] = field(default_factory=list)
    paths: list[tuple[int, object]] = field(default_factory=list)  # (ring, PlannedPath)

    def add(self, t: float, kind: str, ring_id: int | None, **detail) -> None:
        if self.events and t < self.events[-1].t - 1e-9:
            raise ValueError("event timestamps must be monotone")
        self.events.append(MissionEvent(t, kind, ring_id, detail))

    def to_jsonl(self) -> str:
        return "\n".join(e.to_json() for e in self.events) + "\n"


@dataclass(frozen=True)
class MissionSettings:
    """Everything run_mission needs besides the plan itself."""

    start_pose: Pose2D
    profile: NoiseProfile
    chassis: ChassisParams = ChassisParams()
    ukf: UkfConfig = UkfConfig()
    planner: PlannerConfig = PlannerConfig()
    follower: RppConfig = RppConfig()
    gains: PiGains = PiGains()
    tcp: TcpFrame = TcpFrame()
    lift: LiftParams = LiftParams()
    approach_distance: float = 0.45
    collar_keepout_radius: float = 0.15
    # extra clearance for planning only; tracking error eats into this
    # pad instead of the physical margin
    plan_margin: float = 0.05
    align_tolerance: float = 0.015
    align_hold_time: float = 0.5
    align_timeout: float = 45.0
    acquire_timeout: float = 1.5
    dwell_time: float = 300.0
    follow_timeout: float = 120.0
    backoff_distance: float = 0.30
    max_recovery_attempts: int = 3
    init_spread: tuple | None = None
    slip: SlipModel | None = None


def derive_staging_pose(
    collar, cmap: OccupancyCostmap, approach_distance: float = 0.45,
    n_bearings: int = 36,
) -> Pose2D:
    """Pick the cheapest collision-free pose approach_distance away.

    The pose faces the collar, putting it in the targeting sensor's
    cone on arrival; the chamber then swings onto it with the base
    pivoting roughly in place, so only the pose itself needs clearance.
    """
    cx, cy = float(collar[0]), float(collar[1])
    best = None
    for i in range(n_bearings):
        theta = 2.0 * math.pi * i / n_bearings
        ux, uy = math.cos(theta), math.sin(theta)
        near = (cx - approach_distance * ux, cy - approach_distance * uy)
        try:
            if not is_pose_collision_free(cmap, near, cmap.robot_radius):
                continue
        except OutOfBoundsError:
            continue
        score = cmap.cost_at(*near)
        if best is None or score < best[0]:
            best = (score, Pose2D(near[0], near[1], theta))
    if best is None:
        raise StagingUnreachableError(
            f"no collision-free staging candidate around ({cx:.2f}, {cy:.2f})"
        )
    return best[1]


def _ring_costmap(plan_: MissionPlan, keepout: float, exclude: set[int],
                  truth: bool = False) -> OccupancyCostmap:
    """Base map plus keep-outs for every collar not being worked on.

    truth=False places circles at surveyed positions (what the planner
    may know); truth=True at actual positions (what collisions are
    scored against).
    """
    circles = [
        NoGoRegion.circle(r.truth if truth else r.collar_center_map,
                          keepout, kind="collar")
        for r in plan_.rings if r.id not in exclude
    ]
    return add_lethal_mask(plan_.map, circles)


def _wait_for_ring(world: SimWorld, timeout: float):
    """Advance until a fresh valid sighting of the target ring or timeout."""
    t0 = world.t
    while world.t - t0 < timeout:
        world.advance_control()
        meas = world.sense_ring()
        if meas is not None and meas.valid and meas.t >= t0:
            return meas
    return None


def _back_off(world: SimWorld, distance: float, speed: float = 0.15) -> None:
    world.set_command(Twist(-abs(speed), 0.0))
    t0 = world.t
    while (world.t - t0) * abs(speed) < distance:
        world.advance_control()
    world.set_command(Twist(0.0, 0.0))
    world.advance_control()


def _inject_vision_fix(world: SimWorld, collar, meas) -> None:
    """Re-anchor the position belief from a collar sighting.

    The collar's surveyed map position is known; the difference between
    it and the sighting mapped through the current belief is exactly the
    position error, up to sensor noise and heading error.
    """
    est = world.est_pose
    seen = est.transform_to_map(meas.ring_position_body)
    fx = est.x + (collar[0] - seen[0])
    fy = est.y + (collar[1] - seen[1])
    world.inject_position_fix((fx, fy), max(meas.position_std, 1e-4) ** 2)


class _LiftRig:
    """Lift state threaded through the mission, stepped on world time."""

    def __init__(self, params: LiftParams):
        self.params = params
        self.state = LiftState()

    def drive(self, world: SimWorld, command: str, target_phase: str,
              timeout: float = 30.0) -> None:
        dt = world.control_period
        t0 = world.t
        self.state = lift_step(self.state, command, dt, self.params)
        world.advance_control()
        while self.state.phase != target_phase:
            if world.t - t0 > timeout:
                raise RuntimeError(f"lift did not reach {target_phase}")
            self.state = lift_step(self.state, None, dt, self.params)
            world.advance_control()


def run_mission(plan_: MissionPlan, settings: MissionSettings) -> MissionLog:
    log, _ = run_mission_with_world(plan_, settings)
    return log


def run_mission_with_world(
    plan_: MissionPlan, settings: MissionSettings
) -> tuple[MissionLog, SimWorld]:
    """run_mission, also handing back the world for trajectory export."""
    log = MissionLog()
    world = SimWorld(
        start_pose=settings.start_pose,
        profile=settings.profile,
        seed=plan_.seed,
        chassis=settings.chassis,
        ukf=settings.ukf,
        rings=[r.truth for r in plan_.rings],
        slip=settings.slip,
        init_spread=settings.init_spread,
    )
    log.add(world.t, "phase", None, phase="setup")
    rig = _LiftRig(settings.lift)
    rig.drive(world, "home", RAISED)
    world.run_for(0.5)  # let the filters settle before the first plan
    log.add(world.t, "phase", None, phase="ready")

    prev_ring: int | None = None
    ring_index = {r.id: i for i, r in enumerate(plan_.rings)}
    for ring in plan_.rings:
        metrics = _sample_one_ring(world, plan_, ring, prev_ring, settings,
                                   log, rig, ring_index[ring.id])
        log.metrics.append(metrics)
        prev_ring = ring.id
    log.add(world.t, "phase", None, phase="complete",
            sealed=sum(1 for m in log.metrics if m.sealed))
    return log, world


def _sample_one_ring(world: SimWorld, plan_: MissionPlan, ring: RingGoal,
                     prev_ring: int | None, s: MissionSettings,
                     log: MissionLog, rig: _LiftRig,
                     world_index: int) -> RingMetrics:
    metrics = RingMetrics(ring_id=ring.id)
    exclude = {ring.id} if prev_ring is None else {ring.id, prev_ring}
    cmap = padded(_ring_costmap(plan_, s.collar_keepout_radius, exclude),
                  s.plan_margin)
    if any(r.collar_center_truth is not None for r in plan_.rings):
        world.active_cmap = _ring_costmap(plan_, s.collar_keepout_radius,
                                          exclude, truth=True)
    else:
        world.active_cmap = _ring_costmap(plan_, s.collar_keepout_radius,
                                          exclude)
    col0 = world.collision_events

    log.add(world.t, "phase", ring.id, phase="plan")
    try:
        staging = ring.staging_pose or derive_staging_pose(
            ring.collar_center_map, cmap, s.approach_distance)
    except StagingUnreachableError as e:
        log.add(world.t, "error", ring.id, phase="plan", reason=str(e))
        return metrics

    reached, follow_time = _navigate(world, staging, cmap, s, log, ring.id)
    metrics.time_to_staging = follow_time
    if not reached:
        # one full recovery: re-derive staging from where we are, replan
        metrics.recoveries += 1
        log.add(world.t, "recovery", ring.id, action="restage")
        try:
            staging = derive_staging_pose(ring.collar_center_map, cmap,
                                          s.approach_distance)
            reached, extra = _navigate(world, staging, cmap, s, log, ring.id)
            metrics.time_to_staging += extra
        except StagingUnreachableError as e:
            log.add(world.t, "error", ring.id, phase="plan", reason=str(e))
            reached = False
    if not reached:
        log.add(world.t, "error", ring.id, phase="follow", reason="unreached")
        metrics.collisions = world.collision_events - col0
        return metrics
    metrics.reached = True

    sealed, tcp_err, recov = _target_and_sample(world, ring, s, log, rig,
                                                world_index)
    metrics.sealed = sealed
    metrics.tcp_error = tcp_err
    metrics.recoveries += recov
    metrics.collisions = world.collision_events - col0
    ring.sampled = sealed
    return metrics


def _navigate(world: SimWorld, staging: Pose2D, cmap, s: MissionSettings,
              log: MissionLog, ring_id: int) -> tuple[bool, float]:
    try:
        path = plan(cmap, world.est_pose, staging, s.planner)
    except (NoPathFound, InvalidEndpointError) as e:
        log.add(world.t, "error", ring_id, phase="plan",
                reason=type(e).__name__)
        return False, math.nan
    log.add(world.t, "plan", ring_id, length=round(path.length, 3),
            poses=len(path.poses))
    log.paths.append((ring_id, path))
    log.add(world.t, "phase", ring_id, phase="follow")
    try:
        res = follow_until_done(world, path, s.follower, cmap,
                                timeout=s.follow_timeout)
    except PathLostError:
        log.add(world.t, "error", ring_id, phase="follow", reason="path_lost")
        return False, math.nan
    log.add(world.t, "follow", ring_id, reached=res.reached,
            time=round(res.time, 3), max_cross_track=round(res.max_cross_track, 4))
    return res.reached, res.time


def _target_and_sample(world: SimWorld, ring: RingGoal, s: MissionSettings,
                       log: MissionLog, rig: _LiftRig,
                       world_index: int) -> tuple[bool, float, int]:
    recoveries = 0
    world.set_target_ring(world_index)
    try:
        log.add(world.t, "phase", ring.id, phase="acquire")
        meas = _wait_for_ring(world, s.acquire_timeout)
        attempts = 0
        while meas is None and attempts < s.max_recovery_attempts:
            attempts += 1
            recoveries += 1
            log.add(world.t, "recovery", ring.id, action="backoff",
                    attempt=attempts)
            _back_off(world, s.backoff_distance)
            meas = _wait_for_ring(world, s.acquire_timeout)
        if meas is None:
            log.add(world.t, "error", ring.id, phase="acquire",
                    reason="ring_failed")
            return False, math.nan, recoveries

        _inject_vision_fix(world, ring.collar_center_map, meas)
        log.add(world.t, "phase", ring.id, phase="align")
        result = align_until_converged(
            world, s.gains, s.tcp, tolerance=s.align_tolerance,
            hold_time=s.align_hold_time, timeout=s.align_timeout)
        attempts = 0
        while not result.converged and attempts < s.max_recovery_attempts:
            attempts += 1
            recoveries += 1
            log.add(world.t, "recovery", ring.id, action="realign",
                    attempt=attempts)
            _back_off(world, s.backoff_distance)
            if _wait_for_ring(world, s.acquire_timeout) is None:
                continue
            result = align_until_converged(
                world, s.gains, s.tcp, tolerance=s.align_tolerance,
                hold_time=s.align_hold_time, timeout=s.align_timeout)
        if not result.converged:
            log.add(world.t, "error", ring.id, phase="align",
                    reason="ring_failed")
            return False, result.final_error, recoveries

        log.add(world.t, "phase", ring.id, phase="lower")
        rig.drive(world, "lower", SEATED)
        tcp_truth = s.tcp.tcp_in_map(world.truth_pose)
        coupling = attempt_coupling(tcp_truth, ring.truth)
        log.add(world.t, "coupling", ring.id, sealed=coupling.sealed,
                offset=round(coupling.radial_offset, 5))
        log.add(world.t, "phase", ring.id, phase="dwell")
        world.fast_forward(s.dwell_time)
        log.add(world.t, "phase", ring.id, phase="raise")
        rig.drive(world, "raise", RAISED)
        return coupling.sealed, coupling.radial_offset, recoveries
    finally:
        world.set_target_ring(None)
