"""Regulated pure-pursuit path tracking with rotate-to-heading.

Geometric steering toward a lookahead point, with the commanded speed
scaled down on tight path curvature and near inflated obstacles. When
the heading error to the local path tangent grows past a threshold the
follower stops and spins in place until nearly realigned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chassis import ChassisParams, clamp_twist
from .costmap import INSCRIBED, OccupancyCostmap
from .geometry import Pose2D, Twist, wrap_angle
from .planner import PlannedPath

TRACK = "track"
ROTATE = "rotate_to_heading"
GOAL = "goal_reached"


class PathLostError(RuntimeError):
    """Robot strayed beyond the recovery distance from the path."""


@dataclass(frozen=True)
class RppConfig:
    lookahead_time: float = 1.5
    desired_speed: float = 0.20
    min_lookahead: float = 0.6
    max_lookahead: float = 1.2
    rotate_to_heading_threshold: float = math.radians(45.0)
    rotate_exit_threshold: float = math.radians(10.0)
    rotate_angular_speed: float = 0.5
    regulation_curvature_radius: float = 0.5
    obstacle_slowdown_band: float = 0.5  # meters of clearance beyond the footprint
    obstacle_cost_threshold: int = 1
    min_speed: float = 0.05
    goal_tolerance_xy: float = 0.05
    goal_tolerance_psi: float = math.radians(15.0)
    path_lost_distance: float = 1.5

    def __post_init__(self) -> None:
        if self.min_lookahead > self.max_lookahead:
            raise ValueError("min_lookahead must not exceed max_lookahead")
        if min(self.desired_speed, self.rotate_angular_speed, self.lookahead_time,
               self.rotate_to_heading_threshold) <= 0.0:
            raise ValueError("speeds, lookahead time and thresholds must be positive")
        if not 0.0 <= self.min_speed <= self.desired_speed:
            raise ValueError("min_speed must lie in [0, desired_speed]")

    @property
    def lookahead_distance(self) -> float:
        """Effective lookahead: speed*time clamped into [min, max]."""
        return min(max(self.desired_speed * self.lookahead_time, self.min_lookahead),
                   self.max_lookahead)


@dataclass(frozen=True)
class FollowCommand:
    twist: Twist
    mode: str
    lookahead_point: Pose2D

    def __post_init__(self) -> None:
        if self.mode == ROTATE and self.twist.v_x != 0.0:
            raise ValueError("rotate mode must not translate")


@dataclass(frozen=True)
class FollowResult:
    time: float
    max_cross_track: float
    collided: bool
    reached: bool
    timed_out: bool = False


class _PathGeometry:
    """Arc-length table, tangents and local curvature of a dense path."""

    def __init__(self, path: PlannedPath):
        self.path = path
        pts = np.array([(p.x, p.y) for p in path.poses])
        self.pts = pts
        if len(pts) > 1:
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            self.s = np.concatenate([[0.0], np.cumsum(seg)])
        else:
            self.s = np.zeros(1)
        psi = np.array([p.psi for p in path.poses])
        if len(pts) > 1:
            dpsi = np.abs(np.array([wrap_angle(b - a) for a, b in zip(psi[:-1], psi[1:])]))
            ds = np.maximum(np.diff(self.s), 1e-9)
            kappa = dpsi / ds
            self.kappa = np.concatenate([kappa, [kappa[-1]]])
        else:
            self.kappa = np.zeros(1)

    def closest_index(self, x: float, y: float, start: int = 0, window: int | None = None) -> int:
        end = len(self.pts) if window is None else min(len(self.pts), start + window)
        seg = self.pts[start:end]
        d2 = (seg[:, 0] - x) ** 2 + (seg[:, 1] - y) ** 2
        return start + int(np.argmin(d2))

    def point_at_arclength(self, s_query: float) -> tuple[float, float, int]:
        s_query = min(max(s_query, 0.0), self.s[-1])
        i = int(np.searchsorted(self.s, s_query, side="right")) - 1
        i = min(max(i, 0), len(self.pts) - 2) if len(self.pts) > 1 else 0
        if len(self.pts) == 1:
            return float(self.pts[0, 0]), float(self.pts[0, 1]), 0
        span = self.s[i + 1] - self.s[i]
        frac = 0.0 if span <= 0 else (s_query - self.s[i]) / span
        p = self.pts[i] + frac * (self.pts[i + 1] - self.pts[i])
        return float(p[0]), float(p[1]), i


def _command_at(pose: Pose2D, geom: _PathGeometry, cmap: OccupancyCostmap | None,
                cfg: RppConfig, prev_mode: str | None, closest: int) -> FollowCommand:
    path = geom.path
    goal_pose = path.poses[-1]
    dist_goal = math.hypot(goal_pose.x - pose.x, goal_pose.y - pose.y)
    if dist_goal <= cfg.goal_tolerance_xy:
        err_goal = wrap_angle(goal_pose.psi - pose.psi)
        if abs(err_goal) <= cfg.goal_tolerance_psi:
            return FollowCommand(Twist(0.0, 0.0), GOAL, goal_pose)
        return FollowCommand(
            Twist(0.0, math.copysign(cfg.rotate_angular_speed, err_goal)), ROTATE, goal_pose
        )

    cx, cy = geom.pts[closest]
    if math.hypot(cx - pose.x, cy - pose.y) > cfg.path_lost_distance:
        raise PathLostError("pose too far from path to keep tracking")

    direction = path.directions[closest]
    remaining = geom.s[-1] - geom.s[closest]
    if remaining <= cfg.min_lookahead and dist_goal <= cfg.min_lookahead:
        # endgame: chase the goal point itself. Tracking the tangent
        # here fights the pursuit turn and the robot orbits the goal
        # instead of landing on it.
        direction = path.directions[-1]
        eff_psi = pose.psi if direction > 0 else wrap_angle(pose.psi + math.pi)
        bearing = wrap_angle(
            math.atan2(goal_pose.y - pose.y, goal_pose.x - pose.x) - eff_psi
        )
        threshold = (cfg.rotate_exit_threshold if prev_mode == ROTATE
                     else cfg.rotate_to_heading_threshold)
        if abs(bearing) >= threshold:
            return FollowCommand(
                Twist(0.0, math.copysign(cfg.rotate_angular_speed, bearing)),
                ROTATE, goal_pose,
            )
        speed = min(cfg.desired_speed, max(cfg.min_speed, 0.8 * dist_goal))
        kappa = 2.0 * math.sin(bearing) / max(dist_goal, 1e-9)
        v = direction * speed
        return FollowCommand(Twist(v, speed * kappa), TRACK, goal_pose)
    tangent_psi = path.poses[closest].psi
    heading_err = wrap_angle(tangent_psi - pose.psi)
    threshold = (cfg.rotate_exit_threshold if prev_mode == ROTATE
                 else cfg.rotate_to_heading_threshold)
    look_x, look_y, look_i = geom.point_at_arclength(
        geom.s[closest] + cfg.lookahead_distance
    )
    look_pose = Pose2D(look_x, look_y, path.poses[min(look_i, len(path.poses) - 1)].psi)
    if abs(heading_err) >= threshold:
        return FollowCommand(
            Twist(0.0, math.copysign(cfg.rotate_angular_speed, heading_err)), ROTATE, look_pose
        )

    # pure-pursuit curvature from the chord to the lookahead point
    dx = look_x - pose.x
    dy = look_y - pose.y
    chord = math.hypot(dx, dy)
    speed = cfg.desired_speed
    kappa_path = float(geom.kappa[min(look_i, len(geom.kappa) - 1)])
    if kappa_path > 1e-9:
        r_path = 1.0 / kappa_path
        speed *= min(1.0, r_path / cfg.regulation_curvature_radius)
    if cmap is not None:
        cell_cost = cmap.cost_at(pose.x, pose.y)
        if cell_cost >= cfg.obstacle_cost_threshold:
            speed *= max(0.0, 1.0 - cell_cost / (INSCRIBED - 1.0))
    speed = min(cfg.desired_speed, max(cfg.min_speed, speed))
    if chord < 1e-9:
        return FollowCommand(Twist(direction * speed, 0.0), TRACK, look_pose)
    y_l = -math.sin(pose.psi) * dx + math.cos(pose.psi) * dy
    kappa = 2.0 * y_l / (chord * chord)
    v = direction * speed
    return FollowCommand(Twist(v, v * kappa), TRACK, look_pose)


def compute_command(pose: Pose2D, path: PlannedPath, cmap: OccupancyCostmap | None,
                    cfg: RppConfig = RppConfig(), prev_mode: str | None = None) -> FollowCommand:
    """Single stateless follower step (full closest-point search)."""
    if not path.poses:
        raise ValueError("path is empty")
    geom = _PathGeometry(path)
    closest = geom.closest_index(pose.x, pose.y)
    return _command_at(pose, geom, cmap, cfg, prev_mode, closest)


class PathTracker:
    """Stateful wrapper: monotone progress hint plus mode hysteresis."""

    _WINDOW = 120  # samples (~3 m of densified path), bounds per-step search

    def __init__(self, path: PlannedPath, cfg: RppConfig = RppConfig(),
                 cmap: OccupancyCostmap | None = None,
                 chassis: ChassisParams | None = None):
        if not path.poses:
            raise ValueError("path is empty")
        self.geom = _PathGeometry(path)
        self.cfg = cfg
        self.cmap = cmap
        self.chassis = chassis
        self.prev_mode: str | None = None
        self._hint = 0

    def step(self, pose: Pose2D) -> FollowCommand:
        closest = self.geom.closest_index(pose.x, pose.y, self._hint, self._WINDOW)
        self._hint = max(self._hint, closest - 2)
        cmd = _command_at(pose, self.geom, self.cmap, self.cfg, self.prev_mode, closest)
        self.prev_mode = cmd.mode
        if self.chassis is not None and cmd.mode == TRACK:
            cmd = FollowCommand(clamp_twist(cmd.twist, self.chassis), cmd.mode,
                                cmd.lookahead_point)
        return cmd

    def cross_track(self, pose: Pose2D) -> float:
        closest = self.geom.closest_index(pose.x, pose.y, max(0, self._hint - 40),
                                          self._WINDOW + 80)
        cx, cy = self.geom.pts[closest]
        return math.hypot(cx - pose.x, cy - pose.y)


def follow_until_done(world, path: PlannedPath, cfg: RppConfig = RppConfig(),
                      cmap: OccupancyCostmap | None = None,
                      timeout: float = 300.0) -> FollowResult:
    """Closed-loop rollout at the control rate until the goal or timeout.

    The world object supplies est_pose/truth_pose, accepts commands via
    set_command and advances one control period per advance_control().
    Cross-track and collisions are judged against ground truth.
    """
    tracker = PathTracker(path, cfg, cmap, getattr(world, "chassis_params", None))
    t0 = world.t
    max_xt = 0.0
    collided = False
    reached = False
    while world.t - t0 < timeout:
        cmd = tracker.step(world.est_pose)
        if cmd.mode == GOAL:
            reached = True
            break
        world.set_command(cmd.twist)
        world.advance_control()
        truth = world.truth_pose
        max_xt = max(max_xt, tracker.cross_track(truth))
        if cmap is not None and cmap.contains(truth.x, truth.y):
            if cmap.clearance(truth.x, truth.y) <= cmap.robot_radius:
                collided = True
    world.set_command(Twist(0.0, 0.0))
    return FollowResult(
        time=world.t - t0,
        max_cross_track=max_xt,
        collided=collided,
        reached=reached,
        timed_out=not reached,
    )
