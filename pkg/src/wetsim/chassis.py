"""Tracked-chassis ground truth: differential-drive kinematics with slip.

The chassis is modeled as a differential-drive body with equivalent
sprocket radius r and track separation b. Inverse kinematics turns a
commanded twist into sprocket speeds; forward kinematics reconstructs
the twist from track speeds. Ground-truth propagation degrades the
commanded twist with a parametric slip model before integrating the
pose along an exact arc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import noise
from .geometry import Pose2D, Twist, integrate_unicycle

_SLIP_STREAM = noise.stream_id("slip")

MAX_STEP_DT = 0.02  # seconds; callers substep anything coarser


class InvalidCommandError(ValueError):
    """Raised for non-finite twist commands."""


class StepSizeError(ValueError):
    """Raised when a ground-truth step dt is outside (0, MAX_STEP_DT]."""


@dataclass(frozen=True)
class ChassisParams:
    """Geometry and speed limits of the tracked base."""

    sprocket_radius: float = 0.1
    track_separation: float = 0.6
    max_track_speed: float = 1.0
    max_linear_speed: float = 0.5
    max_angular_speed: float = 1.5

    def __post_init__(self) -> None:
        for name in (
            "sprocket_radius",
            "track_separation",
            "max_track_speed",
            "max_linear_speed",
            "max_angular_speed",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.max_linear_speed > self.max_track_speed:
            raise ValueError("max_linear_speed must not exceed max_track_speed")


@dataclass(frozen=True)
class TrackSpeeds:
    """Sprocket angular speeds and the equivalent linear track speeds."""

    omega_left: float
    omega_right: float
    v_left: float
    v_right: float

    @classmethod
    def from_angular(cls, omega_left: float, omega_right: float, params: ChassisParams) -> "TrackSpeeds":
        r = params.sprocket_radius
        return cls(omega_left, omega_right, omega_left * r, omega_right * r)


@dataclass(frozen=True)
class SlipModel:
    """Truth-side slip: the part of motion the encoders never see.

    longitudinal_slip_ratio scales down the effective twist by a
    per-step factor (1 - ratio * xi) with xi a deterministic draw in
    [0, 1). Yaw is degraded by the same mechanism scaled with
    yaw_slip_factor: turning a skid-steer platform demands far more
    traction than rolling straight, so the yaw deficit on soft ground
    is systematically larger than the longitudinal one.
    lateral_drift_rate adds an outward displacement proportional to
    the yaw rate, modeling the chassis being pushed wide through
    turns. Zero parameters give ideal kinematics.
    """

    longitudinal_slip_ratio: float = 0.05
    lateral_drift_rate: float = 0.01
    yaw_slip_factor: float = 2.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.longitudinal_slip_ratio < 0.5:
            raise ValueError("longitudinal_slip_ratio must be in [0, 0.5)")
        if self.lateral_drift_rate < 0.0:
            raise ValueError("lateral_drift_rate must be non-negative")
        if not 0.0 <= self.yaw_slip_factor * self.longitudinal_slip_ratio < 1.0:
            raise ValueError("yaw slip must stay below total traction loss")

    @property
    def is_ideal(self) -> bool:
        return self.longitudinal_slip_ratio == 0.0 and self.lateral_drift_rate == 0.0


def clamp_twist(cmd: Twist, params: ChassisParams) -> Twist:
    """Clamp a twist to chassis limits, preserving the curvature v/w.

    Both components are scaled by the same factor, so the ratio (and
    the sign) of v_x and theta_dot is unchanged by saturation.
    """
    scale = 1.0
    if abs(cmd.v_x) > params.max_linear_speed:
        scale = min(scale, params.max_linear_speed / abs(cmd.v_x))
    if abs(cmd.theta_dot) > params.max_angular_speed:
        scale = min(scale, params.max_angular_speed / abs(cmd.theta_dot))
    if scale < 1.0:
        cmd = Twist(cmd.v_x * scale, cmd.theta_dot * scale)
    return cmd


def inverse_kinematics(cmd: Twist, params: ChassisParams) -> TrackSpeeds:
    """Sprocket speeds realizing a twist: w = (v -/+ theta_dot*b/2) / r.

    If either track would exceed max_track_speed, both are scaled by a
    common factor so the commanded curvature is preserved.
    """
    if not (math.isfinite(cmd.v_x) and math.isfinite(cmd.theta_dot)):
        raise InvalidCommandError("twist command must be finite")
    r = params.sprocket_radius
    b = params.track_separation
    v_left = cmd.v_x - 0.5 * cmd.theta_dot * b
    v_right = cmd.v_x + 0.5 * cmd.theta_dot * b
    peak = max(abs(v_left), abs(v_right))
    if peak > params.max_track_speed:
        scale = params.max_track_speed / peak
        v_left *= scale
        v_right *= scale
    return TrackSpeeds(v_left / r, v_right / r, v_left, v_right)


def forward_kinematics(tracks: TrackSpeeds, params: ChassisParams) -> Twist:
    """Twist from linear track speeds: v = (vL+vR)/2, w = (vR-vL)/b."""
    if not (math.isfinite(tracks.v_left) and math.isfinite(tracks.v_right)):
        raise InvalidCommandError("track speeds must be finite")
    return Twist(
        (tracks.v_left + tracks.v_right) / 2.0,
        (tracks.v_right - tracks.v_left) / params.track_separation,
    )


def slip_twist(cmd: Twist, slip: SlipModel, step_index: int) -> Twist:
    """Effective ground twist after slip degradation for one step."""
    if slip.longitudinal_slip_ratio == 0.0:
        return cmd
    xi_v = noise.uniform(slip.seed, _SLIP_STREAM, step_index, channel=0)
    xi_w = noise.uniform(slip.seed, _SLIP_STREAM, step_index, channel=1)
    return Twist(
        cmd.v_x * (1.0 - slip.longitudinal_slip_ratio * xi_v),
        cmd.theta_dot
        * (1.0 - slip.yaw_slip_factor * slip.longitudinal_slip_ratio * xi_w),
    )


def step_ground_truth(
    pose: Pose2D, cmd: Twist, slip: SlipModel, dt: float, step_index: int = 0
) -> Pose2D:
    """Propagate the true pose one step under the slip-degraded twist.

    Integration is the exact constant-twist arc, so with zero slip the
    trajectory is independent of the step size. Lateral drift is added
    perpendicular to the heading, pushed outward from the turn center.
    """
    if not (0.0 < dt <= MAX_STEP_DT):
        raise StepSizeError(f"dt must be in (0, {MAX_STEP_DT}], got {dt}")
    effective = slip_twist(cmd, slip, step_index)
    new_pose = integrate_unicycle(pose, effective, dt)
    if slip.lateral_drift_rate > 0.0 and cmd.theta_dot != 0.0:
        drift = slip.lateral_drift_rate * abs(effective.theta_dot) * dt
        # Outward of the turn: right of heading when turning left.
        side = -1.0 if effective.theta_dot > 0 else 1.0
        px = new_pose.x + side * drift * -math.sin(new_pose.psi)
        py = new_pose.y + side * drift * math.cos(new_pose.psi)
        new_pose = Pose2D(px, py, new_pose.psi)
    return new_pose
