"""Planar poses, twists, and angle utilities shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a > math.pi:
        a -= TWO_PI
    elif a <= -math.pi:
        a += TWO_PI
    return a


def wrap_angle_array(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap to (-pi, pi]."""
    out = np.mod(a, TWO_PI)
    out = np.where(out > math.pi, out - TWO_PI, out)
    out = np.where(out <= -math.pi, out + TWO_PI, out)
    return out


def angle_diff(a: float, b: float) -> float:
    """Shortest signed difference a - b, wrapped to (-pi, pi]."""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class Pose2D:
    """Planar pose: position in the map frame plus heading psi in (-pi, pi]."""

    x: float
    y: float
    psi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.psi)):
            raise ValueError("pose components must be finite")
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def heading_vector(self) -> np.ndarray:
        return np.array([math.cos(self.psi), math.sin(self.psi)])

    def transform_to_map(self, point_body: np.ndarray) -> np.ndarray:
        """Map-frame coordinates of a point given in this pose's body frame."""
        c, s = math.cos(self.psi), math.sin(self.psi)
        return np.array(
            [
                self.x + c * point_body[0] - s * point_body[1],
                self.y + s * point_body[0] + c * point_body[1],
            ]
        )

    def transform_to_body(self, point_map: np.ndarray) -> np.ndarray:
        """Body-frame coordinates of a map-frame point."""
        c, s = math.cos(self.psi), math.sin(self.psi)
        dx = point_map[0] - self.x
        dy = point_map[1] - self.y
        return np.array([c * dx + s * dy, -s * dx + c * dy])

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Twist:
    """Body-frame velocity command: forward speed and yaw rate."""

    v_x: float
    theta_dot: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.v_x) and math.isfinite(self.theta_dot)):
            raise ValueError("twist components must be finite")


def integrate_unicycle(pose: Pose2D, twist: Twist, dt: float) -> Pose2D:
    """Exact constant-twist (arc) integration of the unicycle model.

    Unlike Euler integration this is exact for any dt, so the step size
    never biases a trajectory.
    """
    v, w = twist.v_x, twist.theta_dot
    if abs(w) < 1e-12:
        return Pose2D(
            pose.x + v * math.cos(pose.psi) * dt,
            pose.y + v * math.sin(pose.psi) * dt,
            pose.psi,
        )
    # Closed-form arc: the chord of a circle of radius v/w.
    psi1 = pose.psi + w * dt
    r = v / w
    return Pose2D(
        pose.x + r * (math.sin(psi1) - math.sin(pose.psi)),
        pose.y - r * (math.cos(psi1) - math.cos(pose.psi)),
        psi1,
    )
