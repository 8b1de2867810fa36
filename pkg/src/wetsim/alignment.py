"""Planar PI servo that places the tool center point on the ring.

Distance and bearing errors from the TCP to the latched ring position
drive linear and angular velocity through clamped PI terms; the final
orientation is left free. The errors are taken in the tool frame
(which for the rear-mounted chamber points backward), so arriving at
the staging pose facing the collar makes the controller pivot until
the chamber swings over the ring, then trim the residual. The ring
position is held in the odometry frame, so the loop keeps working
when the sensor loses sight of the ring during the maneuver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .chassis import ChassisParams, clamp_twist
from .geometry import Pose2D, Twist, wrap_angle


@dataclass(frozen=True)
class TcpFrame:
    """Tool center point pose in the robot body frame.

    orientation_body is the tool axis direction; pi_step commands are
    expressed along this axis and then mapped to the base. A tool
    mounted too close to perpendicular cannot be driven along its axis
    by a nonholonomic base, so that configuration is rejected.
    """

    offset_body: tuple[float, float] = (-0.45, 0.0)
    orientation_body: float = math.pi

    def __post_init__(self) -> None:
        if abs(math.cos(self.orientation_body)) < 0.1:
            raise ValueError("tool axis too close to perpendicular to drive")

    def tcp_in_map(self, pose: Pose2D) -> tuple[float, float]:
        p = pose.transform_to_map(self.offset_body)
        return float(p[0]), float(p[1])

    def tool_heading(self, psi: float) -> float:
        return wrap_angle(psi + self.orientation_body)


@dataclass(frozen=True)
class PiGains:
    k_p_dist: float = 0.8
    k_i_dist: float = 0.1
    k_p_bearing: float = 2.0
    k_i_bearing: float = 0.2
    integral_limit_dist: float = 0.2
    integral_limit_bearing: float = 0.2

    def __post_init__(self) -> None:
        if self.k_p_dist <= 0.0 or self.k_p_bearing <= 0.0:
            raise ValueError("proportional gains must be positive")
        if self.k_i_dist < 0.0 or self.k_i_bearing < 0.0:
            raise ValueError("integral gains must be non-negative")
        if self.integral_limit_dist <= 0.0 or self.integral_limit_bearing <= 0.0:
            raise ValueError("integral limits must be positive")


@dataclass(frozen=True)
class AlignmentState:
    integral_dist: float = 0.0
    integral_bearing: float = 0.0
    prev_e_dist: float = 0.0
    prev_e_bearing: float = 0.0
    have_prev: bool = False
    converged: bool = False


@dataclass(frozen=True)
class AlignResult:
    final_error: float
    elapsed: float
    converged: bool


def alignment_errors(ring_map, tcp_map, psi: float) -> tuple[float, float]:
    """Distance and bearing from the TCP to the ring.

    Bearing is measured against the robot heading; a coincident ring
    takes bearing 0 by convention, since atan2(0, 0) has none.
    """
    dx = float(ring_map[0]) - float(tcp_map[0])
    dy = float(ring_map[1]) - float(tcp_map[1])
    e_dist = math.hypot(dx, dy)
    if e_dist == 0.0:
        return 0.0, 0.0
    return e_dist, wrap_angle(math.atan2(dy, dx) - psi)


def pi_step(errors: tuple[float, float], state: AlignmentState, gains: PiGains,
            dt: float, tcp: TcpFrame = TcpFrame(),
            chassis: ChassisParams | None = None) -> tuple[Twist, AlignmentState]:
    """One clamped PI step; returns the base-frame twist command.

    The errors are distance and bearing of the ring seen from the TCP
    along the tool axis; the PI output is a twist in the tool frame,
    mapped to the base so the TCP actually moves as commanded. Driving
    is inhibited while the ring is behind the tool's heading by scaling
    v with cos(bearing), floored at zero.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    e_dist, e_bearing = errors
    if state.have_prev:
        i_dist = state.integral_dist + 0.5 * (e_dist + state.prev_e_dist) * dt
        i_bearing = state.integral_bearing + 0.5 * (e_bearing + state.prev_e_bearing) * dt
    else:
        i_dist = state.integral_dist + e_dist * dt
        i_bearing = state.integral_bearing + e_bearing * dt
    i_dist = min(max(i_dist, -gains.integral_limit_dist), gains.integral_limit_dist)
    i_bearing = min(max(i_bearing, -gains.integral_limit_bearing), gains.integral_limit_bearing)

    v_tcp = gains.k_p_dist * e_dist + gains.k_i_dist * i_dist
    omega = gains.k_p_bearing * e_bearing + gains.k_i_bearing * i_bearing
    v_tcp *= max(0.0, math.cos(e_bearing))
    # base twist realizing v_tcp along the tool axis at offset (r_x, r_y):
    # the TCP velocity in body coords is (v - w*r_y, w*r_x)
    r_x, r_y = tcp.offset_body
    cos_o = math.cos(tcp.orientation_body)
    sin_o = math.sin(tcp.orientation_body)
    v_base = (v_tcp - omega * r_x * sin_o) / cos_o + omega * r_y
    cmd = Twist(v_base, omega)
    if chassis is not None:
        cmd = clamp_twist(cmd, chassis)
    new_state = AlignmentState(
        integral_dist=i_dist,
        integral_bearing=i_bearing,
        prev_e_dist=e_dist,
        prev_e_bearing=e_bearing,
        have_prev=True,
        converged=state.converged,
    )
    return cmd, new_state


class RingLatch:
    """Ring position carried in the odometry frame between sightings.

    Every valid measurement re-anchors the ring at the current odometric
    pose; afterwards the stored point simply lives in that frame, so
    whatever drift the odometry accumulates is shared by robot and ring.
    """

    def __init__(self) -> None:
        self.ring_odom: tuple[float, float] | None = None

    def update(self, ring_odom) -> None:
        """Latch a sighting already expressed in the odometry frame.

        The frame composition has to happen at the sample instant (the
        world stamps it); composing a stale body vector with a newer
        pose here would smear the point by whatever the robot moved
        since the sample was taken.
        """
        self.ring_odom = (float(ring_odom[0]), float(ring_odom[1]))

    @property
    def have_ring(self) -> bool:
        return self.ring_odom is not None


def align_until_converged(world, gains: PiGains = PiGains(),
                          tcp: TcpFrame = TcpFrame(),
                          tolerance: float = 0.015,
                          hold_time: float = 0.5,
                          timeout: float = 60.0) -> AlignResult:
    """Close the loop at control rate until the TCP sits on the ring.

    The world provides odometric pose, ring sightings and ground truth
    (see SimWorld). Convergence requires the estimated error to stay
    under tolerance for hold_time; the reported final error is against
    ground truth.
    """
    latch = RingLatch()
    state = AlignmentState()
    t0 = world.t
    held_since: float | None = None
    converged = False
    dt = world.control_period
    lever = math.hypot(*tcp.offset_body)
    while world.t - t0 < timeout:
        meas = world.sense_ring()
        if meas is not None and meas.valid and meas.ring_position_odom is not None:
            latch.update(meas.ring_position_odom)
        if not latch.have_ring:
            break  # never saw the ring: caller runs recovery
        pose = world.odom_pose
        tcp_map = tcp.tcp_in_map(pose)
        errors = alignment_errors(latch.ring_odom, tcp_map,
                                  tcp.tool_heading(pose.psi))
        if errors[0] < tolerance:
            if held_since is None:
                held_since = world.t
            elif world.t - held_since >= hold_time:
                converged = True
                break
        else:
            held_since = None
        if errors[0] < 0.5 * tolerance:
            # park well inside the window, not at its edge: the hold
            # clock runs from `tolerance` but trimming down to half of
            # it halves the bias the loop leaves behind
            world.set_command(Twist(0.0, 0.0))
            world.advance_control()
            continue
        rx = latch.ring_odom[0] - pose.x
        ry = latch.ring_odom[1] - pose.y
        d_base = math.hypot(rx, ry)
        if d_base < lever - 0.5 * tolerance:
            # the tool sweeps a circle of radius `lever` around the
            # base, so no rotation can reach a ring inside it; ease the
            # base away from the ring until the circle covers it again
            bearing = wrap_angle(math.atan2(ry, rx) - pose.psi)
            speed = min(0.10, 0.5 * (lever - d_base) + 0.02)
            sign = -1.0 if math.cos(bearing) >= 0.0 else 1.0
            world.set_command(Twist(sign * speed, 0.0))
            world.advance_control()
            continue
        cmd, state = pi_step(errors, state, gains, dt, tcp, world.chassis_params)
        # slow the sweep as the error shrinks, or the tool crosses the
        # tolerance window between control steps and the pivot hunts;
        # the floor scales with the window so tight tolerances still land
        sweep = abs(cmd.theta_dot) * lever
        allowed = 2.0 * tolerance + 2.0 * errors[0]
        if sweep > allowed:
            f = allowed / sweep
            cmd = Twist(cmd.v_x * f, cmd.theta_dot * f)
        world.set_command(cmd)
        world.advance_control()
    world.set_command(Twist(0.0, 0.0))
    truth_tcp = tcp.tcp_in_map(world.truth_pose)
    ring_truth = world.target_ring_truth
    final = math.hypot(truth_tcp[0] - ring_truth[0], truth_tcp[1] - ring_truth[1])
    return AlignResult(final_error=final, elapsed=world.t - t0, converged=converged)
