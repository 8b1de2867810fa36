"""Closed-loop simulation world on an integer tick clock.

All sensor and control rates divide 1500 Hz, so every event lands on
an exact tick and the schedule never suffers float drift: IMU every 6
ticks, control and encoders every 50, localization output every 75,
ring sensing every 100, RTK fixes every 300. Ground truth integrates
exactly between consecutive events.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import noise
from .chassis import (ChassisParams, SlipModel, TrackSpeeds, forward_kinematics,
                      inverse_kinematics, slip_twist, step_ground_truth)
from .estimation import (GaussianState, Measurement, OnlineFilter, UkfConfig,
                         FilterLog, position_fx, position_handlers, velocity_fx,
                         velocity_handlers)
from .geometry import Pose2D, Twist, integrate_unicycle, wrap_angle
from .sensors import (EncoderSim, GpsSim, ImuSim, NoiseProfile, RingSensorSim,
                      RATE_ENCODER, RATE_GPS, RATE_IMU, RATE_RING)

TICK_RATE = 1500
IMU_EVERY = TICK_RATE // int(RATE_IMU)          # 6
CONTROL_EVERY = TICK_RATE // int(RATE_ENCODER)  # 50
GPS_EVERY = TICK_RATE // int(RATE_GPS)          # 300
RING_EVERY = TICK_RATE // int(RATE_RING)        # 100
OUTPUT_EVERY = 75                               # 20 Hz localization stream

_CYCLE = 300  # lcm of the event periods
_EVENT_OFFSETS = sorted({
    k for k in range(_CYCLE)
    if k % IMU_EVERY == 0 or k % CONTROL_EVERY == 0
    or k % RING_EVERY == 0 or k % OUTPUT_EVERY == 0
})

_STREAM_INIT = noise.stream_id("init")


def _next_event_tick(tick: int) -> int:
    base = (tick // _CYCLE) * _CYCLE
    off = tick - base
    for e in _EVENT_OFFSETS:
        if e > off:
            return base + e
    return base + _CYCLE


@dataclass
class TrajectorySample:
    t: float
    truth: Pose2D
    est: GaussianState      # position filter, full belief
    odom: Pose2D            # fused-twist integration (velocity filter)
    dead_reckon: Pose2D     # raw encoder integration


class SimWorld:
    """Ground truth, sensors and the two-stage filter chain in lockstep."""

    def __init__(
        self,
        start_pose: Pose2D,
        profile: NoiseProfile,
        seed: int,
        chassis: ChassisParams = ChassisParams(),
        ukf: UkfConfig = UkfConfig(),
        rings: tuple[tuple[float, float], ...] = (),
        slip: SlipModel | None = None,
        init_spread: tuple[float, ...] | None = None,
        active_cmap=None,
    ):
        self.chassis_params = chassis
        self.profile = profile
        self.seed = seed
        self.rings = [(float(r[0]), float(r[1])) for r in rings]
        self.slip = slip if slip is not None else SlipModel(
            longitudinal_slip_ratio=profile.slip_longitudinal,
            lateral_drift_rate=profile.slip_lateral,
            yaw_slip_factor=profile.slip_yaw_factor,
            seed=seed,
        )
        self.tick = 0
        self.truth_pose = start_pose
        self._cmd_twist = Twist(0.0, 0.0)
        self._cmd_tracks = TrackSpeeds(0.0, 0.0, 0.0, 0.0)
        self._prev_cmd_v = 0.0

        self._imu = ImuSim(profile, seed)
        self._gps = GpsSim(profile, seed)
        self._encoders = EncoderSim(profile, chassis)
        self._ring_sensor = RingSensorSim(profile, seed)
        self.target_ring_id: int | None = None
        self._last_ring_meas = None

        # initial belief: truth, optionally perturbed by a declared spread
        vel_mean = np.array([0.0, 0.0, start_pose.psi])
        pos_mean = np.array([start_pose.x, start_pose.y, start_pose.psi, 0.0, 0.0])
        vel_cov = np.diag([1e-4, 1e-4, 1e-4])
        if init_spread is not None:
            sx, sy, spsi = init_spread
            draws = np.array([
                noise.normal(seed, _STREAM_INIT, 0, channel=c) for c in range(3)
            ])
            pos_mean[0] += sx * draws[0]
            pos_mean[1] += sy * draws[1]
            pos_mean[2] = wrap_angle(pos_mean[2] + spsi * draws[2])
            vel_mean[2] = pos_mean[2]
            pos_cov = np.diag([max(sx, 1e-3) ** 2, max(sy, 1e-3) ** 2,
                               max(spsi, 1e-3) ** 2, 1e-4, 1e-4])
        else:
            pos_cov = np.diag([1e-6, 1e-6, 1e-6, 1e-4, 1e-4])
        self.vel_log = FilterLog()
        self.pos_log = FilterLog()
        self.vel_filter = OnlineFilter(
            ukf, velocity_fx, ukf.q_velocity, (2,), velocity_handlers(),
            GaussianState(0.0, vel_mean, vel_cov), self.vel_log)
        self.pos_filter = OnlineFilter(
            ukf, position_fx, ukf.q_position, (2,), position_handlers(),
            GaussianState(0.0, pos_mean, pos_cov), self.pos_log)

        self.odom_pose = Pose2D(pos_mean[0], pos_mean[1], pos_mean[2])
        self._odom_t = 0.0
        self._odom_twist = Twist(0.0, 0.0)
        self.dead_reckon_pose = self.odom_pose
        self._dr_t = 0.0
        self._last_enc_twist = Twist(0.0, 0.0)

        self.trajectory: list[TrajectorySample] = []
        self.active_cmap = active_cmap
        self.collision_events = 0
        self._in_collision = False
        self._process_tick_events()  # tick 0 lies on every sensor grid

    # -- clock ------------------------------------------------------------

    @property
    def t(self) -> float:
        return self.tick / TICK_RATE

    @property
    def control_period(self) -> float:
        return CONTROL_EVERY / TICK_RATE

    # -- commands ----------------------------------------------------------

    def set_command(self, twist: Twist) -> None:
        """Latch a body twist; track clamping happens here, so ground
        truth and encoders both see the realizable command."""
        tracks = inverse_kinematics(twist, self.chassis_params)
        self._cmd_tracks = tracks
        self._cmd_twist = forward_kinematics(tracks, self.chassis_params)

    # -- stepping ----------------------------------------------------------

    def _integrate_truth_to(self, tick: int) -> None:
        if tick <= self.tick:
            return
        dt = (tick - self.tick) / TICK_RATE
        self.truth_pose = step_ground_truth(
            self.truth_pose, self._cmd_twist, self.slip, dt, step_index=self.tick
        )
        self.tick = tick

    def _feed_vel(self, m: Measurement) -> None:
        self.vel_filter.feed(m)
        self._pump_velocity_outputs()

    def _pump_velocity_outputs(self) -> None:
        for st in self.vel_filter.drain():
            v, w, psi = st.mean
            cov = np.diag(np.maximum(np.diag(st.cov), 1e-10))
            m = Measurement(st.t, "odom", np.array([v, w, psi]),
                            cov, source="velocity_filter")
            self.pos_filter.feed(m)
            self._update_odom(st)

    def _update_odom(self, st: GaussianState) -> None:
        dt = st.t - self._odom_t
        v, w, psi = st.mean
        if dt > 0:
            moved = integrate_unicycle(self.odom_pose, Twist(v, w), dt)
            # heading comes straight from the fused attitude channel
            self.odom_pose = Pose2D(moved.x, moved.y, psi)
            self._odom_t = st.t
            self._odom_twist = Twist(v, w)

    def _odom_at(self, t: float) -> Pose2D:
        """Odometric pose projected from the last fused output to time t."""
        dt = t - self._odom_t
        if dt <= 0:
            return self.odom_pose
        return integrate_unicycle(self.odom_pose, self._odom_twist, dt)

    def _process_tick_events(self) -> None:
        tick = self.tick
        t = tick / TICK_RATE
        if tick % IMU_EVERY == 0:
            dt = IMU_EVERY / TICK_RATE
            accel = ((self._cmd_twist.v_x - self._prev_cmd_v) / dt,
                     self._cmd_twist.v_x * self._cmd_twist.theta_dot)
            self._prev_cmd_v = self._cmd_twist.v_x
            sample = self._imu.sample(self.truth_pose, self._true_twist(), accel, t)
            m = Measurement(t, "imu", np.array([sample.yaw_rate, sample.yaw]),
                            np.diag([max(sample.noise_std[0], 1e-6) ** 2,
                                     max(sample.noise_std[1], 1e-6) ** 2]),
                            source="imu")
            self._feed_vel(m)
        if tick % CONTROL_EVERY == 0:
            odo = self._encoders.sample(self._cmd_tracks, t)
            m = Measurement(t, "odom", np.array([odo.twist.v_x, odo.twist.theta_dot]),
                            odo.cov, source="encoders")
            self._feed_vel(m)
            self._step_dead_reckoning(t, odo.twist)
            self._last_enc_twist = odo.twist
        if tick % GPS_EVERY == 0:
            fix = self._gps.sample(self.truth_pose, t)
            if fix is not None:
                m = Measurement(t, "gps",
                                np.array([fix.position[0], fix.position[1], fix.heading]),
                                np.diag([max(fix.pos_std, 1e-6) ** 2,
                                         max(fix.pos_std, 1e-6) ** 2,
                                         max(fix.heading_std, 1e-6) ** 2]),
                                source="gps")
                self.pos_filter.feed(m)
        if tick % RING_EVERY == 0 and self.target_ring_id is not None:
            ring = self.rings[self.target_ring_id]
            meas = self._ring_sensor.sample(
                ring, self.truth_pose, t, ring_id=self.target_ring_id
            )
            if meas.valid:
                # stamp the body vector into the odometric frame at the
                # sample instant, so later consumers cannot smear it with
                # a pose from a different time
                pt = self._odom_at(t).transform_to_map(
                    np.asarray(meas.ring_position_body))
                meas = replace(meas, ring_position_odom=(float(pt[0]), float(pt[1])))
            self._last_ring_meas = meas
        if tick % OUTPUT_EVERY == 0:
            self.vel_filter.flush_to(t)
            self._pump_velocity_outputs()
            self.pos_filter.flush_to(t)
            dr = self.dead_reckon_pose
            if t - self._dr_t > 0:  # project to the grid time, log only
                dr = integrate_unicycle(dr, self._last_enc_twist, t - self._dr_t)
            for st in self.pos_filter.drain():
                self.trajectory.append(
                    TrajectorySample(st.t, self.truth_pose, st, self.odom_pose, dr))

    def _true_twist(self) -> Twist:
        # the gyro is strapped to the hull: it sees the slip-degraded
        # rate of the chunk starting at the current tick, not the command
        return slip_twist(self._cmd_twist, self.slip, step_index=self.tick)

    def _step_dead_reckoning(self, t: float, twist: Twist) -> None:
        dt = t - self._dr_t
        if dt > 0:
            self.dead_reckon_pose = integrate_unicycle(self.dead_reckon_pose, twist, dt)
            self._dr_t = t

    def advance_to_tick(self, target: int) -> None:
        while self.tick < target:
            nxt = min(_next_event_tick(self.tick), target)
            self._integrate_truth_to(nxt)
            if self._is_event(self.tick):
                self._process_tick_events()
            self._check_collision()

    def _is_event(self, tick: int) -> bool:
        off = tick % _CYCLE
        return off in _EVENT_OFFSETS

    def advance_control(self) -> None:
        """Advance to the next control tick (1/30 s)."""
        target = ((self.tick // CONTROL_EVERY) + 1) * CONTROL_EVERY
        self.advance_to_tick(target)

    def run_for(self, seconds: float) -> None:
        self.advance_to_tick(self.tick + int(round(seconds * TICK_RATE)))

    def fast_forward(self, seconds: float) -> None:
        """Jump the clock with the robot parked (e.g. the sampling dwell).

        Truth does not move and the braked platform pins the belief, so
        filters relabel their state in time rather than diffusing it.
        """
        self.set_command(Twist(0.0, 0.0))
        self.tick += int(round(seconds * TICK_RATE))
        t = self.t
        self.vel_filter.hold_to(t)
        self.pos_filter.hold_to(t)
        self._odom_t = t
        self._dr_t = t
        self._prev_cmd_v = 0.0

    def _check_collision(self) -> None:
        if self.active_cmap is None:
            return
        cm = self.active_cmap
        p = self.truth_pose
        hit = (not cm.contains(p.x, p.y)
               or cm.clearance(p.x, p.y) <= cm.robot_radius)
        if hit and not self._in_collision:
            self.collision_events += 1
        self._in_collision = hit

    # -- beliefs -----------------------------------------------------------

    @property
    def est_state(self) -> GaussianState:
        return self.pos_filter.peek(self.t)

    @property
    def est_pose(self) -> Pose2D:
        m = self.est_state.mean
        return Pose2D(m[0], m[1], m[2])

    def sense_ring(self):
        return self._last_ring_meas

    def set_target_ring(self, ring_id: int | None) -> None:
        self.target_ring_id = ring_id
        self._last_ring_meas = None

    @property
    def target_ring_truth(self) -> tuple[float, float]:
        if self.target_ring_id is None:
            raise ValueError("no target ring selected")
        return self.rings[self.target_ring_id]

    def inject_position_fix(self, xy, cov_xy: float, t: float | None = None) -> None:
        """Feed the position filter an absolute position pseudo-fix
        (e.g. derived from a ring sighting against the known map)."""
        t = self.t if t is None else t
        m = Measurement(
            t, "gps",
            np.array([float(xy[0]), float(xy[1]), self.est_state.mean[2]]),
            np.diag([cov_xy, cov_xy, 1.0]),
            source="vision_fix",
        )
        self.pos_filter.feed(m)
