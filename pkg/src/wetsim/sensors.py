"""Multi-rate sensor simulation: IMU, encoders, RTK fixes, ring sensing.

Every sample is a pure function of ground truth plus counter-based
noise keyed by (seed, sensor stream, sample index, channel), so runs
replay bit-for-bit. Zeroing every noise parameter turns each sensor
into an exact passthrough of truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import noise
from .chassis import ChassisParams, TrackSpeeds, forward_kinematics
from .geometry import Pose2D, Twist, wrap_angle

RATE_IMU = 250.0
RATE_ENCODER = 30.0
RATE_GPS = 5.0
RATE_RING = 15.0

_STREAM_IMU = noise.stream_id("imu")
_STREAM_GPS = noise.stream_id("gps")
_STREAM_RING = noise.stream_id("ring")

DEG = math.pi / 180.0


class SchedulingError(RuntimeError):
    """A sensor was sampled off its rate grid."""


def _check_grid(t: float, rate: float, what: str) -> int:
    k = t * rate
    idx = round(k)
    if abs(k - idx) > 1e-6:
        raise SchedulingError(f"{what} sampled at t={t!r}, off the {rate:g} Hz grid")
    return int(idx)


@dataclass(frozen=True)
class NoiseProfile:
    """Named bundle of sensor noise, bias and slip parameters."""

    name: str = "custom"
    gyro_noise_std: float = 0.002          # rad/s white noise per sample
    gyro_bias_init_std: float = 0.0015 * DEG  # rad/s, random-walk start scale
    gyro_bias_walk_std: float = 1e-6       # rad/s per sqrt(s)
    ahrs_yaw_std: float = 0.5 * DEG        # rad, absolute yaw channel
    accel_noise_std: float = 0.05          # m/s^2 per axis
    gps_enabled: bool = True
    gps_pos_std: float = 0.015             # m per axis
    gps_heading_std: float = 0.94 * DEG    # rad
    encoder_sigma0: float = 0.01           # m/s noise floor reported by odometry
    encoder_k_slip: float = 0.1            # growth of reported noise with speed
    ring_pos_std: float = 7.19e-3          # m radial RMS of the ring sensor
    ring_range: float = 1.5                # m
    ring_fov_half: float = 60.0 * DEG      # rad, frontal cone half-angle
    slip_longitudinal: float = 0.08
    slip_lateral: float = 0.01
    slip_yaw_factor: float = 2.5

    def is_ideal(self) -> bool:
        return (
            self.gyro_noise_std == 0.0
            and self.gyro_bias_init_std == 0.0
            and self.gyro_bias_walk_std == 0.0
            and self.ahrs_yaw_std == 0.0
            and self.accel_noise_std == 0.0
            and self.gps_pos_std == 0.0
            and self.gps_heading_std == 0.0
            and self.ring_pos_std == 0.0
            and self.slip_longitudinal == 0.0
            and self.slip_lateral == 0.0
        )


_PROFILES = {
    "outdoor": NoiseProfile(name="outdoor"),
    "indoor": NoiseProfile(
        name="indoor",
        gps_enabled=False,
        ring_pos_std=1.53e-3,
        slip_longitudinal=0.02,
        slip_lateral=0.005,
    ),
    "ideal": NoiseProfile(
        name="ideal",
        gyro_noise_std=0.0,
        gyro_bias_init_std=0.0,
        gyro_bias_walk_std=0.0,
        ahrs_yaw_std=0.0,
        accel_noise_std=0.0,
        gps_pos_std=0.0,
        gps_heading_std=0.0,
        encoder_sigma0=0.0,
        encoder_k_slip=0.0,
        ring_pos_std=0.0,
        slip_longitudinal=0.0,
        slip_lateral=0.0,
    ),
}


def named_profile(name: str, **overrides) -> NoiseProfile:
    try:
        base = _PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown noise profile {name!r}; have {sorted(_PROFILES)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class ImuSample:
    t: float
    yaw_rate: float
    accel_body: tuple[float, float]
    yaw: float
    noise_std: tuple[float, float, float]  # (yaw_rate, yaw, accel)

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass(frozen=True)
class GpsFix:
    t: float
    position: tuple[float, float]
    heading: float
    pos_std: float
    heading_std: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class EncoderOdom:
    t: float
    v_left: float
    v_right: float
    twist: Twist
    cov: np.ndarray  # 2x2, speed-adaptive

    def __post_init__(self) -> None:
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))


@dataclass(frozen=True)
class RingPoseMeasurement:
    t: float
    ring_position_map: tuple[float, float]
    ring_position_body: tuple[float, float]
    position_std: float
    valid: bool
    # body-frame point composed with the odometric pose at sample time;
    # filled in by the world so consumers never pair a stale body vector
    # with a newer pose (annotation, not part of the sensor model)
    ring_position_odom: tuple[float, float] | None = None


class ImuSim:
    """250 Hz gyro + attitude yaw with a slowly walking gyro bias.

    The attitude yaw channel reports true heading corrupted by the
    integrated bias and white noise, mimicking an AHRS that cannot
    trust its magnetometer.
    """

    def __init__(self, profile: NoiseProfile, seed: int):
        self.profile = profile
        self.seed = seed
        if profile.gyro_bias_init_std > 0.0:
            self.bias = profile.gyro_bias_init_std * noise.normal(seed, _STREAM_IMU, 0, channel=5)
        else:
            self.bias = 0.0
        self._integrated_bias = 0.0

    def sample(self, truth_pose: Pose2D, truth_twist: Twist, accel_truth, t: float) -> ImuSample:
        k = _check_grid(t, RATE_IMU, "imu")
        p = self.profile
        dt = 1.0 / RATE_IMU
        if p.gyro_bias_walk_std > 0.0:
            self.bias += p.gyro_bias_walk_std * math.sqrt(dt) * noise.normal(
                self.seed, _STREAM_IMU, k, channel=1
            )
        self._integrated_bias += self.bias * dt
        yaw_rate = truth_twist.theta_dot + self.bias
        if p.gyro_noise_std > 0.0:
            yaw_rate += p.gyro_noise_std * noise.normal(self.seed, _STREAM_IMU, k, channel=0)
        yaw = truth_pose.psi + self._integrated_bias
        if p.ahrs_yaw_std > 0.0:
            yaw += p.ahrs_yaw_std * noise.normal(self.seed, _STREAM_IMU, k, channel=2)
        ax, ay = float(accel_truth[0]), float(accel_truth[1])
        if p.accel_noise_std > 0.0:
            ax += p.accel_noise_std * noise.normal(self.seed, _STREAM_IMU, k, channel=3)
            ay += p.accel_noise_std * noise.normal(self.seed, _STREAM_IMU, k, channel=4)
        return ImuSample(
            t=t,
            yaw_rate=yaw_rate,
            accel_body=(ax, ay),
            yaw=yaw,
            noise_std=(p.gyro_noise_std, p.ahrs_yaw_std, p.accel_noise_std),
        )


class GpsSim:
    """5 Hz RTK position + dual-antenna heading; stateless per sample."""

    def __init__(self, profile: NoiseProfile, seed: int):
        self.profile = profile
        self.seed = seed

    def sample(self, truth_pose: Pose2D, t: float) -> GpsFix | None:
        k = _check_grid(t, RATE_GPS, "gps")
        p = self.profile
        if not p.gps_enabled:
            return None
        x, y, psi = truth_pose.x, truth_pose.y, truth_pose.psi
        if p.gps_pos_std > 0.0:
            x += p.gps_pos_std * noise.normal(self.seed, _STREAM_GPS, k, channel=0)
            y += p.gps_pos_std * noise.normal(self.seed, _STREAM_GPS, k, channel=1)
        if p.gps_heading_std > 0.0:
            psi += p.gps_heading_std * noise.normal(self.seed, _STREAM_GPS, k, channel=2)
        return GpsFix(t=t, position=(x, y), heading=psi,
                      pos_std=p.gps_pos_std, heading_std=p.gps_heading_std)


class EncoderSim:
    """Sprocket-side odometry: exact commanded speeds, honest covariance.

    Slip happens between sprocket and ground, so it never shows up
    here; the reported covariance grows with speed to flag exactly that
    trust gap to the fusion stage.
    """

    def __init__(self, profile: NoiseProfile, params: ChassisParams):
        self.profile = profile
        self.params = params

    def sample(self, commanded: TrackSpeeds, t: float) -> EncoderOdom:
        _check_grid(t, RATE_ENCODER, "encoders")
        twist = forward_kinematics(commanded, self.params)
        sigma = self.profile.encoder_sigma0 + self.profile.encoder_k_slip * abs(twist.v_x)
        return EncoderOdom(
            t=t,
            v_left=commanded.v_left,
            v_right=commanded.v_right,
            twist=twist,
            cov=np.diag([sigma * sigma, sigma * sigma]),
        )


class RingSensorSim:
    """Range/cone-limited collar position sensing, map and body frame.

    The same noise vector is reported in both frames, so a consumer
    working purely in odometry can use the body-frame measurement and
    stay consistent with the map-frame one.
    """

    def __init__(self, profile: NoiseProfile, seed: int):
        self.profile = profile
        self.seed = seed

    def sample(self, truth_ring, truth_robot_pose: Pose2D, t: float,
               ring_id: int = 0, noiseless: bool = False) -> RingPoseMeasurement:
        k = _check_grid(t, RATE_RING, "ring sensor")
        p = self.profile
        rx, ry = float(truth_ring[0]), float(truth_ring[1])
        body = truth_robot_pose.transform_to_body((rx, ry))
        rng = math.hypot(body[0], body[1])
        bearing = math.atan2(body[1], body[0])
        valid = rng <= p.ring_range and abs(bearing) <= p.ring_fov_half
        mx, my = rx, ry
        if valid and p.ring_pos_std > 0.0 and not noiseless:
            axis_std = p.ring_pos_std / math.sqrt(2.0)  # radial RMS equals ring_pos_std
            mx += axis_std * noise.normal(self.seed, _STREAM_RING, k, channel=2 * ring_id)
            my += axis_std * noise.normal(self.seed, _STREAM_RING, k, channel=2 * ring_id + 1)
        meas_body = truth_robot_pose.transform_to_body((mx, my))
        return RingPoseMeasurement(
            t=t,
            ring_position_map=(mx, my),
            ring_position_body=(float(meas_body[0]), float(meas_body[1])),
            position_std=0.0 if noiseless else p.ring_pos_std,
            valid=valid,
        )
