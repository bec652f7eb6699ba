"""Waypoint trajectories and synthetic 9-axis IMU output along them.

Orientation is yaw-only: tags move in the plane, so roll and pitch stay
zero and gravity always lies on the sensor z axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Position2D, RngStream, SimTime, US_PER_S
from .errors import ParameterError

GRAVITY_MPS2 = 9.81
EARTH_FIELD_UT = 50.0
STILL_SPEED_MPS = 0.01


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple  # ((t_us, Position2D), ...)
    wrap: bool = False

    def __post_init__(self):
        wps = tuple((int(t), p if isinstance(p, Position2D) else Position2D(*p))
                    for t, p in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if not wps:
            raise ParameterError("trajectory needs at least one waypoint")
        times = [t for t, _ in wps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ParameterError("waypoint times must be strictly increasing")

    @classmethod
    def stationary(cls, pos) -> "Trajectory":
        return cls(((0, Position2D(*pos)),))

    @property
    def times_us(self) -> np.ndarray:
        return np.array([t for t, _ in self.waypoints], dtype=float)

    @property
    def xy(self) -> np.ndarray:
        return np.array([[p.x_m, p.y_m] for _, p in self.waypoints], dtype=float)

    def length_m(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.xy, axis=0), axis=1)))


def positions_at(traj: Trajectory, times_us) -> np.ndarray:
    """Piecewise-linear positions for an array of times (µs, may be fractional)."""
    t = np.asarray(times_us, dtype=float)
    ts = traj.times_us
    if traj.wrap and ts.size > 1:
        period = ts[-1] - ts[0]
        t = np.where(t > ts[-1], ts[0] + np.mod(t - ts[0], period), t)
    xy = traj.xy
    return np.stack([np.interp(t, ts, xy[:, 0]), np.interp(t, ts, xy[:, 1])], axis=-1)


def position_at(traj: Trajectory, t: SimTime) -> Position2D:
    x, y = positions_at(traj, [t])[0]
    return Position2D(float(x), float(y))


@dataclass(frozen=True)
class ImuNoise:
    """Per-axis white-noise standard deviations."""

    accel_mps2: float = 0.0
    gyro_radps: float = 0.0
    mag_uT: float = 0.0

    def __post_init__(self):
        if min(self.accel_mps2, self.gyro_radps, self.mag_uT) < 0:
            raise ParameterError("IMU noise sigmas must be >= 0")


@dataclass(frozen=True)
class ImuSample:
    accel_mps2: tuple
    gyro_radps: tuple
    mag_uT: tuple
    orientation: tuple  # (w, x, y, z)
    linear_accel_mps2: tuple
    sampled_at: SimTime


@dataclass
class ImuBatch:
    """Column-oriented IMU samples; each array has one row per sample time."""

    sampled_at: np.ndarray
    accel_mps2: np.ndarray
    gyro_radps: np.ndarray
    mag_uT: np.ndarray
    orientation: np.ndarray
    linear_accel_mps2: np.ndarray

    def __len__(self):
        return self.sampled_at.size

    def sample(self, i: int) -> ImuSample:
        return ImuSample(tuple(self.accel_mps2[i]), tuple(self.gyro_radps[i]), tuple(self.mag_uT[i]),
                         tuple(self.orientation[i]), tuple(self.linear_accel_mps2[i]),
                         int(self.sampled_at[i]))


def _wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _headings(traj, t_us, dt_us, initial_heading):
    p_plus = positions_at(traj, t_us + dt_us)
    p_minus = positions_at(traj, t_us - dt_us)
    v = (p_plus - p_minus) / (2 * dt_us / US_PER_S)
    speed = np.hypot(v[:, 0], v[:, 1])
    h = np.arctan2(v[:, 1], v[:, 0])
    moving = speed >= STILL_SPEED_MPS
    # forward-fill the last moving heading over still samples
    idx = np.where(moving, np.arange(h.size), -1)
    np.maximum.accumulate(idx, out=idx)
    return np.where(idx >= 0, h[np.maximum(idx, 0)], initial_heading)


def first_heading(traj: Trajectory) -> float:
    """Direction of the first leg that moves, or 0 for a path that never moves."""
    xy = traj.xy
    step = np.diff(xy, axis=0)
    moving = np.flatnonzero(np.hypot(step[:, 0], step[:, 1]) > 0)
    if moving.size == 0:
        return 0.0
    dx, dy = step[moving[0]]
    return float(np.arctan2(dy, dx))


def synth_imu_batch(traj: Trajectory, times_us, dt: float = 0.01,
                    noise: Optional[ImuNoise] = None, rng: Optional[RngStream] = None,
                    initial_heading: Optional[float] = None) -> ImuBatch:
    """IMU samples at increasing ``times_us`` by central differences of the path.

    Heading follows the velocity direction and is held while the tag is
    slower than 1 cm/s; the gyro z rate is the central difference of heading.
    Before the first movement the tag faces ``initial_heading``, which
    defaults to the direction of its first leg.
    Noise draws consume a fixed (N, 9) block from ``rng``.
    """
    if not dt > 0:
        raise ParameterError("dt must be > 0")
    if initial_heading is None:
        initial_heading = first_heading(traj)
    t = np.asarray(times_us, dtype=float).ravel()
    dt_us = dt * US_PER_S
    n = t.size

    p0 = positions_at(traj, t)
    acc_w = (positions_at(traj, t + dt_us) - 2 * p0 + positions_at(traj, t - dt_us)) / dt ** 2
    yaw = _headings(traj, t, dt_us, initial_heading)
    yaw_plus = _headings(traj, t + dt_us, dt_us, initial_heading)
    yaw_minus = _headings(traj, t - dt_us, dt_us, initial_heading)
    yaw_rate = _wrap_angle(yaw_plus - yaw_minus) / (2 * dt)

    c, s = np.cos(yaw), np.sin(yaw)
    lin = np.zeros((n, 3))
    lin[:, 0] = c * acc_w[:, 0] + s * acc_w[:, 1]
    lin[:, 1] = -s * acc_w[:, 0] + c * acc_w[:, 1]
    accel = lin.copy()
    accel[:, 2] += GRAVITY_MPS2
    gyro = np.zeros((n, 3))
    gyro[:, 2] = yaw_rate
    mag = np.stack([EARTH_FIELD_UT * c, -EARTH_FIELD_UT * s, np.zeros(n)], axis=1)
    quat = np.stack([np.cos(yaw / 2), np.zeros(n), np.zeros(n), np.sin(yaw / 2)], axis=1)

    if rng is not None:
        noise = noise or ImuNoise()
        z = rng.generator.standard_normal((n, 9))
        accel = accel + noise.accel_mps2 * z[:, 0:3]
        gyro = gyro + noise.gyro_radps * z[:, 3:6]
        mag = mag + noise.mag_uT * z[:, 6:9]
    return ImuBatch(t.astype(np.int64), accel, gyro, mag, quat, lin)


def synth_imu(traj: Trajectory, t: SimTime, dt: float = 0.01, noise: Optional[ImuNoise] = None,
              rng: Optional[RngStream] = None,
              initial_heading: Optional[float] = None) -> ImuSample:
    return synth_imu_batch(traj, [t], dt, noise, rng, initial_heading).sample(0)


def quaternion_yaw(q) -> float:
    w, x, y, z = q
    return math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
