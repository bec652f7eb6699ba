import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wearbed.core import Position2D, derive_stream
from wearbed.errors import ParameterError
from wearbed.motion import (ImuNoise, Trajectory, position_at, positions_at, quaternion_yaw,
                            first_heading, synth_imu, synth_imu_batch)
from wearbed.scenarios import D1, D2, D3, checkpoint_trajectory, dynamic_trajectory, P1, P2

S = 1_000_000
LINE = Trajectory(((0, Position2D(0, 0)), (8 * S, Position2D(5, 0))))
CORNER = Trajectory(((0, Position2D(0, 0)), (5 * S, Position2D(5, 0)), (10 * S, Position2D(5, 5))))


def test_midpoint_of_segment():
    assert position_at(LINE, 4 * S) == Position2D(2.5, 0.0)


def test_start_point():
    assert position_at(LINE, 0) == Position2D(0.0, 0.0)


def test_clamped_after_last_waypoint():
    assert position_at(LINE, 10 * S) == Position2D(5.0, 0.0)


def test_wrap_repeats_the_loop():
    loop = Trajectory(LINE.waypoints, wrap=True)
    assert position_at(loop, 12 * S) == position_at(LINE, 4 * S)


def test_waypoints_must_increase():
    with pytest.raises(ParameterError):
        Trajectory(((0, Position2D(0, 0)), (0, Position2D(1, 0))))
    with pytest.raises(ParameterError):
        Trajectory(())


def test_stationary_statics():
    s = synth_imu(Trajectory.stationary((1, 2)), 3 * S)
    assert np.allclose(s.accel_mps2, (0, 0, 9.81), atol=1e-6)
    assert s.gyro_radps == (0.0, 0.0, 0.0)


def test_constant_velocity_has_no_linear_accel():
    b = synth_imu_batch(LINE, np.arange(1, 79) * 100_000)
    assert np.abs(b.linear_accel_mps2).max() <= 1e-6


def test_quarter_turn_integrates_to_half_pi():
    t = np.arange(0, 10 * S + 1, 10_000)
    b = synth_imu_batch(CORNER, t)
    turned = float(np.sum(b.gyro_radps[:, 2]) * 0.01)
    assert abs(turned - math.pi / 2) <= 0.05


def test_heading_follows_velocity():
    b = synth_imu_batch(CORNER, [2 * S, 8 * S])
    assert quaternion_yaw(b.orientation[0]) == pytest.approx(0.0, abs=1e-9)
    assert quaternion_yaw(b.orientation[1]) == pytest.approx(math.pi / 2, abs=1e-9)


def test_heading_held_while_still():
    traj = Trajectory(((0, Position2D(0, 0)), (S, Position2D(0, 1)), (3 * S, Position2D(0, 1))))
    b = synth_imu_batch(traj, [500_000, 2 * S])
    assert quaternion_yaw(b.orientation[1]) == pytest.approx(quaternion_yaw(b.orientation[0]))


def test_noise_uses_a_fixed_block():
    t = np.arange(10) * 10_000
    a = synth_imu_batch(LINE, t, noise=ImuNoise(0.1, 0.1, 0.1), rng=derive_stream(1, "imu"))
    rng = derive_stream(1, "imu")
    z = rng.generator.standard_normal((10, 9))
    clean = synth_imu_batch(LINE, t)
    assert np.allclose(a.accel_mps2 - clean.accel_mps2, 0.1 * z[:, :3])
    assert np.allclose(a.mag_uT - clean.mag_uT, 0.1 * z[:, 6:])


def test_dynamic_path_geometry():
    traj = dynamic_trajectory()
    assert position_at(traj, 0) == D1
    assert position_at(traj, 8 * S) == D3
    # constant speed: D2 is reached at the length-weighted fraction of 8 s
    leg1 = math.dist(D1, D2)
    total = leg1 + math.dist(D2, D3)
    t2 = round(8 * S * leg1 / total)
    assert position_error_xy(position_at(traj, t2), D2) < 1e-6


def position_error_xy(a, b):
    return math.hypot(a.x_m - b.x_m, a.y_m - b.y_m)


def test_checkpoint_dwell():
    traj = checkpoint_trajectory()
    for t in (0, 30 * S, 60 * S - 1):
        assert position_at(traj, t) == P1
    assert position_at(traj, 60 * S) == P2


coords = st.floats(-50, 50)
waypoint_lists = st.lists(st.tuples(st.integers(1, 5 * S), coords, coords), min_size=1, max_size=6)


def build(wps):
    t, out = 0, []
    for dt, x, y in wps:
        out.append((t, Position2D(x, y)))
        t += dt
    return Trajectory(tuple(out))


@given(waypoint_lists, st.lists(st.integers(-S, 40 * S), min_size=1, max_size=20))
def test_quaternion_unit_norm(wps, times):
    b = synth_imu_batch(build(wps), sorted(times))
    assert np.allclose(np.linalg.norm(b.orientation, axis=1), 1.0, atol=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(30_000, 9 * S))
def test_constant_velocity_accel_magnitude(vx, vy, t):
    traj = Trajectory(((0, Position2D(0, 0)), (10 * S, Position2D(10 * vx, 10 * vy))))
    s = synth_imu(traj, t)
    assert math.sqrt(sum(a * a for a in s.accel_mps2)) == pytest.approx(9.81, abs=1e-6)


@given(waypoint_lists, st.integers(0, 30 * S))
def test_position_is_continuous(wps, t):
    traj = build(wps)
    eps = 1e-3
    a, b = positions_at(traj, [t, t + eps])
    xy, ts = traj.xy, traj.times_us
    vmax = max([0.0] + [np.hypot(*(xy[i + 1] - xy[i])) / (ts[i + 1] - ts[i]) for i in range(len(ts) - 1)])
    assert np.hypot(*(a - b)) <= vmax * eps + 1e-12


def test_first_heading_defaults():
    assert first_heading(Trajectory.stationary((1, 1))) == 0.0
    wait_then_north = Trajectory(((0, Position2D(1, 1)), (S, Position2D(1, 1)), (2 * S, Position2D(1, 3))))
    assert first_heading(wait_then_north) == pytest.approx(math.pi / 2)


def test_no_turn_reported_at_the_start_of_a_walk():
    diagonal = Trajectory(((0, Position2D(0, 0)), (4 * S, Position2D(3, 3))))
    b = synth_imu_batch(diagonal, [0, 10_000])
    assert np.all(b.gyro_radps[:, 2] == 0.0)
    assert synth_imu_batch(diagonal, [0], initial_heading=0.0).gyro_radps[0, 2] != 0.0
