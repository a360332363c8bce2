import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_attitude.csvio import read_csv
from hybrid_attitude.exceptions import InvalidBounds, ScheduleOutOfRange
from hybrid_attitude.so3 import angle_axis_to_rotation, orthonormality_error, random_rotation
from hybrid_attitude.world import (
    GRAVITY,
    NoiseSpec,
    SamplingSchedule,
    WorldConstants,
    constant_rate,
    emit_events,
    emit_imu,
    figure_eight,
    generate_schedule,
    propagate_truth,
)

DT = 1 / 400


def test_zero_rate_keeps_attitude():
    R0 = angle_axis_to_rotation(0.4, [0, 0.6, 0.8])
    truth = propagate_truth(constant_rate([0, 0, 0], R0=R0), 2.0, DT)
    np.testing.assert_array_equal(truth.R, np.broadcast_to(R0, truth.R.shape))


def test_constant_axis_closed_form():
    c = 0.7
    truth = propagate_truth(constant_rate([0, 0, c]), 5.0, DT)
    expected = angle_axis_to_rotation(c * truth.t, np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(truth.R, expected, atol=1e-12)


def test_reference_truth_stays_orthonormal():
    truth = propagate_truth(figure_eight(), 60.0, DT)
    assert len(truth) == 24001
    assert orthonormality_error(truth.R).max() < 1e-9
    np.testing.assert_array_equal(truth.v, figure_eight().v_fn(truth.t))


def test_figure_eight_derivative_is_consistent():
    traj = figure_eight()
    t = np.linspace(0, 20, 801)
    h = 1e-5
    fd = (traj.v_fn(t + h) - traj.v_fn(t - h)) / (2 * h)
    exact = traj.vdot_fn(t)
    assert np.max(np.abs(fd - exact)) <= 1e-3 * np.max(np.abs(exact))


def test_hover_accelerometer_reads_minus_gravity():
    truth = propagate_truth(constant_rate([0, 0, 0]), 1.0, DT)
    imu = emit_imu(truth, constant_rate([0, 0, 0]), WorldConstants(), NoiseSpec())
    np.testing.assert_allclose(imu.accel, np.broadcast_to([0, 0, 9.81], imu.accel.shape), atol=1e-15)


def test_accelerometer_matches_analytic_model():
    traj, consts = figure_eight(), WorldConstants()
    truth = propagate_truth(traj, 10.0, DT)
    imu = emit_imu(truth, traj, consts, NoiseSpec())
    expected = np.einsum("nji,nj->ni", truth.R, traj.vdot_fn(truth.t) - GRAVITY)
    np.testing.assert_array_equal(imu.accel, expected)
    np.testing.assert_array_equal(imu.omega, traj.omega_fn(truth.t))
    # v' = R a + g
    recon = np.einsum("nij,nj->ni", truth.R, imu.accel) + GRAVITY
    np.testing.assert_allclose(recon, traj.vdot_fn(truth.t), atol=1e-6)


def test_noisy_streams_are_reproducible():
    traj, consts = figure_eight(), WorldConstants()
    truth = propagate_truth(traj, 2.0, DT)
    noise = NoiseSpec(0.01, 0.01, 0.1, 0.1, seed=7)
    a, b = emit_imu(truth, traj, consts, noise), emit_imu(truth, traj, consts, noise)
    np.testing.assert_array_equal(a.accel, b.accel)
    np.testing.assert_array_equal(a.omega, b.omega)
    times = generate_schedule(SamplingSchedule(0.09, 0.11, seed=3), 2.0)
    e1, e2 = emit_events(truth, consts, times, noise), emit_events(truth, consts, times, noise)
    np.testing.assert_array_equal(e1.v_m, e2.v_m)
    np.testing.assert_array_equal(e1.b, e2.b)
    other = emit_imu(truth, traj, consts, NoiseSpec(0.01, 0.01, 0.1, 0.1, seed=8))
    assert not np.array_equal(a.accel, other.accel)


def test_noise_has_requested_variance():
    traj, consts = constant_rate([0, 0, 0]), WorldConstants()
    truth = propagate_truth(traj, 50.0, DT)
    imu = emit_imu(truth, traj, consts, NoiseSpec(gyro_var=0.01, accel_var=0.1, seed=1))
    assert np.var(imu.omega) == pytest.approx(0.01, rel=0.03)
    assert np.var(imu.accel - [0, 0, 9.81]) == pytest.approx(0.1, rel=0.03)


def test_periodic_schedule():
    times = generate_schedule(SamplingSchedule(0.1, 0.1, "periodic"), 1.0)
    np.testing.assert_allclose(times, np.arange(1, 11) * 0.1, atol=1e-12)
    assert generate_schedule(SamplingSchedule(0.1, 0.1, "periodic"), 0.0).size == 0


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.01, 0.5),
    st.floats(1.0, 3.0),
    st.integers(0, 10_000),
    st.floats(2.0, 30.0),
)
def test_jittered_gaps_within_bounds(T_m, ratio, seed, t_end):
    s = SamplingSchedule(T_m, T_m * ratio, "jittered", seed)
    times = generate_schedule(s, t_end)
    assert times[0] <= s.T_M + 1e-12
    gaps = np.diff(times)
    assert np.all(gaps >= s.T_m - 1e-12) and np.all(gaps <= s.T_M + 1e-12)
    assert times[-1] <= t_end + 1e-9 and t_end - times[-1] < s.T_M


def test_reference_jitter_bounds():
    times = generate_schedule(SamplingSchedule(0.09, 0.11, "jittered", 0), 60.0)
    gaps = np.diff(np.concatenate([[0.0], times]))
    assert gaps.min() >= 0.09 and gaps.max() <= 0.11
    assert 540 <= len(times) <= 667


@pytest.mark.parametrize("T_m,T_M", [(0.0, 0.1), (-1.0, 0.1), (0.2, 0.1)])
def test_invalid_schedule_bounds(T_m, T_M):
    with pytest.raises(InvalidBounds):
        SamplingSchedule(T_m, T_M)


def test_events_identity_attitude():
    traj = constant_rate([0, 0, 0], velocity=[1.0, -2.0, 0.5])
    consts = WorldConstants(inertial_vectors=[[0.36, 0.64, 0.0], [1.0, 0.0, 0.0]])
    truth = propagate_truth(traj, 1.0, DT)
    ev = emit_events(truth, consts, [0.1234, 0.5, 0.9], NoiseSpec())
    np.testing.assert_allclose(ev.v_m, np.broadcast_to([1.0, -2.0, 0.5], (3, 3)))
    np.testing.assert_allclose(ev.b, np.broadcast_to(consts.inertial_vectors, (3, 2, 3)))


def test_events_preserve_vector_norm_and_match_truth():
    traj, consts = figure_eight(), WorldConstants()
    truth = propagate_truth(traj, 10.0, DT)
    times = generate_schedule(SamplingSchedule(0.09, 0.11, seed=4), 10.0)
    ev = emit_events(truth, consts, times, NoiseSpec())
    np.testing.assert_allclose(
        np.linalg.norm(ev.b, axis=-1), np.linalg.norm(consts.inertial_vectors[0]), rtol=1e-12
    )
    # off-grid event times interpolate along the truth rotation
    R, v = truth.at(times)
    np.testing.assert_allclose(np.einsum("kij,kj->ki", R, ev.v_m), v, atol=1e-12)


def test_events_outside_truth_raise():
    truth = propagate_truth(figure_eight(), 1.0, DT)
    with pytest.raises(ScheduleOutOfRange):
        emit_events(truth, WorldConstants(), [0.5, 1.5], NoiseSpec())


def test_truth_interpolation_hits_grid():
    truth = propagate_truth(figure_eight(), 1.0, DT)
    R, v = truth.at(truth.t[::37])
    np.testing.assert_allclose(R, truth.R[::37], atol=1e-14)
    np.testing.assert_allclose(v, truth.v[::37], atol=1e-14)


def test_world_constants_validation():
    with pytest.raises(ValueError):
        WorldConstants(g=[0, 0, 0])
    with pytest.raises(ValueError):
        WorldConstants(inertial_vectors=np.zeros((0, 3)))
    with pytest.raises(ValueError):
        NoiseSpec(gyro_var=-1.0)


def test_stream_csv_roundtrip(tmp_path):
    traj, consts = figure_eight(R0=random_rotation(np.random.default_rng(0))), WorldConstants()
    truth = propagate_truth(traj, 0.5, DT)
    imu = emit_imu(truth, traj, consts, NoiseSpec())
    ev = emit_events(truth, consts, [0.1, 0.2], NoiseSpec())
    header, cols = read_csv(truth.to_csv(tmp_path / "truth.csv"))
    assert header[:4] == ["t", "R_11", "R_12", "R_13"] and header[-3:] == ["v_x", "v_y", "v_z"]
    np.testing.assert_array_equal(cols["R_23"], truth.R[:, 1, 2])
    header, cols = read_csv(imu.to_csv(tmp_path / "imu.csv"))
    assert header == ["t", "omega_x", "omega_y", "omega_z", "a_x", "a_y", "a_z"]
    np.testing.assert_array_equal(cols["a_y"], imu.accel[:, 1])
    header, cols = read_csv(ev.to_csv(tmp_path / "events.csv"))
    assert header == ["t", "vm_x", "vm_y", "vm_z", "b1_x", "b1_y", "b1_z"]
    np.testing.assert_array_equal(cols["b1_x"], ev.b[:, 0, 0])
