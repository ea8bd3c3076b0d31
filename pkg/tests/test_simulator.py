import numpy as np
import pytest

from imucal import geometry as geo
from imucal import simulator as sim
from imucal.errors import ConfigError, CsvFormatError, StructuralError

from conftest import SMALL_NOISE, small_rig, three_axis_trajectory


def _fd_rates(traj):
    """Central-difference body rate and acceleration from the attitude sequence."""
    q, dt = traj.q_wi, traj.dt
    dq = geo.quat_mul(geo.quat_conj(q[:-2]), q[2:])
    omega = geo.quat_log(dq) / (2 * dt)
    alpha = (traj.omega[2:] - traj.omega[:-2]) / (2 * dt)
    return omega, alpha


def _interior(traj, spec, margin=3):
    t = traj.t[1:-1]
    keep = np.ones(len(t), bool)
    for o in spec:
        for edge in (o.start, o.end):
            keep &= np.abs(t - edge) > margin * traj.dt
    return keep


def test_edge_case_profile():
    traj = sim.edge_case_trajectory()
    assert len(traj) == 6000 and traj.dt == pytest.approx(0.01)
    for t, e in ((0.25, [np.sin(np.pi * 0.25), 0, 0]), (20.3, [0, np.sin(2 * np.pi * 20.3), 0]),
                 (47.1, [0, 0, np.sin(3 * np.pi * 47.1)])):
        k = int(round(t / 0.01))
        assert geo.angle_between(traj.q_wi[k], geo.euler_xyz_to_quat(np.degrees(e))) < 1e-9
    # roll phase: body rate is the roll rate itself
    k = 25
    assert np.allclose(traj.omega[k], [np.pi * np.cos(np.pi * 0.25), 0, 0], atol=1e-12)


def test_zero_amplitude_profile():
    traj = sim.sinusoidal_euler_trajectory(2.0, 0.01, [sim.Oscillation(0, 2, "y", 0.0, 1.0)])
    assert np.array_equal(traj.omega, np.zeros_like(traj.omega))
    assert np.array_equal(traj.alpha, np.zeros_like(traj.alpha))
    assert np.allclose(traj.f0, [0, 0, 9.81], atol=1e-15)


def test_overlapping_intervals_rejected():
    with pytest.raises(ConfigError):
        sim.sinusoidal_euler_trajectory(3.0, 0.01, [sim.Oscillation(0, 2, "x", 1, 1), sim.Oscillation(1, 3, "y", 1, 1)])


def test_invalid_duration_rejected():
    with pytest.raises(ConfigError):
        sim.sinusoidal_euler_trajectory(0.0, 0.01, [])


def test_analytic_rates_match_finite_differences():
    # second-order convergence: halving dt quarters the central-difference error
    spec = [sim.Oscillation(0, 2, "x", 0.7, 0.8), sim.Oscillation(2, 4, "y", 0.9, 0.6),
            sim.Oscillation(4, 6, "z", 1.0, 0.5)]
    errs = []
    for dt in (0.01, 0.005):
        traj = sim.sinusoidal_euler_trajectory(6.0, dt, spec)
        w_fd, a_fd = _fd_rates(traj)
        keep = _interior(traj, spec)
        errs.append((np.abs(w_fd - traj.omega[1:-1])[keep].max(), np.abs(a_fd - traj.alpha[1:-1])[keep].max()))
    for coarse, fine in zip(*errs):
        assert coarse < 1e-2
        assert 3.5 < coarse / fine < 4.5


def test_combined_axes_rates():
    # all three angles active at once exercises the coupling terms
    spec = [sim.Oscillation(0, 3, "x", 0.5, 0.7)]
    traj = sim.sinusoidal_euler_trajectory(3.0, 0.001, spec)
    e = np.zeros((len(traj), 3))
    t = traj.t
    e[:, 0] = 0.5 * np.sin(2 * np.pi * 0.7 * t)
    e[:, 1] = 0.3 * np.cos(t)
    e[:, 2] = 0.4 * np.sin(1.3 * t)
    de = np.gradient(e, 0.001, axis=0, edge_order=2)
    dde = np.gradient(de, 0.001, axis=0, edge_order=2)
    de_a = np.stack([0.5 * 2 * np.pi * 0.7 * np.cos(2 * np.pi * 0.7 * t), -0.3 * np.sin(t), 0.52 * np.cos(1.3 * t)], 1)
    dde_a = np.stack([-0.5 * (2 * np.pi * 0.7) ** 2 * np.sin(2 * np.pi * 0.7 * t), -0.3 * np.cos(t),
                      -0.676 * np.sin(1.3 * t)], 1)
    omega, alpha = sim.euler_body_rates(e, de_a, dde_a)
    q = geo.euler_xyz_to_quat(np.degrees(e))
    w_fd = geo.quat_log(geo.quat_mul(geo.quat_conj(q[:-2]), q[2:])) / 0.002
    assert np.abs(w_fd - omega[1:-1]).max() < 1e-5
    a_fd = (omega[2:] - omega[:-2]) / 0.002
    assert np.abs(a_fd - alpha[1:-1]).max() < 1e-4
    assert np.allclose(de, de_a, atol=1e-4) and np.allclose(dde[2:-2], dde_a[2:-2], atol=1e-3)


def test_coincident_frames_give_identical_streams():
    imus = [sim.ImuExtrinsics(np.zeros(3), geo.IDENTITY, geo.IDENTITY)] * 2
    rig = sim.RigConfig(imus, SMALL_NOISE)
    data = sim.simulate(three_axis_trajectory(3.0), rig, noisy=False)
    assert np.array_equal(data.accel[:, 0], data.accel[:, 1])
    assert np.array_equal(data.gyro[:, 0], data.gyro[:, 1])


def test_forward_model():
    rig = small_rig(2, seed=4)
    traj = three_axis_trajectory(3.0)
    data = sim.simulate(traj, rig, noisy=False)
    for n, imu in enumerate(rig.imus):
        R, G = geo.quat_to_rot(imu.q), geo.quat_to_rot(imu.q_g)
        for k in (0, 117, 299):
            w, a = R @ traj.omega[k], R @ traj.alpha[k]
            acc = R @ traj.f0[k] - geo.skew(w) @ geo.skew(w) @ imu.p - geo.skew(a) @ imu.p
            assert np.allclose(data.gyro[k, n], G.T @ w, atol=1e-14)
            assert np.allclose(data.accel[k, n], acc, atol=1e-13)


def test_determinism_and_seed_dependence():
    rig, traj = small_rig(1), three_axis_trajectory(3.0)
    a, b = sim.simulate(traj, rig, seed=5), sim.simulate(traj, rig, seed=5)
    c = sim.simulate(traj, rig, seed=6)
    assert a.accel.tobytes() == b.accel.tobytes() and a.gyro.tobytes() == b.gyro.tobytes()
    assert not np.array_equal(a.accel, c.accel)


def test_streams_independent_of_imu_count():
    traj = three_axis_trajectory(3.0)
    two = sim.simulate(traj, small_rig(1, seed=2), seed=9)
    three = sim.simulate(traj, small_rig(2, seed=2), seed=9)
    # the extra IMU draws from its own streams; the first two IMUs are unchanged
    assert np.array_equal(two.accel, three.accel[:, :2])
    assert np.array_equal(two.ground_truth.bias_g, three.ground_truth.bias_g[:, :2])


def test_biases_start_at_zero_and_constant_without_walk():
    noise = sim.NoiseSpec(sigma_a=1e-2, sigma_ba=0.0, sigma_g=1e-3, sigma_bg=0.0, dt=0.01)
    rig = sim.RigConfig([sim.ImuExtrinsics(np.zeros(3), geo.IDENTITY, geo.IDENTITY)] * 2, noise)
    data = sim.simulate(three_axis_trajectory(3.0), rig, seed=1)
    assert np.array_equal(data.ground_truth.bias_a, np.zeros_like(data.ground_truth.bias_a))
    assert np.array_equal(data.ground_truth.bias_g, np.zeros_like(data.ground_truth.bias_g))


def test_white_noise_variance():
    noise = sim.NoiseSpec(sigma_a=2e-3, sigma_ba=0.0, sigma_g=1.7e-4, sigma_bg=0.0, dt=0.01)
    rig = sim.RigConfig([sim.ImuExtrinsics(np.zeros(3), geo.IDENTITY, geo.IDENTITY)] * 2, noise)
    traj = sim.sinusoidal_euler_trajectory(600.0, 0.01, [])
    noisy, clean = sim.simulate(traj, rig, seed=3), sim.simulate(traj, rig, noisy=False)
    ea = (noisy.accel - clean.accel).reshape(-1, 3)
    eg = (noisy.gyro - clean.gyro).reshape(-1, 3)
    assert len(ea) >= 1e5
    assert np.allclose(ea.var(axis=0) / (noise.sigma_a ** 2 / noise.dt), 1, atol=0.03)
    assert np.allclose(eg.var(axis=0) / (noise.sigma_g ** 2 / noise.dt), 1, atol=0.03)


def test_bias_walk_increment_variance():
    data = sim.simulate(sim.sinusoidal_euler_trajectory(400.0, 0.01, []), small_rig(1), seed=8)
    steps = np.diff(data.ground_truth.bias_a, axis=0).reshape(-1, 3)
    assert np.allclose(steps.var(axis=0) / (SMALL_NOISE.sigma_ba ** 2 * 0.01), 1, atol=0.03)


def test_noise_spec_validation():
    with pytest.raises(ConfigError):
        sim.NoiseSpec(sigma_a=-1, sigma_ba=0, sigma_g=0, sigma_bg=0, dt=0.01)
    with pytest.raises(ConfigError):
        sim.NoiseSpec(sigma_a=1, sigma_ba=0, sigma_g=0, sigma_bg=0, dt=0.0)


def test_rig_validation():
    with pytest.raises(ConfigError):
        sim.RigConfig([sim.ImuExtrinsics(np.zeros(3), geo.IDENTITY, geo.IDENTITY)], SMALL_NOISE)
    moved = sim.ImuExtrinsics(np.ones(3), geo.IDENTITY, geo.IDENTITY)
    with pytest.raises(ConfigError):
        sim.RigConfig([moved, moved], SMALL_NOISE)


def test_edge_case_rig():
    rig = sim.edge_case_rig()
    assert rig.n_imus == 4
    assert np.allclose(rig.positions(), [[0.2, 0, 0], [0, 0.2, 0], [0, 0, 0.2]])
    for q, R in zip(rig.orientations(), (np.diag([1, -1, -1]), np.diag([-1, 1, -1]), np.diag([-1, -1, 1]))):
        assert np.allclose(geo.quat_to_rot(q), R, atol=1e-15)


def test_misalignment_zero_stddev():
    q = sim.random_gyro_misalignment(0, 0.0, 4)
    assert np.allclose(q, np.tile(geo.IDENTITY, (4, 1)))


def test_misalignment_angle_statistics():
    q = sim.random_gyro_misalignment(12, 1.0, 10_000)
    ang = np.degrees(geo.rotation_angle(q))
    assert abs(np.sqrt(np.mean(ang ** 2)) - 1.0) < 0.05
    # axes are isotropic: the mean axis is close to zero
    axes = geo.quat_log(q) / np.radians(ang)[:, None]
    assert np.abs(axes.mean(axis=0)).max() < 0.05


def test_misalignment_is_seeded():
    assert np.array_equal(sim.random_gyro_misalignment(3, 1.0, 4), sim.random_gyro_misalignment(3, 1.0, 4))
    assert not np.array_equal(sim.random_gyro_misalignment(3, 1.0, 4), sim.random_gyro_misalignment(4, 1.0, 4))


def test_segments_drop_remainder():
    data = sim.simulate(three_axis_trajectory(2.5), small_rig(1))
    segs = data.segments(100)
    assert [s.index for s in segs] == [0, 1] and data.dropped_steps(100) == 50
    assert segs[1].start == 100 and np.array_equal(segs[1].gyro, data.gyro[100:200])
    with pytest.raises(ConfigError):
        data.segments(1)


# ---------------------------------------------------------------- CSV


def test_csv_round_trip(tmp_path):
    data = sim.simulate(three_axis_trajectory(1.0), small_rig(2), seed=2)
    path = tmp_path / "m.csv"
    sim.save_csv(data, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,imu_id,ax,ay,az,gx,gy,gz"
    assert len(lines) - 1 == data.n_steps * data.n_imus
    back = sim.load_csv(path)
    assert np.array_equal(back.t, data.t)
    assert np.array_equal(back.accel, data.accel) and np.array_equal(back.gyro, data.gyro)


def test_csv_header_mismatch(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,imu,ax,ay,az,gx,gy,gz\n0,0,1,2,3,4,5,6\n")
    with pytest.raises(CsvFormatError) as exc:
        sim.load_csv(path)
    assert exc.value.line == 1


def test_csv_malformed_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,imu_id,ax,ay,az,gx,gy,gz\n0,0,1,2,3,4,5,6\n0,1,1,2,x,4,5,6\n")
    with pytest.raises(CsvFormatError) as exc:
        sim.load_csv(path)
    assert exc.value.line == 3 and "line 3" in str(exc.value)


def test_csv_missing_pair(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("t,imu_id,ax,ay,az,gx,gy,gz\n0,0,1,2,3,4,5,6\n0,1,1,2,3,4,5,6\n0.01,0,1,2,3,4,5,6\n")
    with pytest.raises(StructuralError):
        sim.load_csv(path)


def test_csv_duplicate_pair(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("t,imu_id,ax,ay,az,gx,gy,gz\n0,0,1,2,3,4,5,6\n0,0,1,2,3,4,5,6\n")
    with pytest.raises(StructuralError):
        sim.load_csv(path)


def test_rig_json_round_trip(tmp_path):
    rig = small_rig(2, seed=1)
    sim.save_rig(rig, tmp_path / "rig.json")
    back = sim.load_rig(tmp_path / "rig.json")
    assert np.array_equal(back.positions(), rig.positions())
    assert np.array_equal(back.orientations(), rig.orientations())
    assert back.noise == rig.noise
