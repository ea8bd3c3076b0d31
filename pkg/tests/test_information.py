import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imucal import _banded
from imucal import estimation as est
from imucal import information as info
from imucal import simulator as sim
from imucal.errors import UnobservableError
from imucal.state import CalibrationState

from conftest import dense_fisher, ridge_oracle, small_instance, small_rig


def _rel(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


def test_segment_fisher_matches_explicit_stacking():
    st_, segs, noise, _ = small_instance(1, 3)
    A, Htp, D = info.segment_fisher(segs[0], st_, noise)
    J = est.jacobian(est.assemble(segs[:1], st_, noise), st_).toarray()
    H = J.T @ J
    P = st_.theta_dim
    assert _rel(A, H[:P, :P]) < 1e-12
    assert _rel(Htp, H[:P, P:]) < 1e-12
    assert _rel(D.matvec(np.eye(D.n)), H[P:, P:]) < 1e-12


def test_nuisance_block_is_banded():
    st_, segs, noise, _ = small_instance(1, 6)
    _, _, D = info.segment_fisher(segs[0], st_, noise)
    Hd = D.matvec(np.eye(D.n))
    i, j = np.nonzero(Hd)
    assert np.abs(i - j).max() == D.d
    assert np.allclose(Hd, Hd.T)


def test_zero_coupling_returns_theta_block():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 6))
    A = X @ X.T
    Y = rng.normal(size=(8, 8))
    D = Y @ Y.T + np.eye(8)
    assert np.array_equal(info.marginalize_segment(A, np.zeros((6, 8)), D), A)
    band = _banded.BandedNuisance(D.reshape(1, 8, 8), np.zeros((0, 8)))
    assert np.allclose(info.marginalize_segment(A, np.zeros((6, 8)), band), A, atol=0)


def test_banded_and_dense_marginal_agree():
    st_, segs, noise, _ = small_instance(2, 6, seed=4)
    A, Htp, D = info.segment_fisher(segs[1], st_, noise)
    dense = info.marginalize_segment(A, Htp, D.matvec(np.eye(D.n)))
    # the Schur difference cancels about one digit of H_ΘΘ
    assert _rel(info.marginalize_segment(A, Htp, D), dense) < 1e-7


def test_marginal_matches_full_inverse_ridge_oracle():
    st_, segs, noise, _ = small_instance(1, 5)
    schur, dense = ridge_oracle(st_, segs, noise)
    assert _rel(schur, dense) < 1e-8


def test_copies_of_a_segment_add():
    st_, segs, noise, _ = small_instance(1, 5)
    H1 = info.segment_marginal(segs[0], st_, noise)
    acc = info.MarginalInfo.empty(st_.theta_dim).add(0, H1).add(1, H1)
    assert np.allclose(acc.H, 2 * H1, rtol=0, atol=0)
    # re-adding the same index replaces its contribution
    acc.add(1, H1)
    assert np.allclose(acc.H, 2 * H1) and acc.segments == [0, 1]


def test_covariance_of_scaled_identity():
    d = 7
    sigma, logdet = info.marginal_covariance(2 * np.eye(d))
    assert np.allclose(sigma, 0.5 * np.eye(d), atol=1e-8)
    assert logdet == pytest.approx(-d * np.log(2), abs=1e-7)


def test_unobservable_raises_with_basis():
    H = np.diag([1.0, 2.0, 0.0])
    with pytest.raises(UnobservableError) as exc:
        info.marginal_covariance(H)
    basis = exc.value.null_basis
    assert basis.shape == (3, 1) and abs(abs(basis[2, 0]) - 1) < 1e-12
    assert info.information_scalar(np.zeros((3, 3))) == -np.inf


def test_single_axis_rotation_unobservable():
    rig = small_rig(1, seed=1)
    traj = sim.sinusoidal_euler_trajectory(2.0, 0.01, [sim.Oscillation(0, 2, "z", 1.0, 1.0)])
    data = sim.simulate(traj, rig, noisy=False)
    st_ = CalibrationState.from_rig(rig, alpha_init=traj.alpha)
    H = info.segments_information(data.segments(100), st_, rig.noise)
    with pytest.raises(UnobservableError) as exc:
        info.marginal_covariance(H)
    assert exc.value.null_basis.shape[1] >= 1


def test_three_axis_rotation_observable():
    st_, segs, noise, _ = small_instance(2, 100, n_segments=3, seed=2)
    H = info.segments_information(segs, st_, noise)
    sigma, _ = info.marginal_covariance(H)
    assert np.all(np.linalg.eigvalsh(sigma) > 0)


def test_logdet_matches_dense_determinant():
    rng = np.random.default_rng(5)
    for _ in range(10):
        X = rng.normal(size=(9, 9))
        H = X @ X.T + 0.1 * np.eye(9)
        logdet, _ = info.log_det_information(H)
        eps = info.THETA_JITTER * np.trace(H) / 9
        assert logdet == pytest.approx(np.log(np.linalg.det(H + eps * np.eye(9))), abs=1e-10)


def test_utility_examples():
    assert info.utility(1.3, 1.3) == 0
    prior = np.log(4.0) + np.log(1.0)
    post = 0.0
    assert info.utility(prior, post) == pytest.approx(0.5 * np.log(4), abs=1e-15)
    assert info.utility(prior, post) == pytest.approx(0.6931, abs=1e-4)
    d = 5
    S = np.diag(np.arange(1.0, d + 1))
    lp = np.linalg.slogdet(S)[1]
    lq = np.linalg.slogdet(S / 2)[1]
    assert info.utility(lp, lq) == pytest.approx(d / 2 * np.log(2), abs=1e-12)
    assert info.utility(np.inf, 3.0) == np.inf


def test_information_scalar_doubling_and_permutation():
    st_, segs, noise, _ = small_instance(1, 100, n_segments=3, seed=3)
    H = info.segments_information(segs, st_, noise).H
    base = info.information_scalar(H)
    p = st_.theta_dim
    # the trace-relative jitter scales too, so doubling is exact up to rounding
    assert info.information_scalar(2 * H) == pytest.approx(base + p / 2 * np.log(2), rel=1e-9)
    perm = np.random.default_rng(0).permutation(p)
    assert info.information_scalar(H[np.ix_(perm, perm)]) == pytest.approx(base, rel=1e-9)


def test_information_distribution_differs_by_axis(edge_noisy):
    st_ = CalibrationState.from_rig(edge_noisy.ground_truth.rig).extrinsics_only()
    from imucal.initialization import init_angular_acceleration
    st_.alpha_init = init_angular_acceleration(edge_noisy.gyro[:, 0], 0.01)
    segs = edge_noisy.segments(100)
    roll = [info.information_scalar(info.segment_marginal(s, st_, sim.EDGE_CASE_NOISE)) for s in segs[5:8]]
    yaw = [info.information_scalar(info.segment_marginal(s, st_, sim.EDGE_CASE_NOISE)) for s in segs[45:48]]
    assert np.all(np.isfinite(roll + yaw))
    assert abs(np.mean(roll) - np.mean(yaw)) > 1.0


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8), st.integers(0, 3))
def test_utility_nonnegative_for_psd_increments(seed, dim, rank_def):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(dim, dim))
    prior = X @ X.T + 1e-3 * np.eye(dim)
    r = max(dim - rank_def, 0)
    Y = rng.normal(size=(dim, r)) * 10.0 ** rng.uniform(-6, 3)
    post = prior + Y @ Y.T
    lp = -info.log_det_information(prior)[0]
    lq = -info.log_det_information(post)[0]
    assert info.utility(lp, lq) >= -1e-9
