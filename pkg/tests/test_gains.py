import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from hybrid_attitude.exceptions import Infeasible, InvalidBounds, KvOutOfRange
from hybrid_attitude.gains import (
    LEMMA_CASE1,
    LEMMA_CASE2,
    LEMMA_FAIL,
    build_blocks,
    build_q,
    certify_lmi,
    check_lemma3,
    contraction_matrix,
    enumerate_equilibria,
    equilibrium_residual,
    expm_abar,
    jump_to_jump,
    lambda_pair,
    monodromy_eigs,
    prop3_bound,
    prop3_check,
    real_eigenvalue_range,
    spectral_radius,
    spectral_radius_feasible,
    verify_certificate,
)
from hybrid_attitude.observers import GainSet
from hybrid_attitude.so3 import angle_axis_to_rotation, random_rotation

G = np.array([0.0, 0.0, -9.81])
R1 = np.array([0.36, 0.64, 0.0])
HYBRID = GainSet(15.0, 0.7, 4.0, 0.1)


# ---------------------------------------------------------------------------
# observability


def test_reference_configuration_is_observable():
    q = build_q([1.0, 1.0], [R1], G)
    w = np.linalg.eigvalsh(np.trace(q.Q) * np.eye(3) - q.Q)
    np.testing.assert_allclose(q.eigenvalues, w, rtol=1e-14)
    assert w[0] > 0 and np.all(np.diff(w) > 1e-6)
    rep = check_lemma3(q)
    assert rep.status == LEMMA_CASE2 and rep.distinct_eigenvalues


def test_two_orthogonal_vectors():
    q = build_q([1.0, 1.0, 0.0], [[1, 0, 0], [0, 1, 0]], G)
    np.testing.assert_allclose(q.Q_bar, np.diag([1.0, 1.0, 2.0]))
    rep = check_lemma3(q)
    assert rep.status == LEMMA_CASE1 and not rep.distinct_eigenvalues


def test_vector_along_gravity_is_not_observable():
    q = build_q([1.0, 1.0], [[0.0, 0.0, 2.0]], G)
    assert abs(q.lambda_min) < 1e-12
    assert check_lemma3(q).status == LEMMA_FAIL


def test_zero_weights():
    q = build_q([0.0, 0.0], [R1], G)
    np.testing.assert_array_equal(q.Q, np.zeros((3, 3)))
    np.testing.assert_array_equal(q.Q_bar, np.zeros((3, 3)))
    assert check_lemma3(q).status == LEMMA_FAIL


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lemma3_agrees_with_eigenvalue_check(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    rs = rng.normal(size=(n, 3))
    if rng.random() < 0.3:
        # collinear configurations
        rs = np.outer(rng.normal(size=n), G)
    rhos = rng.uniform(0, 2, n + 1) * (rng.random(n + 1) < 0.8)
    q = build_q(rhos, rs, G)
    rep = check_lemma3(q)
    pd = np.linalg.eigvalsh(q.Q_bar)[0] > 1e-10 * max(np.linalg.eigvalsh(q.Q_bar)[-1], 1.0)
    assert rep.satisfied == pd


def test_lemma3_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        check_lemma3(build_q([1.0, 1.0], [R1], G), tol=0.0)


# ---------------------------------------------------------------------------
# closed-loop matrices


@pytest.mark.parametrize("N", [0, 1, 3])
def test_blocks_structure(N):
    g = GainSet(1.0, 0.7, 4.0, 0.1, rho=(1.0,) * (N + 1) if N else (1.0, 1.0))
    b = build_blocks(N, g)
    n = 6 + 3 * N
    assert b.A_bar.shape == (n, n) and b.C_bar.shape == (3 + 3 * N, n)
    np.testing.assert_array_equal(b.A_bar @ b.A_bar, np.zeros((n, n)))
    np.testing.assert_array_equal(b.A_g, np.eye(n) - b.K_bar @ b.C_bar)
    np.testing.assert_array_equal(b.A_bar[:6, :6], b.A)
    if N == 0:
        np.testing.assert_array_equal(b.A_g, np.eye(6) - b.K @ b.C)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 50), st.floats(1e-3, 50))
def test_continuous_error_matrix_is_hurwitz(k_v, k_g):
    b = build_blocks(0, GainSet(1.0, k_v, k_g))
    assert np.linalg.eigvals(b.A - b.K @ b.C).real.max() < 0


@pytest.mark.parametrize("tau", [0.0, 0.05, 0.11, 0.5, 1.0])
def test_expm_abar_matches_series(tau):
    b = build_blocks(2, GainSet(1.0, 0.7, 4.0, 0.1, rho=(1.0, 1.0, 1.0)))
    series = np.eye(12)
    term = np.eye(12)
    for k in range(1, 20):
        term = term @ (b.A_bar * tau) / k
        series = series + term
    np.testing.assert_allclose(expm_abar(b, tau), series, atol=1e-13)
    np.testing.assert_allclose(expm_abar(b, tau), expm(b.A_bar * tau), atol=1e-13)


def test_expm_abar_derivative_and_domain():
    b = build_blocks(1, HYBRID)
    tau, h = 0.3, 1e-6
    fd = (expm_abar(b, tau + h) - expm_abar(b, tau)) / h
    np.testing.assert_allclose(fd, b.A_bar @ expm_abar(b, tau), atol=1e-8)
    np.testing.assert_array_equal(expm_abar(b, 0.0), np.eye(9))
    with pytest.raises(ValueError):
        expm_abar(b, -0.1)


# ---------------------------------------------------------------------------
# monodromy eigenvalues


def test_monodromy_matches_eigensolver_random():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        N = int(rng.integers(1, 3))
        g = GainSet(1.0, rng.uniform(0, 2), rng.uniform(0, 20), rng.uniform(0, 2), rho=(1.0,) * (N + 1))
        tau = rng.uniform(1e-3, 1.0)
        ref = list(np.linalg.eigvals(jump_to_jump(build_blocks(N, g), tau)))
        # compare as multisets by greedy nearest matching
        for lam in monodromy_eigs(g, tau, N):
            i = int(np.argmin(np.abs(np.asarray(ref) - lam)))
            worst = max(worst, abs(ref.pop(i) - lam))
        assert not ref
    assert worst < 1e-10


def test_reference_gains_complex_modulus():
    vals = monodromy_eigs(HYBRID, 0.11)
    pair = vals[np.abs(vals.imag) > 0]
    assert len(pair) == 6
    np.testing.assert_allclose(np.abs(pair), np.sqrt(0.3), atol=1e-12)
    np.testing.assert_allclose(np.sort(np.abs(vals))[:6], np.sqrt(1 - HYBRID.k_v), atol=1e-12)
    assert np.sum(np.isclose(vals, 0.9)) == 3


def test_decoupled_limit():
    lo, hi = lambda_pair(0.3, 0.0, 0.1)
    np.testing.assert_allclose(sorted([lo.real, hi.real]), [0.7, 1.0], atol=1e-15)


def test_spectral_radius_feasibility():
    assert spectral_radius_feasible(HYBRID, 0.09, 0.11)
    np.testing.assert_allclose(spectral_radius(HYBRID, 0.11), 0.9)
    assert not spectral_radius_feasible(GainSet(1.0, 0.7, 4.0, 2.0), 0.09, 0.11)
    assert not spectral_radius_feasible(GainSet(1.0, 0.0, 4.0, 0.1), 0.09, 0.11)
    assert not spectral_radius_feasible(GainSet(1.0, 0.0, 0.5, 0.1), 0.09, 0.11)
    with pytest.raises(InvalidBounds):
        spectral_radius_feasible(HYBRID, 0.2, 0.1)
    with pytest.raises(ValueError):
        spectral_radius_feasible(HYBRID, 0.09, 0.11, grid=1)


# ---------------------------------------------------------------------------
# closed-form bounds


def test_prop3_bound_values():
    assert prop3_bound(0.7, 0.11) == pytest.approx((1 - np.sqrt(0.3)) / 0.11, rel=1e-15)
    assert prop3_bound(0.7, 0.11) == pytest.approx(4.1116, abs=1e-4)
    assert prop3_bound(0.19, 0.1) == pytest.approx(1.0, rel=1e-14)
    assert prop3_bound(1 - 1e-12, 0.1) == pytest.approx(10.0, rel=1e-5)
    assert prop3_check(HYBRID, 0.11)
    assert not prop3_check(GainSet(1.0, 0.7, 4.2, 0.1), 0.11)
    assert not prop3_check(GainSet(1.0, 0.7, 4.0, 1.0), 0.11)


@pytest.mark.parametrize("k_v", [0.0, 1.0, -0.1, 1.5])
def test_prop3_rejects_kv(k_v):
    with pytest.raises(KvOutOfRange):
        prop3_bound(k_v, 0.1)


def test_reference_gains_have_complex_branch():
    # the bounds hold while the discriminant is negative near T_M
    assert prop3_check(HYBRID, 0.11)
    assert not real_eigenvalue_range(HYBRID, 0.09, 0.11)


# ---------------------------------------------------------------------------
# certificate


def test_reference_certificate():
    cert = certify_lmi(HYBRID, 1, 0.09, 0.11)
    assert cert.margin > 0
    assert np.linalg.eigvalsh(cert.P)[0] > 0
    np.testing.assert_allclose(cert.P, cert.P.T)
    b = build_blocks(1, HYBRID)
    for tau in (0.09, 0.11):
        assert np.linalg.eigvalsh(contraction_matrix(cert, b, tau))[-1] <= -cert.margin * (1 - 1e-9)
    assert verify_certificate(cert, b, grid=100) <= -cert.margin / 2


def test_certificate_holds_between_endpoints():
    # the contraction bound is convex in tau: a fine grid never beats the endpoints
    cert = certify_lmi(HYBRID, 1, 0.09, 0.11)
    b = build_blocks(1, HYBRID)
    ends = max(np.linalg.eigvalsh(contraction_matrix(cert, b, t))[-1] for t in (0.09, 0.11))
    inner = [np.linalg.eigvalsh(contraction_matrix(cert, b, t))[-1] for t in np.linspace(0.09, 0.11, 1001)]
    assert max(inner) <= ends + 1e-15


def test_certificate_infeasible_cases():
    with pytest.raises(Infeasible):
        certify_lmi(GainSet(1.0, 0.7, 4.0, 2.0), 1, 0.09, 0.11)
    with pytest.raises(Infeasible):
        certify_lmi(GainSet(1.0, 0.0, 4.0, 0.1), 1, 0.09, 0.11)
    with pytest.raises(InvalidBounds):
        certify_lmi(HYBRID, 1, 0.0, 0.11)


def test_certificate_for_pure_velocity_block():
    cert = certify_lmi(HYBRID, 0, 0.09, 0.11)
    assert cert.P.shape == (6, 6) and verify_certificate(cert) <= -cert.margin / 2


def test_bounds_without_common_certificate():
    # passes the closed-form bounds and the spectral test, yet no quadratic
    # certificate exists on this wide interval
    g = GainSet(1.0, 0.06504793790627023, 0.012974488428143657, 0.229)
    T_m, T_M = 0.6595070787196222, 1.9367813060384158
    assert prop3_check(g, T_M)
    assert spectral_radius_feasible(g, T_m, T_M)
    with pytest.raises(Infeasible):
        certify_lmi(g, 1, T_m, T_M)


def test_counterexample_against_sdp_oracle():
    cp = pytest.importorskip("cvxpy")
    from hybrid_attitude.gains import _reduced_map

    k_v, k_g = 0.06504793790627023, 0.012974488428143657
    P = cp.Variable((2, 2), symmetric=True)
    t = cp.Variable()
    cons = [P >> 1e-3 * np.eye(2), cp.trace(P) == 1]
    for tau in (0.6595070787196222, 1.9367813060384158):
        F = _reduced_map(k_v, k_g, tau)
        cons.append(F.T @ P @ F - P << t * np.eye(2))
    cp.Problem(cp.Minimize(t), cons).solve()
    assert t.value > 0


# ---------------------------------------------------------------------------
# equilibria


def test_equilibria_axis_aligned():
    # Q = diag(2, 1, 0) gives Q_bar = 3 I - Q = diag(1, 2, 3)
    rs = np.eye(3)
    q = build_q([2.0, 1.0, 0.0, 0.0], rs, G)
    np.testing.assert_allclose(q.Q_bar, np.diag([1.0, 2.0, 3.0]))
    rep = enumerate_equilibria(q)
    assert rep.isolated and len(rep.undesired) == 3
    for i, R in enumerate(rep.undesired):
        e = np.zeros(3)
        e[i] = 1.0
        np.testing.assert_allclose(R, angle_axis_to_rotation(np.pi, e), atol=1e-15)
    for R in rep.all:
        assert equilibrium_residual(q, R) < 1e-12


def test_reference_equilibria():
    q = build_q([1.0, 1.0], [R1], G)
    rep = enumerate_equilibria(q)
    assert rep.isolated
    for R in rep.all:
        assert equilibrium_residual(q, R) < 1e-12
    # a generic rotation is not an equilibrium
    assert equilibrium_residual(q, random_rotation(np.random.default_rng(0))) > 1e-3


def test_repeated_eigenvalue_flag():
    q = build_q([1.0, 1.0, 0.0], [[1, 0, 0], [0, 1, 0]], G)
    rep = enumerate_equilibria(q)
    assert not rep.isolated
    for R in rep.all:
        assert equilibrium_residual(q, R) < 1e-12
