"""
Observability conditions, closed-loop matrices and gain feasibility checks.

The linear error dynamics have an ``I_3``-Kronecker structure, so every check
here reduces to a 2x2 problem for the velocity/gravity pair plus a scalar for
the vector-estimate block.

Interval certification
----------------------
With ``E(tau) = I + A_bar tau`` the contraction matrix

    M(tau) = A_g^T E(tau)^T P E(tau) A_g - P

is a quadratic matrix polynomial ``M0 + tau M1 + tau^2 M2`` whose leading
coefficient ``M2 = A_g^T A_bar^T P A_bar A_g`` is positive semidefinite. For
any fixed ``x`` the scalar ``x^T M(tau) x`` is therefore convex in ``tau``, so
``M`` is negative definite on all of ``[T_m, T_M]`` as soon as it is negative
definite at the two endpoints. :func:`certify_lmi` only searches the
endpoints and :func:`verify_certificate` re-checks a grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import minimize

from .exceptions import Infeasible, InvalidBounds, KvOutOfRange
from .observers import GainSet
from .so3 import angle_axis_to_rotation, psi

LEMMA_CASE1 = "satisfied_case1"
LEMMA_CASE2 = "satisfied_case2"
LEMMA_FAIL = "not_satisfied"

_I3 = np.eye(3)
_NILPOTENT = np.array([[0.0, 1.0], [0.0, 0.0]])


# ---------------------------------------------------------------------------
# observability matrix


@dataclass(frozen=True)
class QMatrices:
    """
    Weighted direction matrix ``Q = sum rho_i r_i r_i^T + rho_g g g^T`` and
    ``Q_bar = tr(Q) I - Q`` with its ascending eigen-decomposition.
    """

    Q: NDArray
    Q_bar: NDArray
    eigenvalues: NDArray
    eigenvectors: NDArray
    rhos: NDArray
    rs: NDArray
    g: NDArray

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


def build_q(rhos, rs, g) -> QMatrices:
    """
    Assemble ``Q`` and ``Q_bar``.

    Parameters
    ----------
    rhos : sequence of float, length N + 1
        Vector weights followed by the gravity weight.
    rs : array-like, shape (N, 3)
        Inertial reference vectors.
    g : array-like, shape (3,)
        Gravity.
    """
    rhos = np.asarray(rhos, dtype=float).reshape(-1)
    rs = np.atleast_2d(np.asarray(rs, dtype=float))
    g = np.asarray(g, dtype=float).reshape(3)
    if rs.shape[1] != 3 or len(rhos) != rs.shape[0] + 1:
        raise ValueError("need N inertial vectors and N + 1 weights")
    if np.any(rhos < 0):
        raise ValueError("weights must be nonnegative")
    Q = np.einsum("i,ij,ik->jk", rhos[:-1], rs, rs) + rhos[-1] * np.outer(g, g)
    Q_bar = np.trace(Q) * _I3 - Q
    w, V = np.linalg.eigh(Q_bar)
    return QMatrices(Q, Q_bar, w, V, rhos, rs, g)


@dataclass(frozen=True)
class Lemma3Report:
    status: str
    min_eigenvalue: float
    distinct_eigenvalues: bool
    min_eigen_gap: float

    @property
    def satisfied(self) -> bool:
        return self.status != LEMMA_FAIL


def _non_collinear(a, b, tol) -> bool:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return False
    return np.linalg.norm(np.cross(a, b)) > tol * na * nb


def check_lemma3(q: QMatrices, tol: float = 1e-10) -> Lemma3Report:
    """
    Positive definiteness of ``Q_bar`` and which sufficient condition explains it.

    ``satisfied_case1``: two weighted reference vectors are non-collinear.
    ``satisfied_case2``: a weighted reference vector is non-collinear with a
    weighted gravity vector. Both statuses require ``lambda_min(Q_bar) > tol``
    (relative to ``lambda_max``), so the report always agrees with a direct
    eigenvalue check.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    w = q.eigenvalues
    scale = max(float(w[-1]), 1.0)
    gaps = np.diff(w)
    gap = float(np.min(gaps))
    distinct = bool(gap > tol * scale)
    pd = bool(w[0] > tol * scale)
    active = [r for rho, r in zip(q.rhos[:-1], q.rs) if rho > 0]
    status = LEMMA_FAIL
    if pd:
        pairs = any(
            _non_collinear(active[i], active[j], tol)
            for i in range(len(active))
            for j in range(i + 1, len(active))
        )
        with_g = q.rhos[-1] > 0 and any(_non_collinear(r, q.g, tol) for r in active)
        if pairs:
            status = LEMMA_CASE1
        elif with_g:
            status = LEMMA_CASE2
    return Lemma3Report(status, float(w[0]), distinct, gap)


# ---------------------------------------------------------------------------
# closed-loop matrices


@dataclass(frozen=True)
class LinearBlocks:
    """Error-system matrices for N reference vectors."""

    N: int
    A: NDArray
    C: NDArray
    K: NDArray
    A_bar: NDArray
    C_bar: NDArray
    K_bar: NDArray
    A_g: NDArray


def build_blocks(N: int, gains: GainSet) -> LinearBlocks:
    """
    Assemble ``A, C, K`` for ``(v_tilde, g_tilde)`` and the extended
    ``A_bar, C_bar, K_bar`` including the vector errors, with
    ``A_g = I - K_bar C_bar``.
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    A = np.kron(_NILPOTENT, _I3)
    C = np.hstack([_I3, np.zeros((3, 3))])
    K = np.vstack([gains.k_v * _I3, gains.k_g * _I3])
    n = 6 + 3 * N
    A_bar = np.zeros((n, n))
    A_bar[:6, :6] = A
    C_bar = np.zeros((3 + 3 * N, n))
    C_bar[:3, :6] = C
    C_bar[3:, 6:] = np.eye(3 * N)
    K_bar = np.zeros((n, 3 + 3 * N))
    K_bar[:6, :3] = K
    K_bar[6:, 3:] = gains.k_r * np.eye(3 * N)
    A_g = np.eye(n) - K_bar @ C_bar
    if np.any(A_bar @ A_bar != 0):
        raise AssertionError("A_bar must be nilpotent of order two")
    return LinearBlocks(N, A, C, K, A_bar, C_bar, K_bar, A_g)


def expm_abar(blocks: LinearBlocks, tau: float) -> NDArray:
    """``exp(A_bar tau) = I + A_bar tau`` (the series stops after two terms)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return np.eye(blocks.A_bar.shape[0]) + blocks.A_bar * tau


def jump_to_jump(blocks: LinearBlocks, tau: float) -> NDArray:
    """Map of the error from one post-jump instant to the next, gap `tau`."""
    return expm_abar(blocks, tau) @ blocks.A_g


def _reduced_map(k_v, k_g, tau):
    """2x2 factor of the velocity/gravity jump-to-jump map."""
    tau = np.asarray(tau, dtype=float)
    out = np.empty(tau.shape + (2, 2))
    out[..., 0, 0] = 1.0 - k_v - k_g * tau
    out[..., 0, 1] = tau
    out[..., 1, 0] = -k_g
    out[..., 1, 1] = 1.0
    return out


def lambda_pair(k_v: float, k_g: float, tau) -> tuple[NDArray, NDArray]:
    """
    Closed-form eigenvalues ``1 - (s +- sqrt(s^2 - 4 k_g tau)) / 2`` with
    ``s = k_g tau + k_v``; complex when the discriminant is negative.
    """
    tau = np.asarray(tau, dtype=float)
    s = k_g * tau + k_v
    root = np.sqrt((s * s - 4.0 * k_g * tau).astype(complex))
    return 1.0 - 0.5 * (s + root), 1.0 - 0.5 * (s - root)


def monodromy_eigs(gains: GainSet, tau: float, N: int = 1) -> NDArray:
    """
    Eigenvalues of the jump-to-jump map in closed form.

    The velocity/gravity pair appears with multiplicity 3 and ``1 - k_r``
    with multiplicity ``3 N``. Returned as a complex array sorted by
    (real, imag).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    lo, hi = lambda_pair(gains.k_v, gains.k_g, tau)
    vals = np.concatenate([np.repeat([lo, hi], 3), np.full(3 * N, 1.0 - gains.k_r, complex)])
    return np.sort_complex(vals)


def spectral_radius(gains: GainSet, tau) -> NDArray:
    """Largest eigenvalue modulus of the jump-to-jump map at each `tau`."""
    lo, hi = lambda_pair(gains.k_v, gains.k_g, tau)
    return np.maximum(np.maximum(np.abs(lo), np.abs(hi)), abs(1.0 - gains.k_r))


def _check_bounds(T_m, T_M):
    if not (T_m > 0 and T_m <= T_M):
        raise InvalidBounds(f"need 0 < T_m <= T_M, got T_m={T_m}, T_M={T_M}")


def spectral_radius_feasible(gains: GainSet, T_m: float, T_M: float, grid: int = 101) -> bool:
    """True iff the spectral radius stays below 1 on a uniform `tau` grid."""
    _check_bounds(T_m, T_M)
    if grid < 2:
        raise ValueError("grid needs at least two points")
    taus = np.linspace(T_m, T_M, grid)
    return bool(np.all(spectral_radius(gains, taus) < 1.0))


# ---------------------------------------------------------------------------
# closed-form sufficient bounds


def prop3_bound(k_v: float, T_M: float) -> float:
    """
    Largest admissible ``k_g`` for a given ``k_v``: ``(1 - sqrt(1 - k_v)) / T_M``.

    Raises
    ------
    KvOutOfRange
        Unless ``0 < k_v < 1``.
    """
    if not (0.0 < k_v < 1.0):
        raise KvOutOfRange(f"k_v must lie in (0, 1), got {k_v}")
    if not T_M > 0:
        raise InvalidBounds("T_M must be positive")
    return (1.0 - np.sqrt(1.0 - k_v)) / T_M


def prop3_check(gains: GainSet, T_M: float) -> bool:
    """``0 < k_r < 1``, ``0 < k_v < 1`` and ``0 < k_g < prop3_bound(k_v, T_M)``."""
    if not (0.0 < gains.k_r < 1.0 and 0.0 < gains.k_v < 1.0):
        return False
    return bool(0.0 < gains.k_g < prop3_bound(gains.k_v, T_M))


def real_eigenvalue_range(gains: GainSet, T_m: float, T_M: float, grid: int = 101) -> bool:
    """
    True iff ``(k_g tau + k_v)^2 >= 4 k_g tau`` on the whole interval, i.e. the
    velocity/gravity eigenvalues stay real.
    """
    taus = np.linspace(T_m, T_M, grid)
    s = gains.k_g * taus + gains.k_v
    return bool(np.all(s * s - 4.0 * gains.k_g * taus >= 0.0))


# ---------------------------------------------------------------------------
# Lyapunov certificate


@dataclass(frozen=True)
class LyapunovCertificate:
    """
    ``P = blockdiag(P2 kron I_3, p_r I_3N)`` with ``M(tau) <= -margin I`` at
    both endpoints of `tau_range`. ``P2`` is scaled to unit largest eigenvalue.
    """

    P: NDArray
    P2: NDArray
    p_r: float
    margin: float
    tau_range: tuple[float, float]
    gains: GainSet
    N: int


def _contraction_max_eig(P2, Phis):
    return max(np.linalg.eigvalsh(F.T @ P2 @ F - P2)[-1] for F in Phis)


def _sym2_max_eig(a, b, d):
    return 0.5 * (a + d) + np.sqrt(0.25 * (a - d) ** 2 + b * b)


def _disk_objective(x, y, Phis):
    """
    Endpoint objective for ``P2 = [[(1 + x)/2, y], [y, (1 - x)/2]]``.

    Trace-one matrices form the disk ``x^2 + 4 y^2 < 1``; the objective is a
    maximum of largest eigenvalues of matrices affine in ``P2`` and hence
    convex there. It is nonnegative on the boundary, where ``P2`` is singular.
    """
    p11, p22, p12 = 0.5 * (1 + x), 0.5 * (1 - x), y
    worst = np.full(np.shape(x), -np.inf)
    for F in Phis:
        f11, f12, f21, f22 = F[0, 0], F[0, 1], F[1, 0], F[1, 1]
        # F^T P F - P, entrywise
        m11 = f11 * (f11 * p11 + f21 * p12) + f21 * (f11 * p12 + f21 * p22) - p11
        m12 = f11 * (f12 * p11 + f22 * p12) + f21 * (f12 * p12 + f22 * p22) - p12
        m22 = f12 * (f12 * p11 + f22 * p12) + f22 * (f12 * p12 + f22 * p22) - p22
        worst = np.maximum(worst, _sym2_max_eig(m11, m12, m22))
    return np.where(x * x + 4 * y * y < 1.0, worst, np.inf)


def _trace_one(x, y):
    return np.array([[0.5 * (1 + x), y], [y, 0.5 * (1 - x)]])


def _search_disk(Phis, n=101, rounds=8):
    """
    Minimize the endpoint objective over trace-one ``P2``.

    A zooming grid finds the basin; SLSQP then solves the epigraph form
    ``min t`` subject to ``t I - M_i(P2) >= 0``, written through the 2x2
    principal minors so the constraints are smooth.
    """
    cx, cy, hx, hy = 0.0, 0.0, 1.0, 0.5
    best = (np.inf, 0.0, 0.0)
    for _ in range(rounds):
        X, Y = np.meshgrid(np.linspace(cx - hx, cx + hx, n), np.linspace(cy - hy, cy + hy, n))
        F = _disk_objective(X, Y, Phis)
        i = np.unravel_index(np.argmin(F), F.shape)
        if F[i] < best[0]:
            best = (float(F[i]), float(X[i]), float(Y[i]))
        cx, cy = best[1], best[2]
        hx, hy = hx * 0.25, hy * 0.25

    def minors(z):
        x, y, t = z
        P = _trace_one(x, y)
        out = [1.0 - x * x - 4.0 * y * y]
        for F in Phis:
            S = t * np.eye(2) - (F.T @ P @ F - P)
            out += [S[0, 0], S[1, 1], S[0, 0] * S[1, 1] - S[0, 1] ** 2]
        return np.array(out)

    z0 = np.array([best[1], best[2], best[0] + 1e-12])
    res = minimize(
        lambda z: z[2],
        z0,
        method="SLSQP",
        constraints=[{"type": "ineq", "fun": minors}],
        options={"ftol": 1e-16, "maxiter": 500},
    )
    cands = [_trace_one(best[1], best[2])]
    if np.all(np.isfinite(res.x)) and res.x[0] ** 2 + 4 * res.x[1] ** 2 < 1.0:
        cands.append(_trace_one(res.x[0], res.x[1]))
    return min(cands, key=lambda P: _contraction_max_eig(P, Phis))


def certify_lmi(
    gains: GainSet,
    N: int,
    T_m: float,
    T_M: float,
    eps_rel: float = 1e-8,
) -> LyapunovCertificate:
    """
    Search a block-structured ``P`` satisfying the contraction condition on
    ``[T_m, T_M]``.

    The vector-estimate block contributes ``((1 - k_r)^2 - 1) p_r``, which is
    negative iff ``0 < k_r < 2``. The velocity/gravity block is searched over
    trace-one 2x2 SPD matrices, where the endpoint maximum eigenvalue is a
    convex function of two parameters, by a zooming grid; discrete Lyapunov
    solutions at the endpoints and the midpoint are kept as fallbacks.

    Raises
    ------
    Infeasible
        If the best margin does not exceed ``eps_rel * ||P||``.
    InvalidBounds
        Unless ``0 < T_m <= T_M``.
    """
    _check_bounds(T_m, T_M)
    Phis = [_reduced_map(gains.k_v, gains.k_g, t) for t in (T_m, T_M)]
    r_margin = 1.0 - (1.0 - gains.k_r) ** 2
    if N > 0 and not r_margin > eps_rel:
        raise Infeasible(f"vector gain k_r={gains.k_r} does not contract (need 0 < k_r < 2)")

    candidates = [_search_disk(Phis)]
    for t in (T_m, 0.5 * (T_m + T_M), T_M):
        F = _reduced_map(gains.k_v, gains.k_g, t)
        if np.max(np.abs(np.linalg.eigvals(F))) < 1.0:
            X = solve_discrete_lyapunov(F.T, np.eye(2))
            if np.all(np.linalg.eigvalsh(X) > 0):
                candidates.append(X)
    best, best_val = None, np.inf
    for S in candidates:
        S = S / np.linalg.eigvalsh(S)[-1]
        val = _contraction_max_eig(S, Phis)
        if val < best_val:
            best, best_val = S, val

    margin = -best_val if N == 0 else min(-best_val, r_margin)
    if not margin > eps_rel:
        raise Infeasible(
            f"no certificate found on [{T_m}, {T_M}] (best endpoint eigenvalue {best_val:.3g})"
        )
    n = 6 + 3 * N
    P = np.zeros((n, n))
    P[:6, :6] = np.kron(best, _I3)
    P[6:, 6:] = np.eye(3 * N)
    return LyapunovCertificate(P, best, 1.0, float(margin), (float(T_m), float(T_M)), gains, N)


def contraction_matrix(cert: LyapunovCertificate, blocks: LinearBlocks, tau: float) -> NDArray:
    """``A_g^T E(tau)^T P E(tau) A_g - P``."""
    F = jump_to_jump(blocks, tau)
    return F.T @ cert.P @ F - cert.P


def verify_certificate(
    cert: LyapunovCertificate, blocks: LinearBlocks | None = None, grid: int = 101
) -> float:
    """
    Largest eigenvalue of the contraction matrix over a uniform grid of the
    certified range. The certificate is sound when this is at most
    ``-margin / 2``.
    """
    if blocks is None:
        blocks = build_blocks(cert.N, cert.gains)
    taus = np.linspace(*cert.tau_range, grid)
    return max(float(np.linalg.eigvalsh(contraction_matrix(cert, blocks, t))[-1]) for t in taus)


# ---------------------------------------------------------------------------
# equilibria of the attitude error


@dataclass(frozen=True)
class EquilibriaReport:
    """
    Attitude-error equilibria: the identity and a half-turn about each unit
    eigenvector of ``Q_bar``. `isolated` is False when eigenvalues repeat, in
    which case the half-turns form continua and only representatives are
    listed.
    """

    identity: NDArray
    undesired: list
    axes: NDArray
    eigenvalues: NDArray
    isolated: bool

    @property
    def all(self) -> list:
        return [self.identity] + list(self.undesired)


def enumerate_equilibria(q: QMatrices, tol: float = 1e-10) -> EquilibriaReport:
    """Identity plus ``R_a(pi, v)`` for the eigenvectors ``v`` of ``Q_bar``."""
    if not np.allclose(q.Q_bar, q.Q_bar.T, atol=1e-12 * max(1.0, np.abs(q.Q_bar).max())):
        raise ValueError("Q_bar must be symmetric")
    axes = q.eigenvectors.T.copy()
    undesired = [angle_axis_to_rotation(np.pi, a / np.linalg.norm(a)) for a in axes]
    scale = max(float(np.abs(q.eigenvalues).max()), 1.0)
    isolated = bool(np.min(np.diff(q.eigenvalues)) > tol * scale)
    return EquilibriaReport(np.eye(3), undesired, axes, q.eigenvalues.copy(), isolated)


def equilibrium_residual(q: QMatrices, R) -> float:
    """``||psi(Q R)||`` (zero at an equilibrium)."""
    return float(np.linalg.norm(psi(q.Q @ np.asarray(R, dtype=float))))
