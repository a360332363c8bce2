"""
Velocity-aided attitude observers.

Three estimators share one integration engine:

* :class:`ContinuousObserver` - gravity-aided observer driven by velocity and
  vector measurements, either available at every IMU sample
  (``measurement="continuous"``) or held between arrivals
  (``measurement="zoh"``).
* :class:`ReducedObserver` - the same design with the gravity estimate replaced
  by ``k_v (R_hat v_m - v_hat)``.
* :class:`HybridObserver` - flows on IMU data between arrivals and jumps its
  linear states when a measurement arrives; the attitude is never reset.

Internally the linear states are carried in the estimated body frame
(``w = R_hat^T v_hat``, ``h = R_hat^T g_hat``, ``s_i = R_hat^T r_hat_i``).
In those coordinates the innovation drops out of the linear dynamics, which
are then driven by the IMU alone; each IMU interval is integrated in a frame
rotating at the interval's mean rate with the accelerometer (and, in
continuous mode, velocity) samples interpolated by a cubic through the four
neighbouring samples. Attitude is advanced as ``exp(phi) R_hat exp(dt
omega_bar)``: ``phi`` solves the correction dynamics linearised about the step
start, with the innovation drifting linearly, in closed form through a matrix
exponential. Stiff continuous-time gains are split into sub-steps. The estimate
stays on SO(3) exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    check_events,
    check_imu,
    check_positive,
    check_rotation,
    check_vector,
)
from .exceptions import TimerNotExpired
from .so3 import angle_axis_to_rotation, distance_to_identity, exp_so3, skew
from .world import EventLog, ImuLog, MeasurementEvent, SensorFrame, WorldConstants

TIMER_TOL = 1e-9
STIFF_STEP = 1.25
_TINY = 1e-12


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class GainSet:
    """
    Observer gains.

    `rho` holds the N vector weights followed by the gravity weight.
    """

    k_o: float
    k_v: float
    k_g: float
    k_r: float = 0.0
    rho: tuple = (1.0, 1.0)

    def __post_init__(self):
        check_positive(self.k_o, "k_o")
        for name in ("k_v", "k_g", "k_r"):
            check_positive(getattr(self, name), name, allow_zero=True)
        rho = tuple(float(r) for r in np.atleast_1d(self.rho))
        if len(rho) < 2:
            raise ValueError("rho needs N >= 1 vector weights plus the gravity weight")
        if any(r < 0 or not np.isfinite(r) for r in rho):
            raise ValueError("rho entries must be nonnegative")
        if not any(r > 0 for r in rho):
            raise ValueError("at least one rho must be positive")
        object.__setattr__(self, "rho", rho)

    @property
    def N(self) -> int:
        return len(self.rho) - 1

    @property
    def rho_vectors(self) -> NDArray:
        return np.asarray(self.rho[:-1])

    @property
    def rho_gravity(self) -> float:
        return self.rho[-1]

    def require(self, *names):
        for name in names:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0 for this observer")


@dataclass
class EstimatorState:
    """
    Observer state in inertial coordinates.

    Arrays may carry leading batch dimensions: ``R_hat`` is ``(..., 3, 3)``,
    ``v_hat`` and ``g_hat`` are ``(..., 3)`` and ``r_hat`` is ``(..., N, 3)``.
    """

    R_hat: NDArray
    v_hat: NDArray
    g_hat: NDArray
    r_hat: NDArray

    @classmethod
    def initial(cls, R_hat, N: int) -> "EstimatorState":
        """Given attitude with zero velocity, gravity and vector estimates."""
        R_hat = np.asarray(R_hat, dtype=float)
        batch = R_hat.shape[:-2]
        return cls(R_hat, np.zeros(batch + (3,)), np.zeros(batch + (3,)), np.zeros(batch + (N, 3)))

    def copy(self) -> "EstimatorState":
        return EstimatorState(
            self.R_hat.copy(), self.v_hat.copy(), self.g_hat.copy(), self.r_hat.copy()
        )


@dataclass
class TimerState:
    tau: float


@dataclass(frozen=True)
class HybridTime:
    t: float
    j: int


@dataclass
class ErrorState:
    """``R_tilde = R R_hat^T`` and the linear errors ``x - R R_hat^T x_hat``."""

    R_tilde: NDArray
    v_tilde: NDArray
    g_tilde: NDArray
    r_tilde: NDArray

    @property
    def zeta(self) -> NDArray:
        return np.concatenate([self.v_tilde, self.g_tilde], axis=-1)

    @property
    def zeta_bar(self) -> NDArray:
        r = self.r_tilde.reshape(self.r_tilde.shape[:-2] + (-1,))
        return np.concatenate([self.v_tilde, self.g_tilde, r], axis=-1)


@dataclass
class HybridTrace:
    """
    Samples indexed by hybrid time.

    Each row is either the end of a flow segment (``kind == "flow"``) or the
    state right after a jump (``kind == "jump"``). The sample preceding a jump
    row is the pre-jump state at the same ``t``.
    """

    t: NDArray
    j: NDArray
    kind: NDArray
    tau: NDArray
    R_hat: NDArray
    v_hat: NDArray
    g_hat: NDArray
    r_hat: NDArray
    observer: str = ""

    def __len__(self):
        return len(self.t)

    @property
    def is_jump(self) -> NDArray:
        return self.kind == "jump"

    def state(self, i: int) -> EstimatorState:
        return EstimatorState(self.R_hat[i], self.v_hat[i], self.g_hat[i], self.r_hat[i])

    def hybrid_times(self) -> list[HybridTime]:
        return [HybridTime(float(t), int(j)) for t, j in zip(self.t, self.j)]


# ---------------------------------------------------------------------------
# innovation terms and error coordinates


def _cross(a, b):
    """Cross product along the last axis; ``np.cross`` is slow on 3-vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def _rotate_rows(R, X):
    """Apply ``R`` to every row of ``X`` (``(..., N, 3)``)."""
    return np.matmul(X, np.swapaxes(R, -1, -2))


def _sigma(gains: GainSet, consts: WorldConstants, r_hat, g_hat):
    rho = gains.rho_vectors
    terms = _cross(consts.inertial_vectors, r_hat)
    return -np.einsum("n,...ni->...i", rho, terms) - gains.rho_gravity * _cross(
        consts.g, g_hat
    )


def innovation_continuous(state: EstimatorState, b, consts: WorldConstants, gains: GainSet):
    """
    ``sigma = -sum_i rho_i r_i x (R_hat b_i) - rho_{N+1} g x g_hat``.

    `b` holds the N body-frame vector measurements as rows.
    """
    b = np.asarray(b, dtype=float)
    if b.shape[-2:] != (consts.N, 3):
        raise ValueError(f"expected {consts.N} vector measurements")
    return _sigma(gains, consts, _rotate_rows(state.R_hat, b), state.g_hat)


def innovation_hybrid(state: EstimatorState, consts: WorldConstants, gains: GainSet):
    """Innovation built from the internal estimates ``r_hat_i`` and ``g_hat`` only."""
    return _sigma(gains, consts, state.r_hat, state.g_hat)


def gamma(R_tilde, consts: WorldConstants, gains: GainSet) -> NDArray:
    """``[0_3, rho_{N+1} g^x R_tilde^T]``, shape ``(..., 3, 6)``."""
    R_tilde = np.asarray(R_tilde, dtype=float)
    right = gains.rho_gravity * skew(consts.g) @ np.swapaxes(R_tilde, -1, -2)
    return np.concatenate([np.zeros_like(right), right], axis=-1)


def gamma_bar(R_tilde, consts: WorldConstants, gains: GainSet) -> NDArray:
    """``[Gamma(R_tilde), rho_1 r_1^x R_tilde^T, ...]``, shape ``(..., 3, 3N + 6)``."""
    R_tilde = np.asarray(R_tilde, dtype=float)
    Rt = np.swapaxes(R_tilde, -1, -2)
    blocks = [gamma(R_tilde, consts, gains)]
    for rho_i, r_i in zip(gains.rho_vectors, consts.inertial_vectors):
        blocks.append(rho_i * skew(r_i) @ Rt)
    return np.concatenate(blocks, axis=-1)


def error_state(truth, state: EstimatorState, consts: WorldConstants) -> ErrorState:
    """
    Error coordinates from a truth pair ``(R, v)`` and an estimate.

    Broadcasts over leading dimensions of both.
    """
    R, v = truth
    R = np.asarray(R, dtype=float)
    v = np.asarray(v, dtype=float)
    R_tilde = R @ np.swapaxes(state.R_hat, -1, -2)
    v_tilde = v - np.einsum("...ij,...j->...i", R_tilde, state.v_hat)
    g_tilde = consts.g - np.einsum("...ij,...j->...i", R_tilde, state.g_hat)
    r_tilde = consts.inertial_vectors - _rotate_rows(R_tilde, state.r_hat)
    return ErrorState(R_tilde, v_tilde, g_tilde, r_tilde)


# ---------------------------------------------------------------------------
# integration kernel (body-frame coordinates)


@dataclass
class _Body:
    R: NDArray
    w: NDArray
    h: NDArray
    s: NDArray

    @classmethod
    def from_state(cls, state: EstimatorState) -> "_Body":
        Rt = np.swapaxes(state.R_hat, -1, -2)
        return cls(
            np.array(state.R_hat, dtype=float),
            np.einsum("...ij,...j->...i", Rt, state.v_hat),
            np.einsum("...ij,...j->...i", Rt, state.g_hat),
            np.matmul(state.r_hat, state.R_hat),
        )

    def to_state(self) -> EstimatorState:
        return EstimatorState(
            self.R.copy(),
            np.einsum("...ij,...j->...i", self.R, self.w),
            np.einsum("...ij,...j->...i", self.R, self.h),
            _rotate_rows(self.R, self.s),
        )


def _linear_rk4(w, h, dt, q, m, k_v, k_g, has_g):
    """
    Classical RK4 for the linear states in the rotating interval frame.

    ``z' = q + [y] + k_v (m - z)``, ``y' = k_g (m - z)`` with inputs sampled at
    ``0, dt/2, dt``. With zero feedback gains this reduces to Simpson's rule.
    """
    if m is None:
        m = (0.0, 0.0, 0.0)

    def f(i, z, y):
        e = m[i] - z
        dz = q[i] + k_v * e
        if has_g:
            dz = dz + y
        return dz, k_g * e

    k1z, k1y = f(0, w, h)
    k2z, k2y = f(1, w + 0.5 * dt * k1z, h + 0.5 * dt * k1y)
    k3z, k3y = f(1, w + 0.5 * dt * k2z, h + 0.5 * dt * k2y)
    k4z, k4y = f(2, w + dt * k3z, h + dt * k3y)
    z = w + dt / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
    y = h + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
    return z, y


class _Dynamics:
    """Flow and jump maps of one observer variant in body coordinates."""

    def __init__(self, kind: str, gains: GainSet, consts: WorldConstants):
        if kind not in ("continuous", "reduced", "hybrid"):
            raise ValueError(f"unknown observer kind {kind!r}")
        if gains.N != consts.N:
            raise ValueError(
                f"gains carry {gains.N} vector weights but the world has {consts.N} vectors"
            )
        self.kind = kind
        self.gains = gains
        self.consts = consts
        # k_o-scaled cross-product matrices of the fixed inertial directions
        self._Gx = gains.k_o * gains.rho_gravity * skew(consts.g)
        self._Rx = gains.k_o * gains.rho_vectors[:, None, None] * skew(consts.inertial_vectors)

    def substeps(self, dt) -> int:
        """
        Number of flow substeps over `dt`.

        The measurement-driven innovation drifts within a step, and at high
        ``k_o`` the second-order part of that drift dominates the local error.
        Splitting keeps ``k_o |H| dt`` per substep below `STIFF_STEP`; the
        hybrid flow needs no splitting because its innovation only moves with
        the correction itself.
        """
        if self.kind == "hybrid":
            return 1
        g = self.gains
        scale = g.rho_gravity * float(self.consts.g @ self.consts.g) + float(
            g.rho_vectors @ np.sum(self.consts.inertial_vectors**2, axis=1)
        )
        return max(1, int(np.ceil(g.k_o * scale * dt / STIFF_STEP)))

    def gravity_estimate(self, x: _Body, v_m) -> NDArray:
        """Body-frame gravity estimate ``R_hat^T g_hat``."""
        if self.kind == "reduced":
            if v_m is None:
                return np.zeros_like(x.w)
            return self.gains.k_v * (v_m - x.w)
        return x.h

    def _references(self, x: _Body, v_m, b):
        """Inertial-frame estimates ``(r_hat, g_hat)`` entering the innovation."""
        g_hat = np.einsum("...ij,...j->...i", x.R, self.gravity_estimate(x, v_m))
        if self.kind == "hybrid":
            r_hat = _rotate_rows(x.R, x.s)
        elif b is None:
            # no vector measurement yet: the vector terms vanish
            r_hat = np.broadcast_to(self.consts.inertial_vectors, x.s.shape)
        else:
            r_hat = _rotate_rows(x.R, b)
        return r_hat, g_hat

    def sigma(self, x: _Body, v_m, b) -> NDArray:
        return _sigma(self.gains, self.consts, *self._references(x, v_m, b))

    def correction(self, x: _Body, v_m, b, dt, sigma_rate=None) -> NDArray:
        """
        Rotation vector of the left correction ``exp(phi)`` over `dt`.

        Rotating every inertial estimate by ``phi`` changes the innovation by
        ``-H phi`` to first order. The correction integrates the linearized
        ``phi' = k_o (sigma_0 + u sigma_rate - H phi)`` exactly, which keeps
        the step stable when ``k_o |H| dt`` is large. `sigma_rate` is the
        drift of the innovation caused by everything except the correction.
        """
        g = self.gains
        r_hat, g_hat = self._references(x, v_m, b)
        sig = _sigma(g, self.consts, r_hat, g_hat)
        # k_o H
        kH = -self._Gx @ skew(g_hat) - np.einsum("nij,...njk->...ik", self._Rx, skew(r_hat))
        # phi' = A phi + c1 u + c0 solved exactly through the augmented
        # generator [[A, c1, c0], [0, 0, 1], [0, 0, 0]]
        batch = sig.shape[:-1]
        M = np.zeros(batch + (5, 5))
        M[..., :3, :3] = -kH
        if sigma_rate is not None:
            M[..., :3, 3] = g.k_o * np.broadcast_to(sigma_rate, batch + (3,))
        M[..., :3, 4] = g.k_o * sig
        M[..., 3, 4] = 1.0
        return expm(dt * M)[..., :3, 4]

    def sigma_rate(self, x: _Body, q, m, mdot, b, bdot):
        """
        Time derivative of the innovation at the start of a step, excluding
        the correction. Inputs are expressed in the frame anchored at the
        start of the step, so the linear states start at ``(x.w, x.h)``.
        """
        if self.kind == "hybrid":
            return None
        g = self.gains
        rate = 0.0
        if b is not None and bdot is not None:
            dr = _rotate_rows(x.R, bdot)
            rate = -np.einsum("n,...ni->...i", g.rho_vectors, _cross(self.consts.inertial_vectors, dr))
        if m is not None:
            if self.kind == "continuous":
                dh = g.k_g * (m[0] - x.w)
            else:
                wdot = q[0] + g.k_v * (m[0] - x.w)
                dh = g.k_v * (mdot - wdot)
            dg = np.einsum("...ij,...j->...i", x.R, dh)
            rate = rate - g.rho_gravity * _cross(self.consts.g, dg)
        return rate

    def flow(
        self, x: _Body, omega_bar, dt, rot_full, q, m, v_m0, b0, bdot=None, mdot=None
    ) -> _Body:
        """
        Advance over `dt` at the constant gyro rate `omega_bar`.

        `q` and `m` are the acceleration and body-velocity inputs expressed in
        the frame ``exp(u omega_bar)`` anchored at the start of the step,
        sampled at ``u = 0, dt/2, dt``. `m` is None when no velocity
        measurement is available, which switches the velocity feedback off.
        `v_m0` and `b0` feed the innovation at the start of the step and
        `bdot` and `mdot` are the rates of `b0` and `m` at the start of the step
        in the same frame.
        """
        g = self.gains
        if m is not None and mdot is None:
            mdot = (-3.0 * m[0] + 4.0 * m[1] - m[2]) / dt
        rate = self.sigma_rate(x, q, m, mdot, b0, bdot)
        R_new = exp_so3(self.correction(x, v_m0, b0, dt, rate)) @ x.R @ rot_full
        k_v, k_g = (g.k_v, g.k_g) if m is not None else (0.0, 0.0)
        if self.kind == "hybrid":
            z, y = _linear_rk4(x.w, x.h, dt, q, None, 0.0, 0.0, True)
        elif self.kind == "continuous":
            z, y = _linear_rk4(x.w, x.h, dt, q, m, k_v, k_g, True)
        else:
            z, y = _linear_rk4(x.w, x.h, dt, q, m, k_v, 0.0, False)
        return _Body(R_new, z @ rot_full, y @ rot_full, x.s @ rot_full)

    def jump(self, x: _Body, v_m, b) -> _Body:
        g = self.gains
        innov = v_m - x.w
        return _Body(
            x.R,
            x.w + g.k_v * innov,
            x.h + g.k_g * innov,
            x.s + g.k_r * (b - x.s),
        )


# ---------------------------------------------------------------------------
# interpolation of sampled inputs in each interval's rotating frame

_NODE_LAYOUTS = {
    (-1, 0, 1, 2): None,
    (0, 1, 2, 3): None,
    (-2, -1, 0, 1): None,
    (0, 1, 2): None,
    (-1, 0, 1): None,
    (0, 1): None,
}
for _nodes in list(_NODE_LAYOUTS):
    _V = np.vander(np.asarray(_nodes, dtype=float), 4, increasing=True)[:, : len(_nodes)]
    _NODE_LAYOUTS[_nodes] = np.linalg.inv(_V)


def interval_rates(omega: NDArray) -> NDArray:
    """
    Midpoint body rate of every IMU interval.

    Uses the four-point estimate ``(-w[j-1] + 9 w[j] + 9 w[j+1] - w[j+2]) / 16``
    inside the stream, its one-sided counterpart in the end intervals and the
    two-point mean for streams shorter than four samples.
    """
    omega = np.asarray(omega, dtype=float)
    mid = 0.5 * (omega[:-1] + omega[1:])
    if len(omega) >= 4:
        mid[1:-1] = (-omega[:-3] + 9 * omega[1:-2] + 9 * omega[2:-1] - omega[3:]) / 16.0
        edge = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0
        mid[0] = edge @ omega[:4]
        mid[-1] = edge @ omega[:-5:-1]
    return mid


def _frame_polynomials(samples: NDArray, Phi: NDArray) -> NDArray:
    """
    Polynomial coefficients (in ``x = s / h``) of a sampled body-frame signal
    expressed in the rotating frame of each interval.

    Returns shape ``(n - 1, 4, 3)``; unused high-order coefficients are zero.
    """
    n = len(samples)
    PhiT = np.swapaxes(Phi, -1, -2)
    at_next = np.einsum("jab,jb->ja", Phi, samples[1:])  # node x = 1
    coeffs = np.zeros((n - 1, 4, 3))
    nodes_all = {
        0: samples[:-1],
        1: at_next,
    }
    if n >= 3:
        nodes_all[2] = np.zeros_like(at_next)
        nodes_all[2][:-1] = np.einsum("jab,jb->ja", Phi[:-1], at_next[1:])
        nodes_all[-1] = np.zeros_like(at_next)
        nodes_all[-1][1:] = np.einsum("jab,jb->ja", PhiT[:-1], samples[:-2])
    if n >= 4:
        nodes_all[3] = np.zeros_like(at_next)
        nodes_all[3][0] = Phi[0] @ Phi[1] @ Phi[2] @ samples[3]
        nodes_all[-2] = np.zeros_like(at_next)
        nodes_all[-2][-1] = PhiT[-1 - 1] @ PhiT[-1 - 2] @ samples[-4]
    for j0, j1, layout in _layouts(n):
        inv = _NODE_LAYOUTS[layout]
        vals = np.stack([nodes_all[k][j0:j1] for k in layout], axis=1)
        coeffs[j0:j1, : len(layout)] = np.einsum("ck,jkd->jcd", inv, vals)
    return coeffs


def _layouts(n: int):
    m = n - 1  # intervals
    if n < 3:
        return [(0, m, (0, 1))]
    if n == 3:
        return [(0, 1, (0, 1, 2)), (1, 2, (-1, 0, 1))]
    return [(0, 1, (0, 1, 2, 3)), (1, m - 1, (-1, 0, 1, 2)), (m - 1, m, (-2, -1, 0, 1))]


def _poly_eval(c: NDArray, x: float) -> NDArray:
    return c[0] + x * (c[1] + x * (c[2] + x * c[3]))


# ---------------------------------------------------------------------------
# run engine


def _simulate(
    kind: str,
    gains: GainSet,
    consts: WorldConstants,
    imu: ImuLog,
    events: EventLog,
    initial: EstimatorState,
    measurement: str = "zoh",
    record_stride: int = 1,
    T_bounds: tuple[float, float] | None = None,
) -> HybridTrace:
    """
    Run one observer over an IMU stream and a measurement stream.

    Flow segments are cut at every arrival time so that updates happen
    exactly at ``t_k``. The hybrid observer jumps there; the other observers
    either latch the new sample (``"zoh"``) or, with ``"continuous"``, read
    measurements sampled on the IMU grid.
    """
    check_imu(imu)
    if measurement not in ("zoh", "continuous"):
        raise ValueError(f"unknown measurement mode {measurement!r}")
    if kind == "hybrid" and measurement != "zoh":
        raise ValueError("the hybrid observer takes intermittent measurements")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    t = np.asarray(imu.t, dtype=float)
    n = len(t)
    hdt = float(t[1] - t[0])
    check_events(events, consts.N, t[0], t[-1])
    ev_t = np.asarray(events.t, dtype=float)
    n_ev = len(ev_t)
    if measurement == "continuous" and (
        n_ev != n or np.max(np.abs(ev_t - t)) > 1e-9 * max(1.0, t[-1])
    ):
        raise ValueError("continuous measurements must be sampled on the IMU grid")
    if T_bounds is not None and n_ev > 1:
        gaps = np.diff(ev_t)
        if np.any(gaps < T_bounds[0] - 1e-9) or np.any(gaps > T_bounds[1] + 1e-9):
            raise ValueError("measurement gaps fall outside [T_m, T_M]")

    dyn = _Dynamics(kind, gains, consts)
    omega_bar = interval_rates(imu.omega)
    Phi = exp_so3(hdt * omega_bar)
    Phi_half = exp_so3(0.5 * hdt * omega_bar)
    qc = _frame_polynomials(np.asarray(imu.accel, dtype=float), Phi)
    mc = None
    if measurement == "continuous":
        mc = _frame_polynomials(np.asarray(events.v_m, dtype=float), Phi)

    hybrid = kind == "hybrid"
    # timer bookkeeping: tau is the time left until the next arrival; after
    # the last arrival it restarts from T_M (or the largest observed gap)
    if T_bounds is not None:
        tail_gap = T_bounds[1]
    elif n_ev > 1:
        tail_gap = float(np.max(np.diff(ev_t)))
    else:
        tail_gap = float(t[-1] - t[0])

    x = _Body.from_state(initial)
    jumps = 0
    k = 0
    held_vm = held_b = None
    if measurement == "continuous":
        held_vm, held_b = events.v_m[0], events.b[0]
    rec = _Recorder()

    def timer_at(time):
        if not hybrid:
            return np.nan
        if k < n_ev:
            return max(float(ev_t[k]) - time, 0.0)
        t_prev = float(ev_t[-1]) if n_ev else float(t[0])
        return max(t_prev + tail_gap - time, 0.0)

    rec.add(t[0], jumps, "flow", timer_at(t[0]), x, held_vm)
    eps = 1e-9 * max(1.0, abs(t[-1]))
    for j in range(n - 1):
        wb = omega_bar[j]
        xs = 0.0
        while k < n_ev and ev_t[k] <= t[j + 1] + eps and measurement == "zoh":
            xe = min(max((ev_t[k] - t[j]) / hdt, 0.0), 1.0)
            if xe > xs + _TINY:
                x = _advance(dyn, x, j, xs, xe, hdt, wb, Phi, Phi_half, qc, None, held_vm, held_b)
                xs = xe
            tk = float(ev_t[k])
            if hybrid:
                rec.add(tk, jumps, "flow", 0.0, x, None)
                x = dyn.jump(x, events.v_m[k], events.b[k])
                jumps += 1
                k += 1
                rec.add(tk, jumps, "jump", timer_at(tk), x, None)
            else:
                held_vm, held_b = events.v_m[k], events.b[k]
                k += 1
        if xs < 1.0 - _TINY:
            b_next = events.b[j + 1] if measurement == "continuous" else None
            x = _advance(
                dyn, x, j, xs, 1.0, hdt, wb, Phi, Phi_half, qc, mc, held_vm, held_b, b_next
            )
        if measurement == "continuous":
            held_vm, held_b = events.v_m[j + 1], events.b[j + 1]
        if (j + 1) % record_stride == 0 or j == n - 2:
            rec.add(t[j + 1], jumps, "flow", timer_at(t[j + 1]), x, held_vm)

    return rec.trace(kind, dyn)


class _Recorder:
    def __init__(self):
        self.rows = []

    def add(self, time, j, kind, tau, x, v_m):
        self.rows.append((float(time), j, kind, tau, x, v_m))

    def trace(self, kind, dyn) -> HybridTrace:
        xs = [r[4] for r in self.rows]
        R = np.stack([x.R for x in xs])
        if kind == "reduced":
            h = np.stack([dyn.gravity_estimate(x, r[5]) for x, r in zip(xs, self.rows)])
        else:
            h = np.stack([x.h for x in xs])
        return HybridTrace(
            np.array([r[0] for r in self.rows]),
            np.array([r[1] for r in self.rows], dtype=int),
            np.array([r[2] for r in self.rows]),
            np.array([r[3] for r in self.rows], dtype=float),
            R,
            np.einsum("...ij,...j->...i", R, np.stack([x.w for x in xs])),
            np.einsum("...ij,...j->...i", R, h),
            _rotate_rows(R, np.stack([x.s for x in xs])),
            observer=kind,
        )


def _advance(dyn, x, j, x0, x1, hdt, wb, Phi, Phi_half, qc, mc, vm_held, b_held, b_next=None):
    """
    Flow from normalized time `x0` to `x1` inside IMU interval `j`.

    `b_next` is the vector measurement at the end of the interval when
    measurements are sampled on the IMU grid; otherwise `b_held` is held.
    """
    n = dyn.substeps((x1 - x0) * hdt)
    if n == 1 and x0 == 0.0 and x1 == 1.0:
        rots = Phi[j], Phi_half[j]
    else:
        h = (x1 - x0) * hdt / n
        rots = exp_so3(h * wb), exp_so3(0.5 * h * wb)
    start = exp_so3(x0 * hdt * wb) if x0 > 0.0 else None
    if b_next is not None:
        # vector samples in the frame of the interval start, linear in time
        b_end = _rotate_rows(Phi[j], b_next)
    for i in range(n):
        lo = x0 + (x1 - x0) * i / n
        hi = x0 + (x1 - x0) * (i + 1) / n if i < n - 1 else x1
        b0 = b_held
        bdot = None
        if b_next is not None:
            b0 = b_held + lo * (b_end - b_held)
            bdot = (b_end - b_held) / hdt
            if start is not None:
                b0, bdot = b0 @ start, bdot @ start
        elif b_held is not None:
            bdot = _cross(wb, b_held)
        x = _advance_once(dyn, x, j, lo, hi, hdt, wb, rots, start, qc, mc, vm_held, b0, bdot)
        start = rots[0] if start is None else start @ rots[0]
    return x


def _advance_once(dyn, x, j, x0, x1, hdt, wb, rots, start, qc, mc, vm_held, b0, bdot):
    dt = (x1 - x0) * hdt
    rot_full, rot_half = rots
    xm = 0.5 * (x0 + x1)

    def local(c):
        vals = [_poly_eval(c, x0), _poly_eval(c, xm), _poly_eval(c, x1)]
        if start is not None:
            vals = [v @ start for v in vals]
        return vals

    q = local(qc[j])
    mdot = None
    if mc is not None:
        m = local(mc[j])
        vm0 = m[0]
        c = mc[j]
        mdot = (c[1] + x0 * (2.0 * c[2] + 3.0 * x0 * c[3])) / hdt
        if start is not None:
            mdot = mdot @ start
    elif vm_held is not None:
        m = [vm_held, rot_half @ vm_held, rot_full @ vm_held]
        vm0 = vm_held
        mdot = _cross(wb, vm_held)
    else:
        m = vm0 = None
    return dyn.flow(x, wb, dt, rot_full, q, m, vm0, b0, bdot, mdot)


# ---------------------------------------------------------------------------
# single-step API


def _constant_inputs(omega, a, v_m, dt):
    """Inputs held constant in the body frame over one step, in the step's rotating frame."""
    half = exp_so3(0.5 * dt * omega)
    full = exp_so3(dt * omega)
    q = [a, half @ a, full @ a]
    m = None if v_m is None else [v_m, half @ v_m, full @ v_m]
    return full, q, m


def _step(kind, state, frame, event_data, gains, consts, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    dyn = _Dynamics(kind, gains, consts)
    omega = check_vector(frame.omega, "omega")
    a = check_vector(frame.a, "a")
    v_m, b = (None, None) if event_data is None else event_data
    if v_m is not None:
        v_m = check_vector(v_m, "v_m")
        b = np.asarray(b, dtype=float).reshape(consts.N, 3)
    n = dyn.substeps(dt)
    h = dt / n
    full, q, m = _constant_inputs(omega, a, v_m, h)
    bdot = None if b is None else _cross(omega, b)
    x = _Body.from_state(state)
    for _ in range(n):
        x = dyn.flow(x, omega, h, full, q, m, v_m, b, bdot, None if v_m is None else _cross(omega, v_m))
    return x, dyn


def flow_continuous(
    state: EstimatorState,
    frame: SensorFrame,
    event_data,
    gains: GainSet,
    consts: WorldConstants,
    dt: float,
) -> EstimatorState:
    """
    One step of the continuous observer with inputs held over `dt`.

    Parameters
    ----------
    state : EstimatorState
    frame : SensorFrame
        Gyro and accelerometer sample, held constant in the body frame.
    event_data : tuple (v_m, b) or None
        Latest velocity and vector measurements. None disables the
        measurement feedback (nothing has arrived yet).
    gains, consts, dt
        Observer gains, world constants and step length in seconds.
    """
    gains.require("k_v", "k_g")
    x, _ = _step("continuous", state, frame, event_data, gains, consts, dt)
    return x.to_state()


def flow_reduced(state, frame, event_data, gains, consts, dt) -> EstimatorState:
    """
    One step of the reduced observer.

    The returned ``g_hat`` is the substituted estimate
    ``k_v (R_hat v_m - v_hat)`` at the end of the step.
    """
    gains.require("k_v")
    x, dyn = _step("reduced", state, frame, event_data, gains, consts, dt)
    out = x.to_state()
    v_m = None if event_data is None else np.asarray(event_data[0], dtype=float)
    out.g_hat = x.R @ dyn.gravity_estimate(x, v_m)
    return out


def flow_hybrid(
    state: EstimatorState,
    timer: TimerState,
    frame: SensorFrame,
    gains: GainSet,
    consts: WorldConstants,
    dt: float,
) -> tuple[EstimatorState, TimerState]:
    """
    Flow the hybrid observer for ``min(dt, tau)`` seconds.

    The step is cut at ``tau`` so the timer never crosses zero.
    """
    if timer.tau <= 0:
        return state.copy(), TimerState(0.0)
    dt = min(float(dt), float(timer.tau))
    x, _ = _step("hybrid", state, frame, None, gains, consts, dt)
    return x.to_state(), TimerState(max(timer.tau - dt, 0.0))


def jump_hybrid(
    state: EstimatorState,
    timer: TimerState,
    event: MeasurementEvent,
    gains: GainSet,
    next_gap: float,
) -> tuple[EstimatorState, TimerState]:
    """
    Measurement update of the hybrid observer.

    The attitude is left untouched; velocity, gravity and vector estimates move
    toward the rotated measurements and the timer restarts at `next_gap`.

    Raises
    ------
    TimerNotExpired
        If ``tau`` is still above the tolerance.
    """
    if timer.tau > TIMER_TOL:
        raise TimerNotExpired(f"timer still at {timer.tau:.3g} s")
    if not next_gap > 0:
        raise ValueError("next_gap must be positive")
    R = state.R_hat
    innov = R @ np.asarray(event.v_m, dtype=float) - state.v_hat
    b = np.asarray(event.b, dtype=float).reshape(state.r_hat.shape)
    new = EstimatorState(
        R.copy(),
        state.v_hat + gains.k_v * innov,
        state.g_hat + gains.k_g * innov,
        state.r_hat + gains.k_r * (_rotate_rows(R, b) - state.r_hat),
    )
    return new, TimerState(float(next_gap))


def _as_imu(frames) -> ImuLog:
    if isinstance(frames, ImuLog):
        return frames
    frames = list(frames)
    return ImuLog(
        np.array([f.t for f in frames], dtype=float),
        np.array([f.omega for f in frames], dtype=float),
        np.array([f.a for f in frames], dtype=float),
    )


def _as_events(events, N) -> EventLog:
    if isinstance(events, EventLog):
        return events
    events = list(events)
    if not events:
        return EventLog(np.empty(0), np.empty((0, 3)), np.empty((0, N, 3)))
    return EventLog(
        np.array([e.t_k for e in events], dtype=float),
        np.array([e.v_m for e in events], dtype=float),
        np.array([e.b for e in events], dtype=float).reshape(len(events), N, 3),
    )


def run_hybrid(
    initial: EstimatorState,
    frames,
    events,
    gains: GainSet,
    consts: WorldConstants,
    schedule=None,
    record_stride: int = 1,
) -> HybridTrace:
    """
    Run the hybrid observer over a full IMU stream.

    Parameters
    ----------
    initial : EstimatorState
    frames : ImuLog or iterable of SensorFrame
        Uniformly sampled IMU data.
    events : EventLog or iterable of MeasurementEvent
    schedule : SamplingSchedule, optional
        When given, the arrival gaps are checked against ``[T_m, T_M]`` and the
        timer restarts from ``T_M`` after the last arrival.
    """
    gains.require("k_v", "k_g", "k_r")
    bounds = None if schedule is None else (schedule.T_m, schedule.T_M)
    return _simulate(
        "hybrid",
        gains,
        consts,
        _as_imu(frames),
        _as_events(events, consts.N),
        initial,
        record_stride=record_stride,
        T_bounds=bounds,
    )


def run_observer(
    kind: str,
    initial: EstimatorState,
    frames,
    events,
    gains: GainSet,
    consts: WorldConstants,
    measurement: str = "zoh",
    record_stride: int = 1,
) -> HybridTrace:
    """
    Run a continuous (``"continuous"``) or reduced (``"reduced"``) observer.

    `initial` may carry a leading batch dimension, in which case every trace
    array gains that dimension after the sample axis; all members of the
    batch share the sensor streams.
    """
    if kind not in ("continuous", "reduced"):
        raise ValueError(f"unknown observer kind {kind!r}")
    gains.require(*(("k_v", "k_g") if kind == "continuous" else ("k_v",)))
    return _simulate(
        kind,
        gains,
        consts,
        _as_imu(frames),
        _as_events(events, consts.N),
        initial,
        measurement=measurement,
        record_stride=record_stride,
    )


# ---------------------------------------------------------------------------
# estimators


class _ObserverBase(BaseEstimator):
    _kind = ""
    _required = ("k_v",)

    def _gains(self) -> GainSet:
        rho = self.rho
        if rho is None:
            rho = (1.0,) * (self._consts().N + 1)
        g = GainSet(self.k_o, self.k_v, getattr(self, "k_g", 0.0), getattr(self, "k_r", 0.0), rho)
        g.require(*self._required)
        return g

    def _consts(self) -> WorldConstants:
        kw = {}
        if self.g is not None:
            kw["g"] = check_vector(self.g, "g")
        if self.inertial_vectors is not None:
            kw["inertial_vectors"] = self.inertial_vectors
        return WorldConstants(**kw)

    def initial_state(self, N: int) -> EstimatorState:
        """Starting estimate: ``R0_hat`` if set, else the angle-axis rotation."""
        if self.R0_hat is not None:
            R = check_rotation(self.R0_hat, "R0_hat")
        else:
            axis = np.asarray(self.init_axis, dtype=float)
            R = angle_axis_to_rotation(self.init_angle, axis / np.linalg.norm(axis))
        return EstimatorState.initial(R, N)

    def _run(self, imu, events, **kw):
        consts = self._consts()
        gains = self._gains()
        events = _as_events(events, consts.N)
        self.trace_ = _simulate(
            self._kind,
            gains,
            consts,
            _as_imu(imu),
            events,
            self.initial_state(consts.N),
            record_stride=self.record_stride,
            **kw,
        )
        self.gains_ = gains
        self.consts_ = consts
        self.final_state_ = self.trace_.state(-1)
        return self

    def predict(self, times) -> NDArray:
        """
        Estimated attitude at the requested times.

        Returns the last recorded sample at or before each time, so
        ``record_stride=1`` gives the estimate on the IMU grid.
        """
        check_is_fitted(self, "trace_")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        tr = self.trace_
        if np.any(times < tr.t[0] - 1e-12) or np.any(times > tr.t[-1] + 1e-9):
            raise ValueError("requested times fall outside the fitted trace")
        idx = np.searchsorted(tr.t, times + 1e-12, side="right") - 1
        return tr.R_hat[np.clip(idx, 0, len(tr) - 1)]

    def errors(self, truth) -> ErrorState:
        """Error coordinates of every trace sample against a :class:`~.world.TruthLog`."""
        check_is_fitted(self, "trace_")
        tr = self.trace_
        R, v = truth.at(tr.t)
        return error_state((R, v), EstimatorState(tr.R_hat, tr.v_hat, tr.g_hat, tr.r_hat), self.consts_)

    def attitude_error(self, truth) -> NDArray:
        """``|R_tilde|_I`` along the fitted trace."""
        return distance_to_identity(self.errors(truth).R_tilde)


class ContinuousObserver(_ObserverBase):
    """
    Gravity-aided observer with measurement feedback in the flow.

    Parameters
    ----------
    k_o, k_v, k_g : float
        Attitude, velocity and gravity gains.
    rho : sequence of float, optional
        Vector weights followed by the gravity weight; defaults to ones.
    measurement : {"zoh", "continuous"}
        ``"zoh"`` holds the latest arrival between events; ``"continuous"``
        expects one measurement per IMU sample.
    g, inertial_vectors : array-like, optional
        Known gravity and inertial reference vectors.
    init_angle, init_axis : float, array-like
        Initial attitude estimate ``R_a(init_angle, init_axis)``; the axis is
        normalized before use.
    R0_hat : array-like, optional
        Explicit initial attitude, overriding the angle-axis pair.
    record_stride : int
        Keep every n-th IMU sample in ``trace_``.
    """

    _kind = "continuous"
    _required = ("k_v", "k_g")

    def __init__(
        self,
        k_o=15.0,
        k_v=2.5,
        k_g=8.0,
        rho=None,
        measurement="zoh",
        g=None,
        inertial_vectors=None,
        init_angle=0.99 * np.pi,
        init_axis=(1.0, 1.0, 1.0),
        R0_hat=None,
        record_stride=1,
    ):
        self.k_o = k_o
        self.k_v = k_v
        self.k_g = k_g
        self.rho = rho
        self.measurement = measurement
        self.g = g
        self.inertial_vectors = inertial_vectors
        self.init_angle = init_angle
        self.init_axis = init_axis
        self.R0_hat = R0_hat
        self.record_stride = record_stride

    def fit(self, imu, events):
        """
        Run the observer over `imu` (ImuLog or SensorFrame iterable) and
        `events` (EventLog or MeasurementEvent iterable).
        """
        return self._run(imu, events, measurement=self.measurement)


class ReducedObserver(ContinuousObserver):
    """
    Observer whose gravity estimate is ``k_v (R_hat v_m - v_hat)``.

    Takes the parameters of :class:`ContinuousObserver`; `k_g` is ignored.
    """

    _kind = "reduced"
    _required = ("k_v",)


class HybridObserver(_ObserverBase):
    """
    Observer that flows on IMU data and jumps at measurement arrivals.

    Parameters
    ----------
    k_o, k_v, k_g, k_r : float
        Attitude, velocity, gravity and vector gains.
    T_m, T_M : float, optional
        Bounds on the arrival gaps. When given, the events are checked against
        them and the timer restarts from `T_M` after the last arrival.

    Other parameters are as in :class:`ContinuousObserver`.
    """

    _kind = "hybrid"
    _required = ("k_v", "k_g", "k_r")

    def __init__(
        self,
        k_o=15.0,
        k_v=0.7,
        k_g=4.0,
        k_r=0.1,
        rho=None,
        T_m=None,
        T_M=None,
        g=None,
        inertial_vectors=None,
        init_angle=0.99 * np.pi,
        init_axis=(1.0, 1.0, 1.0),
        R0_hat=None,
        record_stride=1,
    ):
        self.k_o = k_o
        self.k_v = k_v
        self.k_g = k_g
        self.k_r = k_r
        self.rho = rho
        self.T_m = T_m
        self.T_M = T_M
        self.g = g
        self.inertial_vectors = inertial_vectors
        self.init_angle = init_angle
        self.init_axis = init_axis
        self.R0_hat = R0_hat
        self.record_stride = record_stride

    def fit(self, imu, events):
        bounds = None
        if self.T_m is not None and self.T_M is not None:
            bounds = (float(self.T_m), float(self.T_M))
        return self._run(imu, events, T_bounds=bounds)
