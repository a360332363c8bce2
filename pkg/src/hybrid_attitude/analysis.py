"""
Error metrics, Lyapunov functions, convergence summaries and ISS studies.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_continuous_lyapunov

from .exceptions import CertificateMismatch, EmptyTrace
from .gains import LinearBlocks, LyapunovCertificate, QMatrices, build_blocks, enumerate_equilibria
from .observers import EstimatorState, GainSet, HybridTrace, error_state
from .so3 import distance_to_identity, exp_so3, psi, random_rotation, skew

# ---------------------------------------------------------------------------
# Lyapunov functions


def lyapunov_vr(R_tilde, q: QMatrices) -> NDArray | float:
    """``tr(Q (I - R_tilde))``; broadcasts over leading dimensions."""
    R_tilde = np.asarray(R_tilde, dtype=float)
    return np.einsum("ij,...ji->...", q.Q, np.eye(3) - R_tilde)


def vr_rate(R_tilde, q: QMatrices, k_o: float) -> NDArray | float:
    """Rate ``-2 k_o ||psi(Q R_tilde)||^2`` of :func:`lyapunov_vr` along the unforced error flow."""
    p = psi(q.Q @ np.asarray(R_tilde, dtype=float))
    return -2.0 * k_o * np.sum(p * p, axis=-1)


def continuous_lyapunov_matrix(gains: GainSet) -> NDArray:
    """``P`` with ``(A - KC)^T P + P (A - KC) = -I`` for the velocity/gravity error."""
    b = build_blocks(0, gains)
    F = b.A - b.K @ b.C
    return solve_continuous_lyapunov(F.T, -np.eye(6))


def lyapunov_vzeta(zeta, P) -> NDArray | float:
    """``zeta^T P zeta``."""
    zeta = np.asarray(zeta, dtype=float)
    return np.einsum("...i,ij,...j->...", zeta, P, zeta)


def _check_certificate(cert: LyapunovCertificate, blocks: LinearBlocks):
    n = blocks.A_bar.shape[0]
    if cert.P.shape != (n, n):
        raise CertificateMismatch(f"certificate is {cert.P.shape[0]}-dimensional, blocks are {n}")
    g = cert.gains
    if not np.allclose(
        blocks.K_bar, build_blocks(blocks.N, g).K_bar, rtol=0, atol=1e-12
    ):
        raise CertificateMismatch("certificate was computed for different gains")


def lyapunov_vzeta_prime(zeta_bar, tau, cert: LyapunovCertificate, blocks: LinearBlocks):
    """
    ``zeta_bar^T E(tau)^T P E(tau) zeta_bar`` with ``E(tau) = I + A_bar tau``.

    Broadcasts over leading dimensions of `zeta_bar` and `tau`.

    Raises
    ------
    CertificateMismatch
        If the certificate does not belong to the gains or size of `blocks`.
    """
    _check_certificate(cert, blocks)
    zeta_bar = np.asarray(zeta_bar, dtype=float)
    tau = np.asarray(tau, dtype=float)
    y = zeta_bar + tau[..., None] * np.einsum("ij,...j->...i", blocks.A_bar, zeta_bar)
    return np.einsum("...i,ij,...j->...", y, cert.P, y)


def sandwich_bounds(cert: LyapunovCertificate, blocks: LinearBlocks) -> tuple[float, float]:
    """
    Constants ``alpha, alpha_bar`` with
    ``alpha |zeta_bar|^2 <= V <= alpha_bar |zeta_bar|^2`` for all
    ``tau in [0, T_M]``.

    The singular values of ``[[1, tau], [0, 1]]`` spread monotonically in
    ``tau``, so their extremes are reached at ``T_M``.
    """
    _check_certificate(cert, blocks)
    T_M = cert.tau_range[1]
    s = np.linalg.svd(np.array([[1.0, T_M], [0.0, 1.0]]), compute_uv=False)
    w = np.linalg.eigvalsh(cert.P)
    return float(w[0] * s[-1] ** 2), float(w[-1] * s[0] ** 2)


# ---------------------------------------------------------------------------
# metrics along a trace


@dataclass
class MetricSeries:
    """Scalar error measures aligned with the rows of a :class:`HybridTrace`."""

    t: NDArray
    j: NDArray
    kind: NDArray
    tau: NDArray
    attitude_error: NDArray
    v_error: NDArray
    g_error: NDArray
    r_error: NDArray
    zeta_norm: NDArray
    zeta_bar_norm: NDArray
    V_R: NDArray
    V_zeta: NDArray
    V_zeta_prime: NDArray
    observer: str = ""
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def is_jump(self) -> NDArray:
        return self.kind == "jump"

    def columns(self) -> tuple[list[str], list]:
        """Header and columns for CSV export."""
        header = ["t", "j", "flow_or_jump", "attitude_error", "v_error", "g_error"]
        cols = [self.t, self.j, self.kind, self.attitude_error, self.v_error, self.g_error]
        for i in range(self.r_error.shape[1]):
            header.append(f"r{i + 1}_error")
            cols.append(self.r_error[:, i])
        header += ["tau", "V_R", "V_zeta", "V_zeta_prime"]
        cols += [self.tau, self.V_R, self.V_zeta, self.V_zeta_prime]
        return header, cols


def compute_metrics(
    trace: HybridTrace,
    truth,
    consts,
    gains: GainSet,
    q: QMatrices | None = None,
    cert: LyapunovCertificate | None = None,
) -> MetricSeries:
    """
    Evaluate the error metrics of `trace` against a truth log.

    ``V_zeta`` uses the continuous-time Lyapunov matrix of the gains;
    ``V_zeta_prime`` needs a certificate and a finite timer, and is NaN
    otherwise.
    """
    if len(trace) == 0:
        raise EmptyTrace("trace has no samples")
    R, v = truth.at(trace.t)
    est = EstimatorState(trace.R_hat, trace.v_hat, trace.g_hat, trace.r_hat)
    err = error_state((R, v), est, consts)
    zeta = err.zeta
    zbar = err.zeta_bar
    if q is None:
        from .gains import build_q

        q = build_q(gains.rho, consts.inertial_vectors, consts.g)
    nan = np.full(len(trace), np.nan)
    r_err = np.linalg.norm(err.r_tilde, axis=-1)
    zbar_norm = np.linalg.norm(zbar, axis=-1)
    if trace.observer != "hybrid":
        # these observers keep no vector estimates; the extended error is zeta
        r_err = np.full_like(r_err, np.nan)
        zbar_norm = np.linalg.norm(zeta, axis=-1)
    V_zeta = nan.copy()
    if gains.k_v > 0 and gains.k_g > 0:
        V_zeta = lyapunov_vzeta(zeta, continuous_lyapunov_matrix(gains))
    V_prime = nan.copy()
    if cert is not None and np.all(np.isfinite(trace.tau)):
        blocks = build_blocks(consts.N, gains)
        V_prime = lyapunov_vzeta_prime(zbar, trace.tau, cert, blocks)
    return MetricSeries(
        trace.t,
        trace.j,
        trace.kind,
        trace.tau,
        distance_to_identity(err.R_tilde),
        np.linalg.norm(err.v_tilde, axis=-1),
        np.linalg.norm(err.g_tilde, axis=-1),
        r_err,
        np.linalg.norm(zeta, axis=-1),
        zbar_norm,
        lyapunov_vr(err.R_tilde, q),
        V_zeta,
        V_prime,
        observer=trace.observer,
    )


# ---------------------------------------------------------------------------
# convergence summaries


@dataclass(frozen=True)
class LogLinearFit:
    rate: float
    intercept: float
    r_squared: float
    n_points: int

    @property
    def defined(self) -> bool:
        return np.isfinite(self.rate)


def fit_log_linear(t, y) -> LogLinearFit:
    """
    Least-squares fit ``log y = intercept - rate t`` over the positive
    samples of `y`.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y) & (y > 0)
    if keep.sum() < 3 or np.ptp(t[keep]) == 0:
        return LogLinearFit(np.nan, np.nan, np.nan, int(keep.sum()))
    tk, ly = t[keep], np.log(y[keep])
    slope, icpt = np.polyfit(tk, ly, 1)
    resid = ly - (slope * tk + icpt)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return LogLinearFit(float(-slope), float(icpt), float(r2), int(keep.sum()))


@dataclass(frozen=True)
class ConvergenceReport:
    steady_state_error: float
    time_to_threshold: float
    fitted_decay_rate: float
    decay_fit_r_squared: float
    decay_rate_defined: bool
    monotonicity_violations: int
    max_violation: float
    tail_start: float

    def as_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                for k, v in self.__dict__.items()}


def convergence_report(series, threshold: float, tail_fraction: float = 0.25) -> ConvergenceReport:
    """
    Summarize an attitude-error history.

    Parameters
    ----------
    series : MetricSeries or tuple (t, error)
    threshold : float
        Level for the time-to-threshold, the first time after which the error
        stays below it (NaN if it never does).
    tail_fraction : float
        Final fraction of the time span averaged for the steady state.

    Notes
    -----
    The decay rate is fitted to ``log error`` over the transient: samples
    before the error first reaches ten times the steady state. Monotonicity
    violations count increases between consecutive samples larger than
    ``1e-12`` relative.
    """
    if isinstance(series, MetricSeries):
        t, e = series.t, series.attitude_error
    else:
        t, e = (np.asarray(a, dtype=float) for a in series)
    if len(t) == 0:
        raise EmptyTrace("no samples to summarize")
    if not 0 < tail_fraction < 1:
        raise ValueError("tail_fraction must lie in (0, 1)")
    t0, t1 = t[0], t[-1]
    tail_start = t1 - tail_fraction * (t1 - t0)
    steady = float(np.mean(e[t >= tail_start]))

    above = np.nonzero(e >= threshold)[0]
    if len(above) == 0:
        ttt = float(t0)
    elif above[-1] == len(e) - 1:
        ttt = np.nan
    else:
        ttt = float(t[above[-1] + 1])

    level = max(10.0 * steady, 1e-300)
    below = np.nonzero(e <= level)[0]
    stop = below[0] if len(below) else len(e)
    fit = fit_log_linear(t[:stop], e[:stop])

    d = np.diff(e)
    viol = d > 1e-12 * np.maximum(np.abs(e[:-1]), 1e-300)
    return ConvergenceReport(
        steady,
        ttt,
        fit.rate,
        fit.r_squared,
        fit.defined,
        int(viol.sum()),
        float(d[viol].max()) if viol.any() else 0.0,
        float(tail_start),
    )


# ---------------------------------------------------------------------------
# input-to-state study of the attitude error flow


@dataclass
class ISSStudyResult:
    """
    Tail maxima of ``|R_tilde|_I`` per input amplitude.

    `per_seed` has shape ``(len(amplitudes), seeds)``. The inequality fields
    report the largest value of ``(lhs - rhs) / max(|rhs|, 1)`` for the
    ultimate-bound differential inequality over sampled states.
    """

    input_amplitudes: list
    ultimate_bounds: list
    per_seed: NDArray
    inequality_worst: float = np.nan
    inequality_samples: int = 0
    horizon: float = 0.0
    dt: float = 0.0

    @property
    def monotone(self) -> bool:
        b = np.asarray(self.ultimate_bounds)
        return bool(np.all(np.diff(b) >= 0))

    def as_dict(self) -> dict:
        return {
            "input_amplitudes": list(map(float, self.input_amplitudes)),
            "ultimate_bounds": list(map(float, self.ultimate_bounds)),
            "per_seed": self.per_seed.tolist(),
            "inequality_worst": float(self.inequality_worst),
            "inequality_samples": int(self.inequality_samples),
            "monotone": self.monotone,
            "horizon": self.horizon,
            "dt": self.dt,
        }


def _gamma_u(R_tilde, u, q: QMatrices):
    """``rho_g g^x R_tilde^T u_g`` for ``u = (u_v, u_g)``."""
    ug = np.einsum("...ji,...j->...i", R_tilde, u[..., 3:])
    return q.rhos[-1] * np.cross(q.g, ug)


def error_flow_rate(R_tilde, u, q: QMatrices, k_o: float):
    """Body rate ``-k_o psi(Q R_tilde) + Gamma(R_tilde) u`` of the attitude error flow."""
    return -k_o * psi(q.Q @ R_tilde) + _gamma_u(R_tilde, u, q)


def draw_initial_errors(rng, n: int, q: QMatrices, exclusion: float = 1e-3):
    """
    Uniform random rotations, re-drawn while within `exclusion` (in
    ``|.|_I``) of an undesired equilibrium.
    """
    eq = np.stack(enumerate_equilibria(q).undesired)
    out = random_rotation(rng, n)
    for _ in range(1000):
        d = distance_to_identity(np.einsum("nij,kjl->nkil", out, np.swapaxes(eq, -1, -2)))
        bad = np.any(d < exclusion, axis=1)
        if not bad.any():
            return out
        out[bad] = random_rotation(rng, int(bad.sum()))
    raise RuntimeError("could not draw admissible initial attitudes")


def iss_study(
    amplitudes,
    q: QMatrices,
    k_o: float,
    horizon: float = 20.0,
    seeds: int = 8,
    dt: float = 5e-4,
    switch_interval: float = 0.5,
    tail_fraction: float = 0.25,
    seed: int = 0,
    check_samples: int = 400,
    fd_step: float = 1e-6,
) -> ISSStudyResult:
    """
    Simulate the attitude error flow with bounded random inputs.

    For every amplitude and seed the input is piecewise constant on
    `switch_interval` with components uniform in ``[-amp, amp]``; the initial
    error is a uniform random rotation away from the undesired equilibria.
    The flow is advanced by the Lie-Euler step ``R exp(dt w)``. The ultimate
    bound of an amplitude is the largest ``|R_tilde|_I`` over the final
    `tail_fraction` of the horizon and over the seeds.

    At `check_samples` random states along the runs, the rate of
    ``|R_tilde|_I^2`` is measured by a central difference along the exact
    flow direction and compared with the bound
    ``-2 k_o l_m |R|^2 + 2 k_o l_m + sqrt(3) c_G c_u / 4`` where ``l_m`` is
    the smallest eigenvalue of ``Q_bar``, ``c_G = rho_g |g|`` is the
    Lipschitz constant of the input matrix and ``c_u = amp sqrt(6)`` bounds
    the input norm.
    """
    amps = np.asarray(amplitudes, dtype=float).reshape(-1)
    if np.any(amps < 0) or np.any(np.diff(amps) < 0):
        raise ValueError("amplitudes must be nonnegative and ascending")
    if horizon <= 0 or dt <= 0 or seeds < 1:
        raise ValueError("horizon, dt and seeds must be positive")
    rng = np.random.default_rng(seed)
    A, S = len(amps), seeds
    R = draw_initial_errors(rng, A * S, q).reshape(A, S, 3, 3)
    n_steps = int(round(horizon / dt))
    n_switch = int(np.ceil(horizon / switch_interval)) + 1
    U = rng.uniform(-1, 1, size=(n_switch, A, S, 6)) * amps[None, :, None, None]
    tail_from = int(np.floor((1 - tail_fraction) * n_steps))
    tail_max = np.zeros((A, S))
    check_at = np.sort(rng.choice(n_steps, size=min(check_samples, n_steps), replace=False))
    lam_m = q.lambda_min
    c_gamma = q.rhos[-1] * np.linalg.norm(q.g)
    worst = -np.inf
    ci = 0
    for k in range(n_steps):
        u = U[int(k * dt / switch_interval)]
        w = error_flow_rate(R, u, q, k_o)
        if ci < len(check_at) and check_at[ci] == k:
            ci += 1
            fp = distance_to_identity(R @ exp_so3(fd_step * w)) ** 2
            fm = distance_to_identity(R @ exp_so3(-fd_step * w)) ** 2
            lhs = (fp - fm) / (2 * fd_step)
            x2 = distance_to_identity(R) ** 2
            c_u = amps[:, None] * np.sqrt(6.0)
            rhs = -2 * k_o * lam_m * x2 + 2 * k_o * lam_m + np.sqrt(3.0) * c_gamma * c_u / 4
            worst = max(worst, float(np.max((lhs - rhs) / np.maximum(np.abs(rhs), 1.0))))
        R = R @ exp_so3(dt * w)
        if k + 1 >= tail_from:
            tail_max = np.maximum(tail_max, distance_to_identity(R))
    return ISSStudyResult(
        list(amps),
        list(tail_max.max(axis=1)),
        tail_max,
        worst,
        len(check_at),
        float(horizon),
        float(dt),
    )


# ---------------------------------------------------------------------------
# plots


def plot_comparison(series: dict, path) -> None:
    """
    Write an SVG with ``|R_tilde|_I`` and ``||zeta_bar||`` against time for
    each named :class:`MetricSeries`, on log scales.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "hybrid-attitude"
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for name, s in series.items():
        flow = ~s.is_jump
        axes[0].semilogy(s.t[flow], np.maximum(s.attitude_error[flow], 1e-16), label=name, lw=1)
        axes[1].semilogy(s.t[flow], np.maximum(s.zeta_bar_norm[flow], 1e-16), label=name, lw=1)
    axes[0].set_ylabel("|R_tilde|_I")
    axes[1].set_ylabel("||zeta_bar||")
    axes[1].set_xlabel("t [s]")
    axes[0].legend()
    for ax in axes:
        ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    with open(path, "w") as fh:
        fh.write(buf.getvalue())
