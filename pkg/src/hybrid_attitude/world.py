"""
Ground-truth trajectories and simulated sensors.

The truth attitude is propagated with a midpoint-sampled exponential step, so
between two grid points the body rotates at the constant rate
``omega(t_j + dt/2)``. Queries at off-grid times (measurement arrivals) use
exactly that piecewise-constant-rate model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple

import numpy as np
from numpy.typing import NDArray

from .csvio import flatten_columns, write_csv
from .exceptions import InvalidBounds, ScheduleOutOfRange
from .so3 import exp_so3

GRAVITY = np.array([0.0, 0.0, -9.81])
MAGNETIC_FIELD = np.array([0.36, 0.64, 0.0])

_XYZ = ["x", "y", "z"]
_RIJ = [f"{i}{j}" for i in range(1, 4) for j in range(1, 4)]


@dataclass(frozen=True)
class TrajectoryDefinition:
    """
    Analytic rigid-body motion.

    All three callables take an array of times with shape ``(n,)`` and return
    shape ``(n, 3)``. ``omega_fn`` is the body-frame angular velocity (rad/s),
    ``v_fn`` the inertial velocity (m/s) and ``vdot_fn`` its derivative.
    """

    omega_fn: Callable[[NDArray], NDArray]
    v_fn: Callable[[NDArray], NDArray]
    vdot_fn: Callable[[NDArray], NDArray]
    R0: NDArray = field(default_factory=lambda: np.eye(3))
    name: str = "custom"


def figure_eight(R0=None) -> TrajectoryDefinition:
    """Figure-eight path with slowly varying body rates (the reference scenario)."""

    def omega(t):
        t = np.asarray(t, dtype=float)
        return np.stack(
            [np.sin(0.1 * np.pi * t), np.full_like(t, 0.1), np.cos(0.1 * np.pi * t)],
            axis=-1,
        )

    def v(t):
        t = np.asarray(t, dtype=float)
        return np.stack(
            [-np.sin(t), -4.0 * np.sin(t) * np.cos(t), np.zeros_like(t)], axis=-1
        )

    def vdot(t):
        t = np.asarray(t, dtype=float)
        return np.stack(
            [-np.cos(t), -4.0 * np.cos(2.0 * t), np.zeros_like(t)], axis=-1
        )

    R0 = np.eye(3) if R0 is None else np.asarray(R0, dtype=float)
    return TrajectoryDefinition(omega, v, vdot, R0, name="figure_eight")


def constant_rate(omega, velocity=(0.0, 0.0, 0.0), R0=None) -> TrajectoryDefinition:
    """Constant body rate and constant inertial velocity."""
    omega = np.asarray(omega, dtype=float)
    velocity = np.asarray(velocity, dtype=float)

    def _const(value):
        return lambda t: np.broadcast_to(value, np.shape(t) + (3,)).copy()

    R0 = np.eye(3) if R0 is None else np.asarray(R0, dtype=float)
    return TrajectoryDefinition(
        _const(omega), _const(velocity), _const(np.zeros(3)), R0, name="constant_rate"
    )


@dataclass(frozen=True)
class WorldConstants:
    """Known gravity and inertial reference vectors (rows of `inertial_vectors`)."""

    g: NDArray = field(default_factory=lambda: GRAVITY.copy())
    inertial_vectors: NDArray = field(default_factory=lambda: MAGNETIC_FIELD[None].copy())

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(3)
        rs = np.atleast_2d(np.asarray(self.inertial_vectors, dtype=float))
        if rs.shape[0] < 1 or rs.shape[1] != 3:
            raise ValueError("need at least one inertial vector of length 3")
        if not np.any(g):
            raise ValueError("gravity must be nonzero")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "inertial_vectors", rs)

    @property
    def N(self) -> int:
        return self.inertial_vectors.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Per-axis variances of additive zero-mean Gaussian sensor noise."""

    gyro_var: float = 0.0
    mag_var: float = 0.0
    accel_var: float = 0.0
    dvl_var: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("gyro_var", "mag_var", "accel_var", "dvl_var"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([int(self.seed), stream])


@dataclass(frozen=True)
class SamplingSchedule:
    T_m: float
    T_M: float
    mode: str = "jittered"
    seed: int = 0

    def __post_init__(self):
        if not (self.T_m > 0 and self.T_m <= self.T_M):
            raise InvalidBounds(f"need 0 < T_m <= T_M, got T_m={self.T_m}, T_M={self.T_M}")
        if self.mode not in ("periodic", "jittered"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")


class SensorFrame(NamedTuple):
    t: float
    omega: NDArray
    a: NDArray


class MeasurementEvent(NamedTuple):
    t_k: float
    v_m: NDArray
    b: NDArray  # (N, 3)


@dataclass
class TruthLog:
    """Truth samples on the IMU grid plus the per-interval body rate."""

    t: NDArray
    R: NDArray
    v: NDArray
    omega_mid: NDArray
    trajectory: TrajectoryDefinition | None = None

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def at(self, times) -> tuple[NDArray, NDArray]:
        """
        Truth ``(R, v)`` at arbitrary times inside the grid.

        Raises
        ------
        ScheduleOutOfRange
            If any time lies outside ``[t[0], t[-1]]``.
        """
        times = np.atleast_1d(np.asarray(times, dtype=float))
        eps = 1e-9 * max(1.0, abs(self.t[-1]))
        if times.size and (times.min() < self.t[0] - eps or times.max() > self.t[-1] + eps):
            raise ScheduleOutOfRange(
                f"times must lie in [{self.t[0]}, {self.t[-1]}], got "
                f"[{times.min()}, {times.max()}]"
            )
        if len(self.t) == 1:
            return np.repeat(self.R[:1], len(times), 0), np.repeat(self.v[:1], len(times), 0)
        j = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, len(self.t) - 2)
        s = times - self.t[j]
        R = self.R[j] @ exp_so3(s[:, None] * self.omega_mid[j])
        if self.trajectory is not None:
            v = self.trajectory.v_fn(times)
        else:
            h = self.t[j + 1] - self.t[j]
            frac = (s / h)[:, None]
            v = (1 - frac) * self.v[j] + frac * self.v[j + 1]
        return R, v

    def to_csv(self, path):
        header = ["t"] + [f"R_{ij}" for ij in _RIJ]
        cols = [self.t] + [self.R[:, i, j] for i in range(3) for j in range(3)]
        h, c = flatten_columns("v", self.v, _XYZ)
        return write_csv(path, header + h, cols + c)


@dataclass
class ImuLog:
    t: NDArray
    omega: NDArray
    accel: NDArray

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[SensorFrame]:
        for i in range(len(self.t)):
            yield SensorFrame(float(self.t[i]), self.omega[i], self.accel[i])

    def to_csv(self, path):
        h1, c1 = flatten_columns("omega", self.omega, _XYZ)
        h2, c2 = flatten_columns("a", self.accel, _XYZ)
        return write_csv(path, ["t"] + h1 + h2, [self.t] + c1 + c2)


@dataclass
class EventLog:
    t: NDArray
    v_m: NDArray
    b: NDArray  # (m, N, 3)

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[MeasurementEvent]:
        for k in range(len(self.t)):
            yield MeasurementEvent(float(self.t[k]), self.v_m[k], self.b[k])

    def to_csv(self, path):
        header, cols = flatten_columns("vm", self.v_m, _XYZ)
        for i in range(self.b.shape[1]):
            h, c = flatten_columns(f"b{i + 1}", self.b[:, i], _XYZ)
            header, cols = header + h, cols + c
        return write_csv(path, ["t"] + header, [self.t] + cols)


def propagate_truth(traj: TrajectoryDefinition, t_end: float, dt: float) -> TruthLog:
    """
    Integrate ``R' = R omega^x`` on a uniform grid.

    Each step is ``R(t + dt) = R(t) exp(dt * omega(t + dt/2))``; the grid is
    extended to the first multiple of `dt` not below `t_end`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    n = int(np.ceil(t_end / dt - 1e-9))
    t = np.arange(n + 1) * dt
    omega_mid = np.asarray(traj.omega_fn(t[:-1] + 0.5 * dt), dtype=float).reshape(n, 3)
    steps = exp_so3(dt * omega_mid)
    R = np.empty((n + 1, 3, 3))
    R[0] = traj.R0
    for k in range(n):
        R[k + 1] = R[k] @ steps[k]
    v = np.asarray(traj.v_fn(t), dtype=float).reshape(n + 1, 3)
    return TruthLog(t, R, v, omega_mid, traj)


def emit_imu(
    truth: TruthLog, traj: TrajectoryDefinition, consts: WorldConstants, noise: NoiseSpec
) -> ImuLog:
    """Gyro ``omega(t)`` and accelerometer ``R^T (vdot - g)`` on the truth grid."""
    if len(truth) == 0:
        raise ValueError("empty truth sequence")
    t = truth.t
    omega = np.asarray(traj.omega_fn(t), dtype=float).reshape(len(t), 3)
    vdot = np.asarray(traj.vdot_fn(t), dtype=float).reshape(len(t), 3)
    accel = np.einsum("nji,nj->ni", truth.R, vdot - consts.g)
    rng = noise.rng(0)
    gyro_noise = rng.standard_normal(omega.shape) * np.sqrt(noise.gyro_var)
    accel_noise = rng.standard_normal(accel.shape) * np.sqrt(noise.accel_var)
    return ImuLog(t.copy(), omega + gyro_noise, accel + accel_noise)


def generate_schedule(s: SamplingSchedule, t_end: float) -> NDArray:
    """
    Measurement arrival times in ``(0, t_end]``.

    Periodic mode uses the gap ``(T_m + T_M) / 2``; jittered mode draws every
    gap, including the first arrival, uniformly from ``[T_m, T_M]``.
    """
    if not (s.T_m > 0 and s.T_m <= s.T_M):
        raise InvalidBounds(f"need 0 < T_m <= T_M, got T_m={s.T_m}, T_M={s.T_M}")
    if t_end <= 0:
        return np.empty(0)
    tol = 1e-9 * max(1.0, t_end)
    if s.mode == "periodic":
        T = 0.5 * (s.T_m + s.T_M)
        k = np.arange(1, int(np.floor(t_end / T + 1e-9)) + 1)
        times = k * T
        return times[times <= t_end + tol]
    rng = np.random.default_rng(s.seed)
    n = int(np.ceil(t_end / s.T_m)) + 1
    times = np.cumsum(rng.uniform(s.T_m, s.T_M, size=n))
    return times[times <= t_end + tol]


def emit_events(
    truth: TruthLog, consts: WorldConstants, schedule, noise: NoiseSpec
) -> EventLog:
    """
    Body-frame velocity ``R^T v`` and vectors ``R^T r_i`` at the schedule times.

    Raises
    ------
    ScheduleOutOfRange
        If a time is not covered by `truth`.
    """
    times = np.asarray(schedule, dtype=float).reshape(-1)
    if times.size == 0:
        return EventLog(times, np.empty((0, 3)), np.empty((0, consts.N, 3)))
    R, v = truth.at(times)
    v_m = np.einsum("kji,kj->ki", R, v)
    b = np.einsum("kji,nj->kni", R, consts.inertial_vectors)
    rng = noise.rng(1)
    v_m = v_m + rng.standard_normal(v_m.shape) * np.sqrt(noise.dvl_var)
    b = b + rng.standard_normal(b.shape) * np.sqrt(noise.mag_var)
    return EventLog(times, v_m, b)
