"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .so3 import orthonormality_error

ROTATION_TOL = 1e-9


def check_vector(x, name: str, size: int = 3) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have {size} components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_vectors(x, name: str) -> np.ndarray:
    """Validate a stack of 3-vectors given as an ``(n, 3)`` array."""
    arr = check_array(np.atleast_2d(np.asarray(x, dtype=float)), dtype=float)
    if arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    return arr


def check_rotation(R, name: str = "R", tol: float = ROTATION_TOL) -> np.ndarray:
    """Validate a rotation matrix (or a stack of them)."""
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise ValueError(f"{name} must have trailing shape (3, 3), got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError(f"{name} must be finite")
    if np.any(orthonormality_error(R) > tol) or np.any(
        np.abs(np.linalg.det(R) - 1.0) > tol
    ):
        raise ValueError(f"{name} is not a rotation matrix within {tol:g}")
    return R


def check_positive(value, name: str, allow_zero: bool = False) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value


def check_imu(imu) -> None:
    t = np.asarray(imu.t, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("IMU stream needs at least two samples")
    d = np.diff(t)
    if np.any(d <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, d[0]):
        raise ValueError("IMU timestamps must be uniformly spaced")
    check_vectors(imu.omega, "omega")
    check_vectors(imu.accel, "accel")


def check_events(events, n_vectors: int, t_start: float, t_end: float) -> None:
    t = np.asarray(events.t, dtype=float)
    if len(t) == 0:
        return
    if np.any(np.diff(t) <= 0):
        raise ValueError("measurement times must be strictly increasing")
    eps = 1e-9 * max(1.0, abs(t_end))
    if t[0] < t_start - eps or t[-1] > t_end + eps:
        raise ValueError("measurement times must lie inside the IMU time span")
    b = np.asarray(events.b)
    if b.ndim != 3 or b.shape[1:] != (n_vectors, 3):
        raise ValueError(f"vector measurements must have shape (m, {n_vectors}, 3)")
