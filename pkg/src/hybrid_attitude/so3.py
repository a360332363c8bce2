"""
Small-matrix algebra on SO(3).

Every function broadcasts over leading dimensions, so a stack of vectors with
shape ``(..., 3)`` maps to a stack of matrices with shape ``(..., 3, 3)`` and
back. Rotations are kept as full 3x3 matrices throughout.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import AxisNotUnit, NotAntiSymmetric

ANTISYM_TOL = 1e-9
AXIS_TOL = 1e-12
_SMALL_ANGLE = 1e-8


class AngleAxis(NamedTuple):
    theta: float
    u: NDArray


def skew(x: ArrayLike) -> NDArray:
    """
    Map a vector to the skew-symmetric matrix of its cross product.

    Parameters
    ----------
    x : array-like, shape (..., 3)

    Returns
    -------
    ndarray, shape (..., 3, 3)
        ``skew(x) @ y == np.cross(x, y)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (3,))
    out[..., 0, 1] = -x[..., 2]
    out[..., 0, 2] = x[..., 1]
    out[..., 1, 0] = x[..., 2]
    out[..., 1, 2] = -x[..., 0]
    out[..., 2, 0] = -x[..., 1]
    out[..., 2, 1] = x[..., 0]
    return out


def vec(M: ArrayLike, tol: float = ANTISYM_TOL) -> NDArray:
    """
    Inverse of :func:`skew`.

    Raises
    ------
    NotAntiSymmetric
        If ``||M + M^T||_F`` exceeds `tol` for any matrix in the stack.
    """
    M = np.asarray(M, dtype=float)
    residual = np.linalg.norm(M + np.swapaxes(M, -1, -2), axis=(-2, -1))
    if np.any(residual > tol):
        raise NotAntiSymmetric(
            f"symmetric part has Frobenius norm {np.max(residual):.3g} > {tol:.1g}"
        )
    return _vee(M)


def _vee(M: NDArray) -> NDArray:
    return np.stack([M[..., 2, 1], M[..., 0, 2], M[..., 1, 0]], axis=-1)


def pa(M: ArrayLike) -> NDArray:
    """Anti-symmetric part ``(M - M^T) / 2``."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M - np.swapaxes(M, -1, -2))


def psi(M: ArrayLike) -> NDArray:
    """
    Vector of the anti-symmetric part of `M`.

    Equal to ``vec(pa(M))``, i.e.
    ``0.5 * [m32 - m23, m13 - m31, m21 - m12]``.
    """
    M = np.asarray(M, dtype=float)
    return 0.5 * np.stack(
        [
            M[..., 2, 1] - M[..., 1, 2],
            M[..., 0, 2] - M[..., 2, 0],
            M[..., 1, 0] - M[..., 0, 1],
        ],
        axis=-1,
    )


def angle_axis_to_rotation(theta, u: ArrayLike | None = None) -> NDArray:
    """
    Rodrigues formula ``I + sin(theta) u^x + (1 - cos(theta)) (u^x)^2``.

    Parameters
    ----------
    theta : float or array-like or AngleAxis
        Rotation angle in radians. An :class:`AngleAxis` may be passed alone.
    u : array-like, shape (..., 3)
        Unit rotation axis.

    Raises
    ------
    AxisNotUnit
        If ``| ||u|| - 1 | > 1e-12``.
    """
    if u is None:
        theta, u = theta
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(np.linalg.norm(u, axis=-1) - 1.0) > AXIS_TOL):
        raise AxisNotUnit("rotation axis must have unit norm")
    theta = np.asarray(theta, dtype=float)[..., None, None]
    U = skew(u)
    return np.eye(3) + np.sin(theta) * U + (1.0 - np.cos(theta)) * (U @ U)


def exp_so3(w: ArrayLike) -> NDArray:
    """
    Exponential map from rotation vectors to rotation matrices.

    Below 1e-8 rad the Rodrigues coefficients are replaced by their
    second-order Taylor series.
    """
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(np.einsum("...i,...i->...", w, w))
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    W = skew(w)
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * (W @ W)


def distance_to_identity(R: ArrayLike) -> NDArray | float:
    """
    Normalized distance ``|R|_I = sqrt(tr(I - R) / 4)`` in [0, 1].

    Evaluated as ``sin(theta / 2)`` with the rotation angle recovered by
    ``atan2``, which keeps full relative precision for small angles where the
    trace form would cancel.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    s = np.linalg.norm(psi(R), axis=-1)
    theta = np.arctan2(s, 0.5 * (tr - 1.0))
    return np.sin(0.5 * theta)


def weighted_vector_identity_check(rhos, rs, X) -> tuple[NDArray, NDArray]:
    """
    Evaluate both sides of ``psi(Q X) = 1/2 sum_i rho_i (X^T r_i) x r_i``.

    Returns
    -------
    lhs, rhs : ndarray, shape (3,)
        ``Q = sum_i rho_i r_i r_i^T``.
    """
    rhos = np.asarray(rhos, dtype=float)
    rs = np.atleast_2d(np.asarray(rs, dtype=float))
    if rhos.shape[0] != rs.shape[0] or rhos.shape[0] == 0:
        raise ValueError("rhos and rs must be nonempty and of equal length")
    X = np.asarray(X, dtype=float)
    Q = np.einsum("i,ij,ik->jk", rhos, rs, rs)
    lhs = psi(Q @ X)
    rhs = 0.5 * np.sum(rhos[:, None] * np.cross(rs @ X, rs), axis=0)
    return lhs, rhs


def project_to_so3(M: ArrayLike) -> NDArray:
    """Nearest rotation in Frobenius norm (polar factor with det = +1)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.ones(U.shape[:-1])
    D[..., -1] = d
    return (U * D[..., None, :]) @ Vt


def orthonormality_error(R: ArrayLike) -> NDArray | float:
    """``||R^T R - I||_F``."""
    R = np.asarray(R, dtype=float)
    return np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(3), axis=(-2, -1))


def random_rotation(rng: np.random.Generator, size=None) -> NDArray:
    """
    Draw rotations from the uniform (Haar) distribution on SO(3).

    Normalized Gaussian quaternions give an angle density proportional to
    ``1 - cos(theta)`` with a uniformly distributed axis.
    """
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(shape + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R
