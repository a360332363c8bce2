import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybrid_attitude.exceptions import AxisNotUnit, NotAntiSymmetric
from hybrid_attitude.so3 import (
    AngleAxis,
    angle_axis_to_rotation,
    distance_to_identity,
    exp_so3,
    orthonormality_error,
    pa,
    project_to_so3,
    psi,
    random_rotation,
    skew,
    vec,
    weighted_vector_identity_check,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
mat3 = arrays(np.float64, (3, 3), elements=finite)
unit_axes = vec3.filter(lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: v / np.linalg.norm(v))


def test_skew_matches_cross_product_matrix():
    np.testing.assert_array_equal(skew([1, 2, 3]), [[0, -3, 2], [3, 0, -1], [-2, 1, 0]])
    np.testing.assert_array_equal(skew([0, 0, 0]), np.zeros((3, 3)))


@given(vec3, vec3)
def test_skew_is_cross_product(x, y):
    np.testing.assert_allclose(skew(x) @ y, np.cross(x, y), atol=1e-12)
    np.testing.assert_array_equal(skew(x).T, -skew(x))


def test_vec_roundtrip_and_rejects_symmetric():
    np.testing.assert_array_equal(vec(skew([1, 2, 3])), [1, 2, 3])
    np.testing.assert_array_equal(vec(np.zeros((3, 3))), np.zeros(3))
    with pytest.raises(NotAntiSymmetric):
        vec(np.diag([1.0, 2.0, 3.0]))


def test_vec_roundtrip_random():
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(100, 3)):
        np.testing.assert_array_equal(vec(skew(x)), x)


@given(mat3)
def test_pa_is_antisymmetric_projection(M):
    P = pa(M)
    np.testing.assert_allclose(P + P.T, 0.0, atol=1e-12)
    np.testing.assert_allclose(pa(P), P, atol=1e-12)


def test_pa_fixed_points():
    np.testing.assert_array_equal(pa(np.eye(3)), np.zeros((3, 3)))
    S = skew([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(pa(S), S)


def test_psi_components():
    M = np.arange(9.0).reshape(3, 3) ** 2
    a = M
    expected = 0.5 * np.array([a[2, 1] - a[1, 2], a[0, 2] - a[2, 0], a[1, 0] - a[0, 1]])
    np.testing.assert_allclose(psi(M), expected)
    np.testing.assert_array_equal(psi(np.eye(3)), np.zeros(3))
    np.testing.assert_allclose(psi(skew([1.0, -2.0, 0.5])), [1.0, -2.0, 0.5])


@given(mat3, vec3)
def test_trace_identity(M, x):
    lhs = np.trace(M.T @ skew(x))
    rhs = 2.0 * x @ psi(M)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.abs(M).max() * np.abs(x).max())


def test_rodrigues_reference_values():
    np.testing.assert_allclose(angle_axis_to_rotation(0.0, [0, 1, 0]), np.eye(3))
    np.testing.assert_allclose(
        angle_axis_to_rotation(np.pi, [0, 0, 1]), np.diag([-1.0, -1.0, 1.0]), atol=1e-15
    )
    R = angle_axis_to_rotation(AngleAxis(np.pi / 2, np.array([1.0, 0.0, 0.0])))
    np.testing.assert_allclose(R, [[1, 0, 0], [0, 0, -1], [0, 1, 0]], atol=1e-15)


def test_rodrigues_rejects_non_unit_axis():
    with pytest.raises(AxisNotUnit):
        angle_axis_to_rotation(1.0, [1.0, 1.0, 0.0])


@given(st.floats(0, np.pi), unit_axes)
def test_distance_of_angle_axis(theta, u):
    R = angle_axis_to_rotation(theta, u)
    assert orthonormality_error(R) <= 1e-12
    assert abs(np.linalg.det(R) - 1.0) <= 1e-12
    assert abs(distance_to_identity(R) ** 2 - (1 - np.cos(theta)) / 2) <= 1e-12


def test_distance_reference_values():
    assert distance_to_identity(np.eye(3)) == 0.0
    assert distance_to_identity(angle_axis_to_rotation(np.pi, [0, 1, 0])) == pytest.approx(1.0, abs=1e-15)
    assert distance_to_identity(angle_axis_to_rotation(np.pi / 2, [1, 0, 0])) == pytest.approx(
        np.sqrt(0.5), abs=1e-15
    )
    # 0.99 pi initial error of the reference scenario
    u = np.ones(3) / np.sqrt(3)
    d = distance_to_identity(angle_axis_to_rotation(0.99 * np.pi, u))
    assert d**2 == pytest.approx((1 - np.cos(0.99 * np.pi)) / 2, abs=1e-12)


def test_distance_resolves_small_angles():
    # sqrt(tr(I - R)/4) rounds to zero here; the sine form keeps the angle
    R = exp_so3([1e-10, 0.0, 0.0])
    assert distance_to_identity(R) == pytest.approx(0.5e-10, rel=1e-6)


def test_exp_matches_rodrigues():
    np.testing.assert_array_equal(exp_so3([0, 0, 0]), np.eye(3))
    np.testing.assert_allclose(
        exp_so3([np.pi / 2, 0, 0]), angle_axis_to_rotation(np.pi / 2, [1, 0, 0]), atol=1e-15
    )


@given(vec3)
def test_exp_inverse_and_orthonormal(w):
    R = exp_so3(w)
    assert orthonormality_error(R) <= 1e-12
    np.testing.assert_allclose(R @ exp_so3(-w), np.eye(3), atol=1e-12)


@given(arrays(np.float64, 3, elements=st.floats(-1e-8, 1e-8)))
def test_exp_small_angle_branch(w):
    exact = np.eye(3) + skew(w) + 0.5 * skew(w) @ skew(w)
    np.testing.assert_allclose(exp_so3(w), exact, atol=1e-15)


def test_exp_is_continuous_at_threshold():
    u = np.array([0.6, 0.0, 0.8])
    for theta in (1e-8 * (1 - 1e-6), 1e-8 * (1 + 1e-6)):
        np.testing.assert_allclose(exp_so3(u * theta), angle_axis_to_rotation(theta, u), atol=1e-16)


def test_weighted_identity_reference():
    lhs, rhs = weighted_vector_identity_check([1.0], [[1, 0, 0]], angle_axis_to_rotation(np.pi / 2, [0, 0, 1]))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    lhs, rhs = weighted_vector_identity_check([2.0, 0.5], [[1, 2, 3], [0, -1, 4]], np.eye(3))
    np.testing.assert_array_equal(lhs, np.zeros(3))
    np.testing.assert_allclose(rhs, np.zeros(3), atol=1e-15)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_weighted_identity_random(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(1, 5)
    X = random_rotation(rng)
    lhs, rhs = weighted_vector_identity_check(rng.uniform(0, 3, n), rng.normal(size=(n, 3)), X)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_random_rotation_batch_and_projection():
    rng = np.random.default_rng(1)
    R = random_rotation(rng, 500)
    assert R.shape == (500, 3, 3)
    assert orthonormality_error(R).max() < 1e-12
    # Haar measure: E[tr R] = 0
    assert abs(np.trace(R, axis1=1, axis2=2).mean()) < 0.15
    noisy = R[0] + 1e-3 * rng.normal(size=(3, 3))
    P = project_to_so3(noisy)
    assert orthonormality_error(P) < 1e-12 and np.linalg.det(P) > 0
