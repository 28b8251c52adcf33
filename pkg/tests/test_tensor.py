import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdmr_homog.errors import SingularTensor
from hdmr_homog.tensor import I2, I4, ddot42, det2, flatten, inv2, major_asymmetry, unflatten

finite = st.floats(-1e6, 1e6, allow_nan=False)


@pytest.mark.parametrize("t, expected", [
    (np.eye(2), 1.0),
    (np.diag([2.0, 1.0]), 2.0),
    (np.array([[0.8, 0.5], [0.5, 0.8]]), 0.39),
])
def test_det2_examples(t, expected):
    assert det2(t) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("t, expected", [
    (np.eye(2), np.eye(2)),
    (np.diag([2.0, 4.0]), np.diag([0.5, 0.25])),
    (np.array([[1.0, 0.3], [0.0, 1.0]]), np.array([[1.0, -0.3], [0.0, 1.0]])),
])
def test_inv2_examples(t, expected):
    np.testing.assert_allclose(inv2(t), expected, atol=1e-15)
    np.testing.assert_allclose(t @ inv2(t), I2, atol=1e-14)


def test_inv2_singular():
    with pytest.raises(SingularTensor):
        inv2(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_inv2_stack_matches_numpy(rng):
    T = rng.normal(size=(50, 2, 2)) + 2 * I2
    np.testing.assert_allclose(inv2(T), np.linalg.inv(T), rtol=1e-12, atol=1e-14)


def test_ddot42_examples(rng):
    t = rng.normal(size=(2, 2))
    np.testing.assert_array_equal(ddot42(I4, t), t)
    np.testing.assert_array_equal(ddot42(np.zeros((2, 2, 2, 2)), t), np.zeros((2, 2)))
    C = np.zeros((2, 2, 2, 2))
    C[0, 0, 0, 0] = 5.0
    np.testing.assert_array_equal(ddot42(C, I2), np.array([[5.0, 0.0], [0.0, 0.0]]))


def test_ddot42_bilinear(rng):
    C1, C2 = rng.normal(size=(2, 2, 2, 2, 2))
    a, b = rng.normal(size=(2, 2, 2))
    s, r = 0.7, -1.3
    np.testing.assert_allclose(ddot42(C1, s * a + r * b), s * ddot42(C1, a) + r * ddot42(C1, b), atol=1e-13)
    np.testing.assert_allclose(ddot42(s * C1 + r * C2, a), s * ddot42(C1, a) + r * ddot42(C2, a), atol=1e-13)


@given(arrays(float, (2, 2), elements=finite))
def test_flatten_roundtrip(t):
    v = flatten(t)
    assert v.tolist() == [t[0, 0], t[0, 1], t[1, 0], t[1, 1]]
    np.testing.assert_array_equal(unflatten(v), t)


@settings(max_examples=200)
@given(arrays(float, (2, 2), elements=st.floats(-3, 3)))
def test_inv2_involution(t):
    if abs(det2(t)) < 1e-2 or np.linalg.cond(t) > 1e3:
        return
    np.testing.assert_allclose(inv2(inv2(t)), t, rtol=1e-12, atol=1e-12 * np.abs(t).max())


def test_major_asymmetry():
    assert major_asymmetry(I4) == 0.0
    assert major_asymmetry(np.zeros((2, 2, 2, 2))) == 0.0
    C = np.zeros((2, 2, 2, 2))
    C[0, 0, 1, 1] = 1.0
    assert major_asymmetry(C) == 1.0
