import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from svinclusion import matrixcore as mc
from svinclusion._validation import InvalidArgumentError, InvalidInputError

shapes = st.tuples(st.integers(1, 4), st.integers(1, 4))
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_identity_svd():
    res = mc.svd(np.eye(2))
    assert np.allclose(res.sigma, [1, 1])
    assert np.allclose(np.abs(res.u_factor @ res.v_factor.T), np.eye(2))


def test_diagonal_sorted_absolute():
    assert np.allclose(mc.singular_values(np.diag([-3.0, 2.0])), [2, 3])


def test_shear_against_characteristic_polynomial():
    s = mc.singular_values(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert s[0] * s[1] == pytest.approx(1.0, abs=1e-13)
    assert (s**2).sum() == pytest.approx(3.0, abs=1e-13)
    # roots of t^2 - 3 t + 1 for t = sigma^2
    assert np.allclose(s**2, [(3 - np.sqrt(5)) / 2, (3 + np.sqrt(5)) / 2])


def test_zero_and_padded():
    assert np.all(mc.singular_values(np.zeros((3, 2))) == 0)
    assert np.allclose(mc.singular_values(mc.rect_identity(2, 3)), [1, 1])


def test_rectangular_against_gram_eigenvalues(rng):
    a = rng.standard_normal((200, 2, 3))
    ev = np.linalg.eigvalsh(np.swapaxes(a, 1, 2) @ a)[:, 1:]  # drop the forced zero
    assert np.allclose(mc.singular_values(a), np.sqrt(ev), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(shapes.flatmap(lambda s: arrays(float, s, elements=finite)))
def test_svd_reconstructs(a):
    res = mc.svd(a)
    N, n = a.shape
    assert np.allclose(res.u_factor @ res.diag() @ res.v_factor.T, a, atol=1e-10)
    assert np.allclose(res.u_factor.T @ res.u_factor, np.eye(N), atol=1e-10)
    assert np.allclose(res.v_factor.T @ res.v_factor, np.eye(n), atol=1e-10)
    assert np.all(np.diff(res.sigma) >= -1e-12)
    assert np.allclose(res.sigma, np.sort(np.linalg.svd(a, compute_uv=False)), atol=1e-10)


def test_batched_matches_loop(rng):
    a = rng.standard_normal((50, 3, 4))
    batched = mc.singular_values(a)
    assert np.allclose(batched, np.array([mc.singular_values(m) for m in a]))


def test_ky_fan():
    assert mc.ky_fan_norm(np.eye(3), 2) == pytest.approx(2)
    assert mc.ky_fan_norm(np.diag([1.0, 2.0]), 1) == pytest.approx(2)
    with pytest.raises(InvalidArgumentError):
        mc.ky_fan_norm(np.eye(2), 3)


def test_ky_fan_triangle_inequality(rng):
    a, b = rng.standard_normal((2, 1000, 3, 3))
    for k in (1, 2, 3):
        lhs = mc.ky_fan_norm(a + b, k)
        assert np.all(lhs <= mc.ky_fan_norm(a, k) + mc.ky_fan_norm(b, k) + 1e-12)


def test_numerical_rank():
    assert mc.numerical_rank(np.eye(2), 1e-8) == 2
    assert mc.numerical_rank(np.outer([1.0, 0], [1.0, 0])) == 1
    dg = np.array([[1.0, 1.0], [1.0, 1.0]])  # D(x1 + x2, x1 + x2)
    assert mc.numerical_rank(dg) == 1 == np.linalg.matrix_rank(dg @ dg.T)


def test_orth_complement_projection(rng):
    assert np.allclose(mc.orth_complement_projection(rng.standard_normal((2, 2))), 0)
    assert np.allclose(mc.orth_complement_projection(np.outer([1.0, 0], [1.0, 0])), np.diag([0, 1]))
    m = np.outer(rng.standard_normal(2), rng.standard_normal(3))
    p = mc.orth_complement_projection(m)
    assert np.allclose(p @ p, p) and np.allclose(p, p.T)
    assert np.allclose(p @ m, 0) and np.trace(p) == pytest.approx(1)


def test_orth_complement_wide_range_is_everything(rng):
    # a 2x3 full-rank matrix maps onto R^2
    assert np.allclose(mc.orth_complement_projection(rng.standard_normal((2, 3))), 0)
    # a 3x2 one leaves a line
    p = mc.orth_complement_projection(rng.standard_normal((3, 2)))
    assert np.trace(p) == pytest.approx(1)


def test_random_orthogonal(rng):
    q = mc.random_orthogonal(3, rng, 10)
    assert np.allclose(q @ np.swapaxes(q, 1, 2), np.eye(3))


def test_invalid_input():
    with pytest.raises(InvalidInputError):
        mc.svd(np.array([[np.nan, 0], [0, 1]]))
    with pytest.raises(InvalidInputError):
        mc.svd(np.zeros(3))
