import numpy as np
import pytest
from hypothesis import given, strategies as st

from splitft.linalg import (
    Matrix,
    ShapeError,
    as_matrix,
    axpy,
    check_finite,
    derive_seed,
    gaussian_init,
    matmul,
)


def test_derive_seed_deterministic_and_distinct():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed("ab") != derive_seed("ba")


def test_derive_seed_handles_negative_ints():
    assert derive_seed(-1, "x") == derive_seed(-1, "x")


def test_gaussian_init_reproducible():
    a = gaussian_init(5, 7, 0.02, 123)
    b = gaussian_init(5, 7, 0.02, 123)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gaussian_init(5, 7, 0.02, 124))


def test_gaussian_init_scales_linearly_in_sigma():
    a = gaussian_init(4, 4, 1.0, 9)
    b = gaussian_init(4, 4, 0.5, 9)
    assert np.allclose(b, 0.5 * a)
    assert np.array_equal(gaussian_init(4, 4, 0.0, 9), np.zeros((4, 4)))


def test_gaussian_init_rejects_bad_args():
    with pytest.raises(ShapeError):
        gaussian_init(0, 3, 1.0, 1)
    with pytest.raises(ValueError):
        gaussian_init(2, 2, -1.0, 1)


def test_matmul_shape_check():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    out = matmul(np.ones((2, 3)), np.ones((3, 4)))
    assert out.shape == (2, 4)


def test_as_matrix_rejects_non_2d():
    with pytest.raises(ShapeError):
        as_matrix(np.ones(3))


@given(st.integers(1, 6), st.integers(1, 6), st.floats(-10, 10))
def test_axpy_matches_definition(r, c, alpha):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((r, c))
    y = rng.standard_normal((r, c))
    assert np.allclose(axpy(alpha, x, y), alpha * x + y)


def test_axpy_shape_check():
    with pytest.raises(ShapeError):
        axpy(1.0, np.ones((2, 2)), np.ones((2, 3)))


def test_check_finite():
    m = np.ones((2, 2))
    assert check_finite(m) is m
    m[0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        check_finite(m)
