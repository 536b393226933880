import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mftune.errors import FactorizationError, InvalidInputError
from mftune.kernels import (
    KernelSpec,
    SymMatrix,
    cholesky,
    factor_solve,
    kernel_eval,
    kernel_matrix,
)

from conftest import random_spd

finite = st.floats(-5, 5, allow_nan=False)


def test_kernel_eval_zero_distance():
    assert kernel_eval(KernelSpec(2.0, (1.0,)), [0.0], [0.0]) == 2.0


def test_kernel_eval_unit_distance():
    assert kernel_eval(KernelSpec(2.0, (1.0,)), [0.0], [1.0]) == pytest.approx(1.21306, abs=1e-5)
    assert kernel_eval(KernelSpec(2.0, (1.0,)), [0.0], [1.0]) == pytest.approx(2 * math.exp(-0.5))


def test_kernel_eval_ard():
    k = kernel_eval(KernelSpec(1.0, (1.0, 2.0)), [0, 0], [1, 2])
    assert k == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_kernel_eval_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        kernel_eval(KernelSpec(1.0, (1.0, 1.0)), [0.0], [0.0, 1.0])


@pytest.mark.parametrize("bad", [dict(signal_variance=0.0), dict(lengthscales=(1.0, -1.0))])
def test_kernelspec_rejects_invalid(bad):
    args = dict(signal_variance=1.0, lengthscales=(1.0, 1.0)) | bad
    with pytest.raises(InvalidInputError):
        KernelSpec(**args)


def test_kernel_matrix_two_points():
    K = kernel_matrix(KernelSpec(1.0, (1.0,)), [[0.0], [1.0]])
    e = math.exp(-0.5)
    np.testing.assert_allclose(K, [[1, e], [e, 1]], rtol=1e-14)


def test_kernel_matrix_single_point_and_empty():
    spec = KernelSpec(3.0, (0.5,))
    assert kernel_matrix(spec, [[0.2]]).tolist() == [[3.0]]
    assert kernel_matrix(spec, np.zeros((0, 1)), [[0.1], [0.2]]).shape == (0, 2)


def test_kernel_matrix_duplicate_rows():
    K = kernel_matrix(KernelSpec(1.0, (0.3, 0.3)), [[0, 0], [1, 1], [0, 0]])
    np.testing.assert_array_equal(K[0], K[2])
    np.testing.assert_array_equal(K[:, 0], K[:, 2])


def test_kernel_matrix_matches_pairwise_eval(rng):
    spec = KernelSpec(1.7, (0.3, 0.8, 2.0))
    X, Y = rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, (4, 3))
    expected = np.array([[kernel_eval(spec, x, y) for y in Y] for x in X])
    np.testing.assert_allclose(kernel_matrix(spec, X, Y), expected, rtol=1e-12)


@given(arrays(float, (2, 3), elements=finite), st.floats(0.1, 5), st.floats(0.05, 3))
def test_kernel_eval_symmetric(P, v, ell):
    spec = KernelSpec(v, (ell, 2 * ell, ell / 2))
    assert kernel_eval(spec, P[0], P[1]) == kernel_eval(spec, P[1], P[0])


@given(arrays(float, st.tuples(st.integers(1, 12), st.just(2)), elements=finite),
       st.floats(0.05, 3))
def test_kernel_matrix_psd(X, ell):
    K = kernel_matrix(KernelSpec(1.0, (ell, ell)), X)
    assert np.min(np.linalg.eigvalsh(K)) >= -1e-10 * np.trace(K)


def test_factor_solve_examples():
    np.testing.assert_array_equal(factor_solve(np.eye(3), [1.0, 2.0, 3.0]), [1, 2, 3])
    np.testing.assert_allclose(factor_solve(np.diag([2.0, 4.0]), [1.0, 1.0]), [0.5, 0.25])


def test_factor_solve_indefinite_names_min_eigenvalue():
    A = np.diag([1.0, -1.0])
    with pytest.raises(FactorizationError) as info:
        factor_solve(A, [1.0, 1.0])
    assert info.value.min_eigenvalue == pytest.approx(-1.0)
    assert "-1" in str(info.value)


@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_factor_solve_residual(n, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n)
    B = rng.standard_normal((n, 2))
    X = factor_solve(A, B)
    assert np.linalg.norm(A @ X - B) <= 1e-10 * np.linalg.norm(A) * np.linalg.norm(X) + 1e-12


def test_cholesky_jitter_on_singular_matrix():
    x = np.linspace(0, 1, 5)[:, None]
    X = np.vstack([x, x])  # exact duplicates make the gram matrix singular
    K = kernel_matrix(KernelSpec(1.0, (0.3,)), X)
    f = cholesky(K)
    assert f.jitter > 0
    assert f.jitter <= 1e-10 * 10**5
    np.testing.assert_allclose(f.reconstruct(), K + f.jitter * np.eye(10), atol=1e-12)


def test_cholesky_reconstructs(rng):
    A = random_spd(rng, 8)
    f = cholesky(A)
    assert f.jitter == 0.0
    assert np.max(np.abs(f.reconstruct() - A)) <= 1e-8 * np.max(np.abs(A))


def test_cholesky_extend_matches_full(rng):
    A = random_spd(rng, 6)
    f = cholesky(A[:5, :5]).extend(A[:5, 5], A[5, 5])
    np.testing.assert_allclose(f.lower, np.linalg.cholesky(A), atol=1e-10)


def test_cholesky_extend_rejects_dependent_row():
    f = cholesky(np.eye(2))
    assert f.extend([1.0, 0.0], 1.0) is None


def test_symmatrix_checks_symmetry():
    with pytest.raises(InvalidInputError):
        SymMatrix([[1.0, 2.0], [0.0, 1.0]])
    S = SymMatrix([[2.0, 0.0], [0.0, 1.0]])
    assert S.eigvalsh().tolist() == [2.0, 1.0]
    assert S.min_eigenvalue() == 1.0
