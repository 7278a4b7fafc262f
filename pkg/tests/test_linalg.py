import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from corrsift import (CovarianceMatrix, DataMatrix, correlation_from_covariance,
                      log_determinant, sample_covariance, sym_inv_sqrt, sym_sqrt)
from corrsift.errors import (DegenerateVariableError, DimensionError,
                             InsufficientObservationsError, SingularMatrixError)

from conftest import random_spd
from oracles import cofactor_det, covariance_loop


def test_covariance_two_points():
    np.testing.assert_array_equal(sample_covariance(np.array([[0.0], [2.0]])), [[1.0]])


def test_covariance_constant_column_has_zero_variance():
    X = np.column_stack([np.arange(5.0), np.full(5, 3.0)])
    S = sample_covariance(X)
    assert S[1, 1] == 0.0
    with pytest.raises(DegenerateVariableError) as err:
        correlation_from_covariance(S)
    assert err.value.index == 1


def test_covariance_matches_loop_oracle(rng):
    X = rng.standard_normal((10, 3))
    np.testing.assert_allclose(sample_covariance(X), covariance_loop(X), rtol=0, atol=1e-12)


def test_covariance_uses_n_divisor(rng):
    X = rng.standard_normal((7, 2))
    np.testing.assert_allclose(sample_covariance(X), np.cov(X.T, bias=True), atol=1e-14)


def test_covariance_needs_two_rows():
    with pytest.raises(DimensionError):
        sample_covariance(np.ones((1, 3)))


def test_covariance_from_datamatrix_is_wrapped(rng):
    S = sample_covariance(DataMatrix(rng.standard_normal((6, 2))))
    assert isinstance(S, CovarianceMatrix) and S.p == 2


def test_covariance_permutation_is_exact(rng):
    X = rng.standard_normal((12, 5))
    perm = rng.permutation(5)
    S = sample_covariance(X)
    Sp = sample_covariance(X[:, perm])
    assert np.array_equal(Sp, S[np.ix_(perm, perm)])


def test_correlation_examples():
    np.testing.assert_array_equal(correlation_from_covariance(np.diag([4.0, 9.0])).R, np.eye(2))
    R = correlation_from_covariance(np.array([[4.0, 3.0], [3.0, 9.0]])).R
    assert R[0, 1] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DegenerateVariableError) as err:
        correlation_from_covariance(np.array([[0.0, 0.0], [0.0, 1.0]]))
    assert err.value.index == 0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(2, 8))
def test_correlation_scale_invariance(seed, p):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, p)
    D = np.diag(rng.uniform(0.1, 10.0, size=p))
    R1 = correlation_from_covariance(D @ S @ D).R
    R2 = correlation_from_covariance(S).R
    np.testing.assert_allclose(R1, R2, atol=1e-12, rtol=0)
    assert np.all(np.diag(R1) == 1.0) and np.all(np.abs(R1) <= 1.0)


def test_sqrt_examples():
    np.testing.assert_allclose(sym_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(sym_inv_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(sym_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    np.testing.assert_allclose(sym_inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), atol=1e-14)


def test_sqrt_reconstructs_random_spd(rng):
    M = random_spd(rng, 5)
    root = sym_sqrt(M)
    assert np.array_equal(root, root.T)
    assert np.linalg.norm(root @ root - M) / np.linalg.norm(M) < 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 9), cond=st.floats(1.0, 1e6))
def test_inv_sqrt_whitens(seed, p, cond):
    M = random_spd(np.random.default_rng(seed), p, cond)
    W = sym_inv_sqrt(M)
    np.testing.assert_allclose(W @ M @ W, np.eye(p), atol=1e-9)


def test_sqrt_rejects_near_singular():
    with pytest.raises(SingularMatrixError) as err:
        sym_sqrt(np.diag([1.0, 1e-12]))
    assert err.value.ratio == pytest.approx(1e-12)
    with pytest.raises(SingularMatrixError):
        sym_inv_sqrt(np.diag([1.0, -1.0]))


def test_log_determinant_examples(rng):
    assert log_determinant(np.eye(3)) == 0.0
    assert log_determinant(np.diag([2.0, 5.0])) == pytest.approx(math.log(10.0), abs=1e-15)
    M = random_spd(rng, 4)
    assert log_determinant(M) == pytest.approx(math.log(cofactor_det(M)), rel=1e-10)
    with pytest.raises(SingularMatrixError):
        log_determinant(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_covariance_matrix_checks():
    with pytest.raises(DimensionError):
        CovarianceMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(DegenerateVariableError):
        CovarianceMatrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    S = CovarianceMatrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert S.correlation().R[0, 1] == pytest.approx(0.5)


def test_datamatrix_inference_checks(rng):
    with pytest.raises(InsufficientObservationsError):
        DataMatrix(rng.standard_normal((3, 3))).validate_for_inference()
    X = rng.standard_normal((6, 2))
    X[:, 1] = 1.0
    with pytest.raises(DegenerateVariableError):
        DataMatrix(X).validate_for_inference()
    with pytest.raises(DimensionError):
        DataMatrix(np.ones((3, 2)), labels=("a",))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (8, 3), elements=st.floats(-1e3, 1e3)))
def test_covariance_symmetric_psd(X):
    S = sample_covariance(X)
    assert np.array_equal(S, S.T)
    assert np.min(np.linalg.eigvalsh(S)) >= -1e-9 * max(1.0, np.max(np.abs(S)))
