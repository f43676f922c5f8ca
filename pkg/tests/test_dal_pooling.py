# Copyright 2026, the gtsa authors, All Rights Reserved
from typing import Any, Iterable

import numpy as np
import pytest

from gtsa.dal_pooling import (
    EigenSolverDivergence, PoolResult, dal_pool, jacobi_eigh, mean_pool, spectral_check, sum_pool,
)
from gtsa.nn_core import backward, constant, matmul, parameter

from .utils import numeric_gradient, relative_error


def fixed_result(mu: np.ndarray, sigma: np.ndarray) -> PoolResult:
    mu_value = constant(mu.reshape(1, -1))
    sigma_value = constant(sigma)
    return PoolResult(z=matmul(mu_value, sigma_value), mu=mu_value, sigma=sigma_value)


def test_two_node_example() -> None:
    result = dal_pool(constant(np.array([[1.0, 2.0], [3.0, 4.0]])))
    np.testing.assert_array_equal(result.mu.data, [[2.0, 3.0]])
    np.testing.assert_array_equal(result.sigma.data, np.ones((2, 2)))
    np.testing.assert_array_equal(result.z.data, [[5.0, 5.0]])


def test_degenerate_inputs() -> None:
    assert np.all(dal_pool(constant(np.array([[1.0, -4.0, 2.0]]))).z.data == 0)
    assert np.all(dal_pool(constant(np.tile([[1.0, -4.0, 2.0]], (7, 1)))).z.data == 0)
    centered = np.random.default_rng(0).normal(size=(8, 3))
    centered -= centered.mean(axis=0)
    np.testing.assert_allclose(dal_pool(constant(centered)).z.data, 0, atol=1e-12)


def test_shape_and_permutation_invariance() -> None:
    rng = np.random.default_rng(1)
    for _ in range(50):
        h = rng.normal(size=(int(rng.integers(1, 30)), int(rng.integers(1, 9))))
        z = dal_pool(constant(h)).z.data
        assert z.shape == (1, h.shape[1])
        shuffled = dal_pool(constant(h[rng.permutation(len(h))])).z.data
        np.testing.assert_allclose(shuffled, z, rtol=1e-10, atol=1e-12)


def test_cubic_homogeneity() -> None:
    h = np.random.default_rng(2).normal(size=(10, 4))
    z = dal_pool(constant(h)).z.data
    np.testing.assert_allclose(dal_pool(constant(-2.0 * h)).z.data, -8.0 * z, rtol=1e-12)


def test_pool_gradient() -> None:
    h = parameter(np.random.default_rng(3).normal(size=(6, 3)))
    weights = constant(np.random.default_rng(4).normal(size=(3, 1)))
    backward(matmul(dal_pool(h).z, weights))
    numeric = numeric_gradient(lambda: float((dal_pool(h).z.data @ weights.data)[0, 0]), h.data)
    assert relative_error(h.grad, numeric) < 1e-6


def test_baseline_pools() -> None:
    h = constant(np.array([[1.0, 2.0], [3.0, 6.0]]))
    np.testing.assert_array_equal(mean_pool(h).data, [[2.0, 4.0]])
    np.testing.assert_array_equal(sum_pool(h).data, [[4.0, 8.0]])


def test_spectral_identity() -> None:
    mu = np.array([1.0, 2.0, 3.0])
    diagnostics = spectral_check(fixed_result(mu, np.eye(3)))
    np.testing.assert_allclose(diagnostics.eigenvalues, 1.0)
    np.testing.assert_allclose(diagnostics.reconstruction, mu)
    assert diagnostics.rank == 3


def test_spectral_rank_deficient() -> None:
    diagnostics = spectral_check(fixed_result(np.array([1.0, 1.0]), np.diag([2.0, 0.0])))
    np.testing.assert_allclose(diagnostics.eigenvalues, [2.0, 0.0])
    np.testing.assert_allclose(diagnostics.reconstruction, [2.0, 0.0])
    assert diagnostics.rank == 1


def test_spectral_random() -> None:
    rng = np.random.default_rng(5)
    for _ in range(200):
        result = dal_pool(constant(rng.normal(size=(int(rng.integers(1, 20)), int(rng.integers(1, 17))))))
        diagnostics = spectral_check(result)
        z = result.z.data.ravel()
        assert diagnostics.residual <= 1e-9 * (1 + np.linalg.norm(z))
        assert diagnostics.orthogonality_error <= 1e-9
        assert np.all(np.diff(diagnostics.eigenvalues) <= 1e-12)
        assert diagnostics.eigenvalues.min() >= -1e-10


def test_jacobi_matches_numpy() -> None:
    rng = np.random.default_rng(6)
    a = rng.normal(size=(12, 12))
    a = a + a.T
    eigenvalues, eigenvectors = jacobi_eigh(a)
    np.testing.assert_allclose(eigenvalues, np.linalg.eigvalsh(a)[::-1], atol=1e-10)
    np.testing.assert_allclose(a @ eigenvectors, eigenvectors * eigenvalues, atol=1e-9)


def test_jacobi_sweep_limit() -> None:
    with pytest.raises(EigenSolverDivergence):
        jacobi_eigh(np.array([[1.0, 0.5], [0.5, 2.0]]), max_sweeps=0)
    eigenvalues, _ = jacobi_eigh(np.diag([1.0, 3.0]), max_sweeps=0)
    np.testing.assert_array_equal(eigenvalues, [3.0, 1.0])


def readout_shapes() -> Iterable[Any]:
    rng = np.random.default_rng(7)
    yield pytest.param(87, 6, 0, id='87x6')
    yield pytest.param(200, 64, 1, id='200x64')
    yield pytest.param(3, 64, 2, id='3x64')
    for index in range(12):
        n = int(rng.integers(1, 201))
        f = int(rng.integers(2, 65))
        yield pytest.param(n, f, 10 + index, id='{}x{}'.format(n, f))


@pytest.mark.parametrize("n,f,seed", readout_shapes())
def test_spectral_check_at_readout_sizes(n: int, f: int, seed: int) -> None:
    result = dal_pool(constant(np.random.default_rng(seed).normal(size=(n, f))))
    diagnostics = spectral_check(result)
    scale = np.linalg.norm(result.sigma.data) * np.linalg.norm(result.mu.data)
    assert diagnostics.residual <= 1e-9 * max(1.0, scale)
    assert diagnostics.orthogonality_error <= 1e-9
    assert diagnostics.rank <= min(n - 1, f)


@pytest.mark.filterwarnings('error')
def test_jacobi_tiny_couplings() -> None:
    a = np.diag([1e6, 1.0, 1e-6])
    a[0, 2] = a[2, 0] = 1e-300
    a[1, 2] = a[2, 1] = 1e-12
    eigenvalues, eigenvectors = jacobi_eigh(a)
    np.testing.assert_allclose(eigenvalues, [1e6, 1.0, 1e-6], rtol=1e-9)
    np.testing.assert_allclose(eigenvectors.T @ eigenvectors, np.eye(3), atol=1e-12)
