# Copyright 2026, the gtsa authors, All Rights Reserved
"""Graph readouts: distribution-aware z = Sigma mu, plus mean and sum baselines.

The spectral check decomposes Sigma with a cyclic Jacobi eigensolver and
rebuilds z as sum_i lambda_i alpha_i u_i with alpha = U^T mu, i.e. the mean
reweighted along the principal directions of the node distribution.
"""
from typing import Tuple
import logging

import attr
import numpy as np

from gtsa.config import GTSAConfig
from gtsa.nn_core import Value, covariance, matmul, mean_rows, sum_rows

_LOG = logging.getLogger(__name__)


class EigenSolverDivergence(RuntimeError):
    pass


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class PoolResult:
    # 1 x f rows on the tape; z = mu @ sigma equals (sigma mu)^T since sigma is symmetric
    z: Value
    mu: Value
    sigma: Value


def dal_pool(h: Value) -> PoolResult:
    assert h.shape[0] >= 1
    mu = mean_rows(h)
    sigma = covariance(h)
    return PoolResult(z=matmul(mu, sigma), mu=mu, sigma=sigma)


def mean_pool(h: Value) -> Value:
    return mean_rows(h)


def sum_pool(h: Value) -> Value:
    return sum_rows(h)


def _rotate(a: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    # angle zeroing a[p, q]; atan2 keeps it finite for tiny a[p, q]
    phi = 0.5 * np.arctan2(2.0 * a[p, q], a[q, q] - a[p, p])
    c = np.cos(phi)
    s = np.sin(phi)
    col_p = a[:, p].copy()
    col_q = a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q
    row_p = a[p, :].copy()
    row_q = a[q, :].copy()
    a[p, :] = c * row_p - s * row_q
    a[q, :] = s * row_p + c * row_q
    a[p, q] = a[q, p] = 0.0
    vec_p = v[:, p].copy()
    vec_q = v[:, q].copy()
    v[:, p] = c * vec_p - s * vec_q
    v[:, q] = s * vec_p + c * vec_q


def _off_diagonal_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = GTSAConfig.JACOBI_MAX_SWEEPS,
                tol: float = 1e-13) -> Tuple[np.ndarray, np.ndarray]:
    """ Eigenvalues (descending) and orthonormal eigenvector columns of a symmetric matrix """
    a = np.array(matrix, dtype=np.float64)
    assert a.ndim == 2 and a.shape[0] == a.shape[1]
    assert np.allclose(a, a.T, rtol=0, atol=1e-12 * (1 + np.abs(a).max(initial=0.0)))
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    scale = float(np.linalg.norm(a))
    # zeroing every entry below this moves the off-diagonal norm by at most tol * scale
    negligible = tol * scale / max(n, 1)
    for sweep in range(max_sweeps + 1):
        if _off_diagonal_norm(a) <= tol * scale:
            order = np.argsort(-np.diag(a), kind='stable')
            _LOG.debug("Jacobi converged after %d sweeps", sweep)
            return np.diag(a)[order].copy(), v[:, order]
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= negligible:
                    a[p, q] = a[q, p] = 0.0
                else:
                    _rotate(a, v, p, q)
    raise EigenSolverDivergence("Jacobi did not converge in {} sweeps".format(max_sweeps))


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class SpectralDiagnostics:
    eigenvalues: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    eigenvectors: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    alpha: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    reconstruction: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    residual: float
    orthogonality_error: float
    rank: int


def spectral_check(result: PoolResult, rank_tol: float = 1e-10) -> SpectralDiagnostics:
    sigma = result.sigma.data
    mu = result.mu.data.ravel()
    eigenvalues, eigenvectors = jacobi_eigh(sigma)
    alpha = eigenvectors.T @ mu
    reconstruction = eigenvectors @ (eigenvalues * alpha)
    z = sigma @ mu
    threshold = rank_tol * max(1.0, float(np.abs(eigenvalues).max(initial=0.0)))
    return SpectralDiagnostics(
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        alpha=alpha,
        reconstruction=reconstruction,
        residual=float(np.linalg.norm(z - reconstruction)),
        orthogonality_error=float(np.abs(eigenvectors.T @ eigenvectors - np.eye(len(mu))).max(initial=0.0)),
        rank=int(np.sum(eigenvalues > threshold)),
    )
