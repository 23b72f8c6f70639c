"""Multivariate normal samples."""

import numpy as np

from ..errors import ShapeError
from ..genops import mapply_row
from ..linalg import jacobi_eigh
from ..rbase import matmul, rnorm_matrix


def mvrnorm(n: int, mu, sigma, seed: int = 0, tol: float = 1e-6):
    """``n x p`` lazy matrix of draws from N(mu, sigma).

    ``X = 1 t(mu) + Z diag(sqrt(lambda)) t(Q)`` with ``sigma = Q diag(lambda) t(Q)``;
    the standard normal draws and the affine map fuse into one DAG.
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma = np.asarray(sigma, dtype=np.float64)
    p = mu.size
    if sigma.shape != (p, p):
        raise ShapeError(f"mvrnorm: sigma must be {p}x{p}, got {sigma.shape}")
    scale = np.max(np.abs(sigma)) or 1.0
    if np.max(np.abs(sigma - sigma.T)) > 1e-12 * scale:
        raise ValueError("mvrnorm: sigma is not symmetric")
    lam, Q = jacobi_eigh(sigma)
    if lam.min() < -tol * abs(lam.max()):
        raise ValueError(f"mvrnorm: sigma is not positive definite (smallest eigenvalue {lam.min():.6g})")
    A = Q * np.sqrt(np.maximum(lam, 0.0))
    Z = rnorm_matrix(n, p, seed)
    return mapply_row(matmul(Z, A.T), mu, "+")
