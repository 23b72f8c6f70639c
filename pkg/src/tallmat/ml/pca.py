"""Principal components from the eigen-decomposition of the Gram matrix."""

from dataclasses import dataclass

import numpy as np

from ..dag import materialize, to_local
from ..errors import ShapeError
from ..genops import as_matrix
from ..linalg import jacobi_eigh
from ..rbase import col_sums, crossprod


@dataclass
class PcaResult:
    values: np.ndarray   # k leading eigenvalues, descending
    vectors: np.ndarray  # p x k, orthonormal columns
    gram: np.ndarray     # the p x p matrix that was decomposed


def pca(X, k: int | None = None, center: bool = False, tol: float = 1e-12) -> PcaResult:
    """Top-``k`` eigenpairs of ``t(X) X`` (or of the covariance when ``center``)."""
    X = as_matrix(X)
    n, p = X.shape
    k = p if k is None else int(k)
    if not 1 <= k <= p:
        raise ShapeError(f"pca: k must be in [1, {p}], got {k}")
    G = crossprod(X)
    if center:
        s = col_sums(X)
        materialize(s, G)
        mu = to_local(s).reshape(-1) / n
        gram = (to_local(G).astype(np.float64) - n * np.outer(mu, mu)) / (n - 1)
    else:
        gram = to_local(G).astype(np.float64)
    values, vectors = jacobi_eigh(gram, tol=tol)
    return PcaResult(values[:k], vectors[:, :k], gram)
