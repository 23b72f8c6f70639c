"""Pearson correlation in a single pass over the data."""

import numpy as np

from ..dag import materialize, to_local
from ..errors import ShapeError
from ..genops import as_matrix
from ..rbase import col_sums, crossprod


def correlation(X) -> np.ndarray:
    """``p x p`` correlation matrix of the columns of ``X``.

    Column sums and the Gram matrix share one DAG, so ``X`` is read once.
    Constant columns produce NaN in their row and column.
    """
    X = as_matrix(X)
    n = X.nrow
    if n < 2:
        raise ShapeError(f"correlation needs at least 2 rows, got {n}")
    s, G = col_sums(X), crossprod(X)
    materialize(s, G)
    S = to_local(s).reshape(-1).astype(np.float64)
    G = to_local(G).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = n * G - np.outer(S, S)
        d = n * np.diag(G) - S * S
        corr = num / np.sqrt(np.outer(d, d))
    corr = (corr + corr.T) / 2.0
    idx = np.flatnonzero(d > 0)
    corr[idx, idx] = 1.0
    return corr
