"""Linear discriminant analysis with a pooled within-class covariance."""

from dataclasses import dataclass

import numpy as np

from ..dag import materialize, to_local
from ..errors import LabelError
from ..genops import agg_row, as_matrix, groupby, groupby_row, mapply_row
from ..linalg import gauss_jordan_inverse
from ..rbase import crossprod, matmul, rep_int
from ._labels import class_labels


@dataclass
class LdaModel:
    means: np.ndarray        # k x p
    covariance: np.ndarray   # p x p pooled
    inverse: np.ndarray      # p x p
    priors: np.ndarray       # k
    coef: np.ndarray         # p x k, W^-1 mu_c
    intercept: np.ndarray    # k


def lda_train(X, y, k: int | None = None) -> LdaModel:
    """Class means, counts and the Gram matrix come from a single pass."""
    X = as_matrix(X)
    n, p = X.shape
    labels, k = class_labels(y, n, k)
    if k < 2:
        raise LabelError("LDA needs at least two classes")
    cnt = groupby(rep_int(1, n), labels, "+", k)
    sums = groupby_row(X, labels, "+", k)
    G = crossprod(X)
    materialize(cnt, sums, G)
    counts = to_local(cnt).reshape(-1).astype(np.float64)
    if np.any(counts < 2):
        raise LabelError(f"every class needs at least 2 samples, got counts {counts.astype(int).tolist()}")
    S = to_local(sums).astype(np.float64)
    means = S / counts[:, None]
    # within-class scatter = t(X) X - sum_c n_c mu_c t(mu_c)
    W = (to_local(G).astype(np.float64) - means.T @ (counts[:, None] * means)) / (n - k)
    W = (W + W.T) / 2.0
    Winv = gauss_jordan_inverse(W)
    priors = counts / n
    coef = Winv @ means.T
    intercept = -0.5 * np.einsum("cp,pc->c", means, coef) + np.log(priors)
    return LdaModel(means, W, Winv, priors, coef, intercept)


def lda_predict(model: LdaModel, X):
    """Arg-max discriminant per row, as an ``n x 1`` engine matrix (lazy)."""
    X = as_matrix(X)
    scores = mapply_row(matmul(X, model.coef), model.intercept, "+")
    return agg_row(scores, "which.max")
