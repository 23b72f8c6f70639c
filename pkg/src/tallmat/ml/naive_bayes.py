"""Gaussian naive Bayes."""

from dataclasses import dataclass

import numpy as np

from ..dag import materialize, to_local
from ..errors import LabelError
from ..genops import agg_row, as_matrix, groupby, groupby_row, mapply_row, sapply
from ..rbase import cbind, rep_int
from ._labels import class_labels


@dataclass
class NaiveBayesModel:
    priors: np.ndarray     # k
    means: np.ndarray      # k x p
    variances: np.ndarray  # k x p, floored at eps
    counts: np.ndarray     # k

    @property
    def k(self) -> int:
        return self.priors.size


def naive_bayes_train(X, y, eps: float = 1e-9, k: int | None = None) -> NaiveBayesModel:
    """Class priors and per-feature means/variances from one pass over ``X``."""
    X = as_matrix(X)
    n = X.nrow
    labels, k = class_labels(y, n, k)
    cnt = groupby(rep_int(1, n), labels, "+", k)
    sums = groupby_row(X, labels, "+", k)
    sumsq = groupby_row(X * X, labels, "+", k)
    materialize(cnt, sums, sumsq)
    counts = to_local(cnt).reshape(-1).astype(np.float64)
    if np.any(counts == 0):
        raise LabelError(f"class(es) {np.flatnonzero(counts == 0).tolist()} absent from the training set")
    means = to_local(sums) / counts[:, None]
    var = to_local(sumsq) / counts[:, None] - means * means
    return NaiveBayesModel(counts / n, means, np.maximum(var, eps), counts)


def naive_bayes_predict(model: NaiveBayesModel, X):
    """Most probable class per row, as an ``n x 1`` engine matrix (lazy)."""
    X = as_matrix(X)
    scores = []
    for c in range(model.k):
        mu, var = model.means[c], model.variances[c]
        const = np.log(model.priors[c]) - 0.5 * np.sum(np.log(2.0 * np.pi * var))
        diff = mapply_row(X, mu, "-")
        quad = agg_row(mapply_row(diff * diff, 0.5 / var, "*"), "+")
        scores.append(sapply(quad, "-", scalar=float(const), scalar_left=True))
    return agg_row(cbind(*scores), "which.max")
