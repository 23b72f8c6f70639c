"""Logistic regression by gradient descent with Armijo backtracking.

Each iteration evaluates a ladder of candidate step sizes
``eta, eta*shrink, eta*shrink^2, ...`` together, so the cost and gradient of
every candidate come out of one pass over ``X``; the first candidate meeting
the sufficient-decrease test is taken.
"""

from dataclasses import dataclass, field

import numpy as np

from ..dag import materialize, to_local
from ..errors import LabelError, ShapeError
from ..genops import agg, agg_col, as_matrix, mapply_col, sapply
from ..rbase import crossprod, matmul


@dataclass
class LogisticModel:
    theta: np.ndarray
    logloss_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stalled: bool = False
    step_sizes: list = field(default_factory=list)

    def predict_proba(self, X):
        return sapply(matmul(as_matrix(X), self.theta.reshape(-1, 1)), "sigmoid")

    def predict(self, X):
        return sapply(self.predict_proba(X), ">", scalar=0.5)


def _as_labels(y):
    if hasattr(y, "node"):
        return y if y.elem_type == "f64" else sapply(y, "as.f64")
    return as_matrix(np.asarray(y, dtype=np.float64).reshape(-1, 1))


def _check_binary(y):
    bad = agg(sapply(y, "!=", scalar=0.0) & sapply(y, "!=", scalar=1.0), "|")
    if int(bad.item()):
        raise LabelError("logistic regression needs labels in {0, 1}")


def _batch_cost_grad(X, y, thetas: np.ndarray):
    """Costs (m,) and gradients (p, m) for the columns of ``thetas`` in one pass."""
    n = X.nrow
    Z = matmul(X, thetas)
    yz = mapply_col(Z, y, "*")
    loss = agg_col(sapply(Z, "softplus") - yz, "+")
    resid = mapply_col(sapply(Z, "sigmoid"), y, "-")
    grad = crossprod(X, resid)
    materialize(loss, grad)
    return to_local(loss).reshape(-1) / n, to_local(grad) / n


def logistic_cost_grad(X, y, theta):
    """Mean log-loss and its gradient at ``theta``."""
    X = as_matrix(X)
    y = _as_labels(y)
    cost, grad = _batch_cost_grad(X, y, np.asarray(theta, dtype=np.float64).reshape(-1, 1))
    return float(cost[0]), grad[:, 0]


def logistic_regression(X, y, max_iters: int = 100, tol: float = 1e-6, eta0: float = 1.0,
                        shrink: float = 0.2, armijo: float = 0.5, eta_min: float = 1e-12,
                        ladder: int = 8, check_labels: bool = True) -> LogisticModel:
    X = as_matrix(X)
    n, p = X.shape
    y = _as_labels(y)
    if y.size != n:
        raise ShapeError(f"expected {n} labels, got {y.size}")
    if check_labels:
        _check_binary(y)
    theta = np.zeros(p)
    cost, grad = _batch_cost_grad(X, y, theta.reshape(-1, 1))
    model = LogisticModel(theta, [float(cost[0])])
    cost, grad = float(cost[0]), grad[:, 0]
    for it in range(1, max_iters + 1):
        gg = float(grad @ grad)
        eta = eta0
        accepted = None
        while accepted is None and eta >= eta_min:
            etas = eta * shrink ** np.arange(ladder)
            etas = etas[etas >= eta_min]
            cands = theta[:, None] - grad[:, None] * etas[None, :]
            costs, grads = _batch_cost_grad(X, y, cands)
            ok = np.flatnonzero(costs <= cost - armijo * etas * gg)
            if ok.size:
                m = int(ok[0])
                accepted = (etas[m], cands[:, m], float(costs[m]), grads[:, m])
            eta = etas[-1] * shrink
        if accepted is None:
            model.stalled = True
            break
        step, theta, new_cost, grad = accepted
        model.step_sizes.append(float(step))
        model.logloss_trace.append(new_cost)
        model.iterations = it
        drop = cost - new_cost
        cost = new_cost
        if drop < tol:
            model.converged = True
            break
    model.theta = theta
    return model
