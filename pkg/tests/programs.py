"""Random lazy programs replayable under different engine configurations.

A program is fully determined by its seed: the builder draws data and the
op sequence from one generator, so running it under another engine yields
the same DAG and must yield the same bits.
"""

from __future__ import annotations

import numpy as np

import tallmat as tm

UNARY_F64 = ("abs", "sqrt", "exp", "log1p", "square", "neg", "sigmoid", "softplus", "floor")
BINARY = ("+", "-", "*", "/", "pmin", "pmax", "euclidean", "<", ">=")
FOLDS = ("+", "min", "max")


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def build_program(seed: int, max_depth: int = 6):
    """Return the output handles of one random program on the active engine."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 200))
    p = int(rng.integers(1, 6))
    X = tm.from_local(rng.normal(size=(n, p)))
    pool = [X]
    if rng.random() < 0.5:
        pool.append(tm.runif_matrix(n, p, seed=int(rng.integers(1 << 30))))
    if rng.random() < 0.3:
        pool.append(tm.from_local(rng.integers(-4, 5, size=(n, p))))
    depth = int(rng.integers(1, max_depth + 1))
    for _ in range(depth):
        A = _pick(rng, pool)
        kind = int(rng.integers(8))
        if kind == 0:
            B = tm.sapply(A, _pick(rng, UNARY_F64))
        elif kind == 1:
            B = tm.sapply(A, _pick(rng, BINARY), scalar=float(rng.uniform(-2, 2)))
        elif kind == 2:
            other = [m for m in pool if m.shape == A.shape]
            B = tm.mapply(A, _pick(rng, other), _pick(rng, BINARY))
        elif kind == 3:
            B = tm.mapply_row(A, rng.normal(size=A.ncol), _pick(rng, BINARY))
        elif kind == 4:
            B = tm.mapply_col(A, tm.agg_row(A, _pick(rng, FOLDS)), _pick(rng, BINARY))
        elif kind == 5:
            q = int(rng.integers(1, 4))
            B = tm.inner_prod(A, rng.normal(size=(A.ncol, q)), _pick(rng, ("*", "euclidean")), "+")
        elif kind == 6:
            B = tm.cbind(A, tm.agg_row(A, "max"))
        else:
            B = tm.sapply(A, "as.f64")
        pool.append(B)
    top = pool[-1]
    outs = [tm.agg(top, _pick(rng, ("+", "max", "which.max"))), tm.agg_col(top, _pick(rng, FOLDS)),
            tm.crossprod(top)]
    labels = tm.agg_row(top, "which.max")
    outs.append(tm.groupby_row(top, labels, "+", top.ncol))
    if rng.random() < 0.5:
        outs.append(top)
    return outs


def run_program(seed: int, engine) -> list[np.ndarray]:
    with engine.activate():
        outs = build_program(seed)
        tm.materialize(*outs)
        return [tm.to_local(o) for o in outs]
