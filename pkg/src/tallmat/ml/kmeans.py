"""Lloyd's k-means; every iteration is one fused pass over ``X``."""

from dataclasses import dataclass, field

import numpy as np

from ..dag import Matrix, materialize, set_cache, to_local
from ..engine import get_engine
from ..errors import ShapeError
from ..genops import agg, agg_row, as_matrix, groupby, groupby_row, inner_prod, mapply, mapply_row
from ..rbase import rep_int, subset_rows


@dataclass
class KmeansResult:
    centers: np.ndarray
    assignment: Matrix           # n x 1 labels in [0, k)
    iterations: int = 0
    moved_last: int = -1
    converged: bool = False
    objective_trace: list = field(default_factory=list)
    moved_trace: list = field(default_factory=list)

    def labels(self) -> np.ndarray:
        return to_local(self.assignment).reshape(-1)


def init_centers(X: Matrix, k: int, seed: int, candidates: int = 1024) -> np.ndarray:
    """``k`` distinct rows of ``X`` chosen by seeded D^2 sampling.

    A seeded random sample of rows is gathered once; the first center is drawn
    uniformly from it and each further center with probability proportional
    to its squared distance from the nearest center chosen so far.  Rows equal
    to a chosen center have weight zero, so the centers are distinct.
    """
    n = X.nrow
    rng = np.random.default_rng(seed)
    m = min(n, max(candidates, 4 * k))
    take = np.sort(rng.choice(n, size=m, replace=False))
    pool = to_local(subset_rows(X, take)).astype(np.float64)
    rows = [pool[rng.integers(m)]]
    d2 = np.sum((pool - rows[0]) ** 2, axis=1)
    while len(rows) < k:
        total = d2.sum()
        if not total > 0:
            raise ShapeError(f"kmeans: only {len(rows)} distinct rows among {m} sampled, k={k}")
        i = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        rows.append(pool[min(i, m - 1)])
        d2 = np.minimum(d2, np.sum((pool - rows[-1]) ** 2, axis=1))
    return np.array(rows)


def kmeans_step(X: Matrix, centers: np.ndarray, prev: Matrix | None, cache: str):
    """Build one iteration's DAG; returns the lazy pieces without computing."""
    n = X.nrow
    k = centers.shape[0]
    D = inner_prod(X, centers.T, "euclidean", "+")
    I = agg_row(D, "which.min")
    set_cache(I, cache)
    CNT = groupby(rep_int(1, n), I, "+", k)
    S = groupby_row(X, I, "+", k)
    obj = agg(agg_row(D, "min"), "+")
    moved = agg(mapply(I, prev, "!="), "+") if prev is not None else None
    return D, I, CNT, S, obj, moved


def kmeans(X, k: int, max_iters: int = 25, seed: int = 0, init: np.ndarray | None = None) -> KmeansResult:
    X = as_matrix(X)
    n, p = X.shape
    if not 1 <= k <= n:
        raise ShapeError(f"kmeans: k={k} must be in [1, n={n}]")
    centers = init_centers(X, k, seed) if init is None else np.array(init, dtype=np.float64)
    cache = get_engine().config.backing
    prev = None
    res = KmeansResult(centers, None)
    for it in range(1, max_iters + 1):
        D, I, CNT, S, obj, moved = kmeans_step(X, centers, prev, cache)
        materialize(*[h for h in (CNT, S, obj, moved) if h is not None])
        # new centers: divide each cluster's row sum by its size
        C = to_local(mapply_row(S.t(), CNT, "/")).T
        counts = to_local(CNT).reshape(-1)
        empty = counts == 0
        C[empty] = centers[empty]
        nmoved = n if moved is None else int(moved.item())
        res.objective_trace.append(float(obj.item()))
        res.moved_trace.append(nmoved)
        res.iterations = it
        res.moved_last = nmoved
        res.assignment = I
        prev = I
        if nmoved == 0:
            res.converged = True
            break
        centers = C
    res.centers = centers
    return res
