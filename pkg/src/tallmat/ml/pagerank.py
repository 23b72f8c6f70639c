"""PageRank by power iteration over a semi-external sparse graph."""

from dataclasses import dataclass, field

import numpy as np

from ..engine import get_engine
from ..sparse import CsrGraph, out_degrees, spmv_semi_external, transpose


@dataclass
class PagerankState:
    pr: np.ndarray
    damping: float
    epsilon: float
    iterations: int = 0
    converged: bool = False
    bytes_per_iter: list = field(default_factory=list)


def pagerank(G: CsrGraph, d: float = 0.15, epsilon: float | None = None, max_iters: int = 100) -> PagerankState:
    """``pr' = (1 - d) / n + d * t(G) (pr / outdeg)``; dangling vertices send nothing.

    ``t(G)`` is written once before iterating, so each iteration streams one
    CSR file.  Stops when every entry moves by less than ``epsilon``
    (default ``0.01 / n``).
    """
    eng = get_engine()
    n = G.n
    eps = 0.01 / n if epsilon is None else float(epsilon)
    deg = out_degrees(G).astype(np.float64)
    GT = transpose(G)
    pr = np.full(n, 1.0 / n)
    state = PagerankState(pr, d, eps)
    live = deg > 0
    for it in range(1, max_iters + 1):
        contrib = np.zeros(n)
        contrib[live] = pr[live] / deg[live]
        before = eng.io.read_of(GT.name)
        pr_new = (1.0 - d) / n + d * spmv_semi_external(GT, contrib)
        state.bytes_per_iter.append(eng.io.read_of(GT.name) - before)
        delta = np.abs(pr_new - pr)
        pr = pr_new
        state.iterations = it
        if np.all(delta < eps):
            state.converged = True
            break
    state.pr = pr
    return state
