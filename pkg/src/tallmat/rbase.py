"""Convenience layer: arithmetic, reductions, products, constructors and
structural helpers, each written as a composition of the generalized ops."""

from __future__ import annotations

import builtins
from dataclasses import dataclass

import numpy as np

from .dag import Matrix, from_local, generator, lift, materialize, source, to_local
from .engine import get_engine
from .errors import ShapeError
from .functions import scalar_type
from .genops import (
    agg, agg_col, agg_row, as_matrix, groupby, groupby_col, groupby_row, inner_prod, mapply,
    mapply_col, mapply_row, sapply,
)
from .storage import MatrixMeta, create_tas

__all__ = [
    "arith", "add", "sub", "mul", "div", "pmin", "pmax", "sqrt", "abs", "exp", "log",
    "sum", "row_sums", "col_sums", "rowSums", "colSums", "any", "all", "col_means",
    "matmul", "crossprod", "rep_int", "seq_int", "runif_matrix", "rnorm_matrix",
    "rbind", "cbind", "subset_rows", "subset_cols", "to_local", "from_local", "t",
    "as_blocks", "BlockMatrix", "materialize",
    "sapply", "mapply", "mapply_row", "mapply_col", "agg", "agg_row", "agg_col",
    "groupby", "groupby_row", "groupby_col", "inner_prod",
]


def t(A) -> Matrix:
    """Transpose without moving elements."""
    return as_matrix(A).t()


# ---------------------------------------------------------------------------
# element-wise


def arith(op: str, a, b) -> Matrix:
    """Binary element function with scalar or matrix operands on either side."""
    a_scalar = not isinstance(a, Matrix) and np.ndim(a) == 0
    b_scalar = not isinstance(b, Matrix) and np.ndim(b) == 0
    if a_scalar and b_scalar:
        raise ShapeError(f"{op}: at least one operand must be a matrix")
    if b_scalar:
        return sapply(a, op, scalar=_py_scalar(b))
    if a_scalar:
        return sapply(b, op, scalar=_py_scalar(a), scalar_left=True)
    return mapply(a, b, op)


def _py_scalar(x):
    if isinstance(x, np.generic):
        return x.item()
    scalar_type(x)
    return x


def add(A, B): return arith("+", A, B)
def sub(A, B): return arith("-", A, B)
def mul(A, B): return arith("*", A, B)
def div(A, B): return arith("/", A, B)
def pmin(A, B): return arith("pmin", A, B)
def pmax(A, B): return arith("pmax", A, B)
def sqrt(A): return sapply(A, "sqrt")
def abs(A): return sapply(A, "abs")  # noqa: A001
def exp(A): return sapply(A, "exp")
def log(A): return sapply(A, "log")


# ---------------------------------------------------------------------------
# reductions (all sinks or row vectors)


def sum(A) -> Matrix:  # noqa: A001
    return agg(A, "+")


def any(A) -> Matrix:  # noqa: A001
    return agg(A, "|")


def all(A) -> Matrix:  # noqa: A001
    return agg(A, "&")


def row_sums(A) -> Matrix:
    return agg_row(A, "+")


def col_sums(A) -> Matrix:
    return agg_col(A, "+")


rowSums = row_sums
colSums = col_sums


def col_means(A) -> np.ndarray:
    A = as_matrix(A)
    return to_local(col_sums(A)).reshape(-1) / A.nrow


# ---------------------------------------------------------------------------
# products


def matmul(A, B) -> Matrix | np.ndarray:
    """Matrix product.

    Integer operands go through ``inner_prod(*, +)``; floating point uses a
    tiled kernel with a fixed accumulation order when the left operand
    streams.  Sparse left operands dispatch to the semi-external multiply.
    """
    from .sparse import CooMatrix, CsrGraph, spmv_semi_external

    if isinstance(A, CsrGraph):
        x = to_local(B) if isinstance(B, Matrix) else np.asarray(B)
        return spmv_semi_external(A, x)
    if isinstance(A, CooMatrix):
        return A.dot(to_local(B) if isinstance(B, Matrix) else np.asarray(B))
    A, B = as_matrix(A), as_matrix(B)
    floating = "f64" in (A.elem_type, B.elem_type)
    return inner_prod(A, B, "*", "+", tiled=floating and not A.transposed)


def crossprod(A, B=None) -> Matrix:
    """``t(A) %*% B`` (``B`` defaults to ``A``); a single pass over tall inputs."""
    A = as_matrix(A)
    B = A if B is None else as_matrix(B)
    return inner_prod(A.t(), B, "*", "+")


# ---------------------------------------------------------------------------
# constructors (lazy generators)


def _check_dims(n, p):
    if int(n) < 1 or int(p) < 1:
        raise ShapeError(f"dimensions must be >= 1, got {n}x{p}")
    return int(n), int(p)


def _gen(n, p, etype, state, op):
    n, p = _check_dims(n, p)
    if p > n:
        return generator((p, n), etype, dict(state, transposed=True), op, transposed=True)
    return generator((n, p), etype, dict(state, transposed=False), op)


def rep_int(value, n: int, p: int = 1) -> Matrix:
    """Column vector (or ``n x p`` matrix) filled with ``value``."""
    etype = scalar_type(value)
    return _gen(n, p, etype, {"dist": "rep", "value": value}, "rep_int")


def seq_int(start: int, stop: int, step: int = 1) -> Matrix:
    """Column vector ``start, start+step, ..., stop`` (inclusive)."""
    if step == 0 or (stop - start) * step < 0:
        raise ShapeError(f"seq_int: invalid bounds {start}..{stop} by {step}")
    n = (stop - start) // step + 1
    etype = "f64" if builtins.any(isinstance(v, float) for v in (start, stop, step)) else "i64"
    return generator((n, 1), etype, {"dist": "seq", "start": start, "step": step, "transposed": False}, "seq_int")


def runif_matrix(n: int, p: int, seed: int = 0, lo: float = 0.0, hi: float = 1.0) -> Matrix:
    return _gen(n, p, "f64", {"dist": "runif", "seed": int(seed), "lo": float(lo), "hi": float(hi)},
                "runif_matrix")


def rnorm_matrix(n: int, p: int, seed: int = 0, mean: float = 0.0, sd: float = 1.0) -> Matrix:
    return _gen(n, p, "f64", {"dist": "rnorm", "seed": int(seed), "mean": float(mean), "sd": float(sd)},
                "rnorm_matrix")


# ---------------------------------------------------------------------------
# structure


def _tall_store(A: Matrix):
    materialize(A)
    return A.node.physical_store(get_engine())


def rbind(*mats) -> Matrix:
    """Stack matrices vertically (eager: partitions are copied into a new store)."""
    mats = [as_matrix(m) for m in mats]
    ncol = mats[0].ncol
    if builtins.any(m.ncol != ncol for m in mats):
        raise ShapeError(f"rbind: column counts differ {[m.ncol for m in mats]}")
    etype = mats[0].elem_type
    for m in mats[1:]:
        etype = max(etype, m.elem_type, key=["u8", "i32", "i64", "f64"].index)
    if builtins.any(m.transposed for m in mats):
        # wide pieces: gather locally
        return from_local(np.vstack([to_local(m) for m in mats]).astype(MatrixMeta(1, 1, etype).dtype))
    eng = get_engine()
    nrow = builtins.sum(m.nrow for m in mats)
    meta = MatrixMeta(nrow, ncol, etype)
    backing = eng.config.backing
    path = eng.temp_path() if backing == "file" else None
    out = create_tas(meta, eng.config.part_rows, backing, path=path, pool=eng.pool, owned=path is not None)
    stores = [_tall_store(m) for m in mats]
    offsets = np.cumsum([0] + [m.nrow for m in mats])
    for p in range(out.nparts):
        lo = p * out.part_rows
        hi = lo + out.part_nrows(p)
        pieces = []
        for st, o0, o1 in zip(stores, offsets[:-1], offsets[1:]):
            a, b = builtins.max(lo, o0), builtins.min(hi, o1)
            if a < b:
                pieces.append(st.read_rows(a - o0, b - o0, eng.io))
        out.write_partition(p, np.concatenate(pieces).astype(meta.dtype, copy=False), eng.io)
    return source(out)


def cbind(*mats) -> Matrix:
    """Place matrices side by side; lazy for tall inputs."""
    mats = [as_matrix(m) for m in mats]
    nrow = mats[0].nrow
    if builtins.any(m.nrow != nrow for m in mats):
        raise ShapeError(f"cbind: row counts differ {[m.nrow for m in mats]}")
    if builtins.all(m.transposed for m in mats):
        return rbind(*[m.t() for m in mats]).t()
    mats = [m if not m.transposed else from_local(to_local(m)) for m in mats]
    etype = mats[0].elem_type
    for m in mats[1:]:
        etype = max(etype, m.elem_type, key=["u8", "i32", "i64", "f64"].index)
    ncol = builtins.sum(m.ncol for m in mats)
    return lift("cbind", [m.node for m in mats], (nrow, ncol), etype)


def _check_index(idx, n, what):
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ShapeError(f"{what}: empty index")
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError(f"{what}: index out of range [0, {n})")
    return idx


def subset_cols(A, idx) -> Matrix:
    A = as_matrix(A)
    idx = _check_index(idx, A.ncol, "subset_cols")
    if not A.transposed:
        return lift("subset_cols", [A.node], (A.nrow, idx.size), A.elem_type, state={"cols": idx})
    return subset_rows(A.t(), idx).t()


def subset_rows(A, idx) -> Matrix:
    """Gather rows; eager for tall matrices."""
    A = as_matrix(A)
    idx = _check_index(idx, A.nrow, "subset_rows")
    if A.transposed:
        return lift("subset_cols", [A.node], (A.ncol, idx.size), A.elem_type, state={"cols": idx},
                    op="subset_rows", transposed=True)
    eng = get_engine()
    st = _tall_store(A)
    out = np.empty((idx.size, A.ncol), dtype=A.dtype)
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    parts = sorted_idx // st.part_rows
    for p in np.unique(parts):
        buf = st.read_partitions(int(p), 1, eng.io, eng.pool)
        try:
            sel = parts == p
            out[order[sel]] = buf.parts[0][sorted_idx[sel] - p * st.part_rows]
        finally:
            buf.release()
    return from_local(out)


@dataclass
class BlockMatrix:
    """A tall matrix viewed as consecutive 32-column blocks."""

    blocks: list
    block_cols: int = 32

    @property
    def nrow(self) -> int:
        return self.blocks[0].nrow

    @property
    def ncol(self) -> int:
        return builtins.sum(b.ncol for b in self.blocks)

    @property
    def block_widths(self) -> list[int]:
        return [b.ncol for b in self.blocks]

    def locate(self, j: int) -> tuple[int, int]:
        """Block and in-block column holding column ``j``."""
        return divmod(j, self.block_cols)

    def to_local(self) -> np.ndarray:
        return np.hstack([to_local(b) for b in self.blocks])


def as_blocks(A, block_cols: int = 32) -> BlockMatrix:
    A = as_matrix(A)
    if A.transposed:
        raise ShapeError("as_blocks needs a tall matrix")
    blocks = []
    for j0 in range(0, A.ncol, block_cols):
        cols = range(j0, builtins.min(A.ncol, j0 + block_cols))
        blocks.append(A if len(cols) == A.ncol else subset_cols(A, list(cols)))
    return BlockMatrix(blocks, block_cols)

