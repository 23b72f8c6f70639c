"""The eleven generalized operations as lazy constructors.

Each function takes caller-orientation handles (``A`` may be a transposed view
of a tall node) and maps the request onto a tall-space node.  Row-wise and
column-wise variants swap under transposition, so e.g. ``agg_row`` of a wide
matrix becomes an ``agg_col`` sink over its tall store.

Vector arguments may be engine matrices (``n x 1`` or ``1 x n``), numpy
arrays or plain sequences.
"""

from __future__ import annotations

import numpy as np

from .dag import Matrix, from_local, lift, to_local
from .errors import LabelError, RegistryError, ShapeError
from .functions import agg_fn, elem_fn, scalar_type
from .storage import ELEM_DTYPES, elem_type_of

__all__ = [
    "sapply", "mapply", "mapply_row", "mapply_col", "agg", "agg_row", "agg_col",
    "groupby", "groupby_row", "groupby_col", "inner_prod",
]


def as_matrix(x) -> Matrix:
    if isinstance(x, Matrix):
        return x
    return from_local(np.asarray(x))


def _vec_type(v) -> str:
    if isinstance(v, Matrix):
        return v.elem_type
    return elem_type_of(np.asarray(v).dtype)


def _local_vector(v, n: int, what: str):
    """Broadcast operand: kept lazy if it is an engine matrix."""
    if isinstance(v, Matrix):
        if v.size != n or 1 not in v.shape:
            raise ShapeError(f"{what}: expected a vector of length {n}, got {v.nrow}x{v.ncol}")
        return v
    arr = np.asarray(v)
    if arr.size != n:
        raise ShapeError(f"{what}: expected a vector of length {n}, got {arr.size}")
    return arr.reshape(-1).astype(ELEM_DTYPES[elem_type_of(arr.dtype)], copy=False)


def _part_vector(v, n: int, what: str):
    """Partitioned operand: an ``n x 1`` tall node sharing the partition dimension."""
    if isinstance(v, Matrix):
        if v.size != n or 1 not in v.shape:
            raise ShapeError(f"{what}: expected a vector of length {n}, got {v.nrow}x{v.ncol}")
        if v.node.shape == (n, 1):
            return v.node
        return from_local(to_local(v).reshape(n, 1)).node
    arr = np.asarray(v)
    if arr.size != n:
        raise ShapeError(f"{what}: expected a vector of length {n}, got {arr.size}")
    return from_local(arr.reshape(n, 1)).node


def _relayout(B: Matrix, transposed: bool) -> Matrix:
    # mixed orientations cannot share a partition dimension; copy B over
    return from_local(to_local(B), orientation="wide" if transposed else "tall")


def _labels_local(L, k, what):
    lab = np.asarray(to_local(L) if isinstance(L, Matrix) else L)
    if lab.dtype.kind not in "iub":
        if lab.dtype.kind == "f" and np.all(np.floor(lab) == lab):
            lab = lab.astype(np.int64)
        else:
            raise LabelError(f"{what}: labels must be integers")
    if lab.size and lab.min() < 0:
        raise LabelError(f"{what}: negative group label {lab.min()}")
    kk = int(lab.max()) + 1 if lab.size else 0
    if k is None:
        k = kk
    elif kk > k:
        raise LabelError(f"{what}: group label {kk - 1} >= k={k}")
    return lab, int(k)


def _declare_k(L, k, what):
    """Number of groups; inferred eagerly when not given."""
    if isinstance(L, Matrix):
        if L.elem_type == "f64":
            raise LabelError(f"{what}: labels must be integers")
        if k is None:
            k = int(agg(L, "max").item()) + 1
        if k < 1:
            raise LabelError(f"{what}: k must be >= 1")
        return None, int(k)
    return _labels_local(L, k, what)


def _group_agg(g, what):
    g = agg_fn(g)
    if g.index_aware:
        raise RegistryError(f"{what}: {g.name} is not supported for grouped folds")
    return g


# ---------------------------------------------------------------------------
# element-wise


def sapply(A, f, scalar=None, scalar_left: bool = False) -> Matrix:
    """``C[i,j] = f(A[i,j])``; a binary ``f`` takes ``scalar`` as its other argument."""
    A = as_matrix(A)
    f = elem_fn(f)
    state = {}
    if f.arity == 2:
        if scalar is None:
            raise RegistryError(f"{f.name!r} is binary; sapply needs a scalar operand")
        st = scalar_type(scalar)
        etype = f.result_type(st, A.elem_type) if scalar_left else f.result_type(A.elem_type, st)
        state = {"scalar": scalar, "scalar_left": bool(scalar_left)}
    else:
        etype = f.result_type(A.elem_type)
    return lift("sapply", [A.node], A.node.shape, etype, fns=(f.name,), state=state, transposed=A.transposed)


def mapply(A, B, f) -> Matrix:
    """``C[i,j] = f(A[i,j], B[i,j])``."""
    if not isinstance(A, Matrix) and np.ndim(A) == 0:
        return sapply(B, f, scalar=A, scalar_left=True)
    if not isinstance(B, Matrix) and np.ndim(B) == 0:
        return sapply(A, f, scalar=B)
    A, B = as_matrix(A), as_matrix(B)
    f = elem_fn(f)
    if A.shape != B.shape:
        raise ShapeError(f"mapply: shape mismatch {A.nrow}x{A.ncol} vs {B.nrow}x{B.ncol}")
    if A.transposed != B.transposed:
        B = _relayout(B, A.transposed)
    etype = f.result_type(A.elem_type, B.elem_type)
    return lift("mapply", [A.node, B.node], A.node.shape, etype, fns=(f.name,), transposed=A.transposed)


def mapply_row(A, v, f) -> Matrix:
    """``C[i,j] = f(A[i,j], v[j])``."""
    A = as_matrix(A)
    f = elem_fn(f)
    etype = f.result_type(A.elem_type, _vec_type(v))
    if not A.transposed:
        vec = _local_vector(v, A.ncol, "mapply_row")
        return lift("mapply_row", [A.node], A.node.shape, etype, fns=(f.name,), bcast=[vec])
    vnode = _part_vector(v, A.ncol, "mapply_row")
    return lift("mapply_col", [A.node, vnode], A.node.shape, etype, fns=(f.name,), op="mapply_row",
                transposed=True)


def mapply_col(A, w, f) -> Matrix:
    """``C[i,j] = f(A[i,j], w[i])``."""
    A = as_matrix(A)
    f = elem_fn(f)
    etype = f.result_type(A.elem_type, _vec_type(w))
    if not A.transposed:
        wnode = _part_vector(w, A.nrow, "mapply_col")
        return lift("mapply_col", [A.node, wnode], A.node.shape, etype, fns=(f.name,))
    vec = _local_vector(w, A.nrow, "mapply_col")
    return lift("mapply_row", [A.node], A.node.shape, etype, fns=(f.name,), bcast=[vec], op="mapply_col",
                transposed=True)


# ---------------------------------------------------------------------------
# aggregation


def agg(A, g) -> Matrix:
    """Fold every element; returns a ``1 x 1`` sink (an index for which.*)."""
    A = as_matrix(A)
    g = agg_fn(g)
    state = {"transposed": A.transposed, "in_shape": A.node.shape}
    return lift("agg", [A.node], (1, 1), g.acc_type(A.elem_type), fns=(g.name,), state=state)


def agg_row(A, g) -> Matrix:
    """Fold each row; returns an ``n x 1`` matrix."""
    A = as_matrix(A)
    g = agg_fn(g)
    etype = g.acc_type(A.elem_type)
    if not A.transposed:
        return lift("agg_row", [A.node], (A.nrow, 1), etype, fns=(g.name,))
    return lift("agg_col", [A.node], (A.nrow, 1), etype, fns=(g.name,), op="agg_row")


def agg_col(A, g) -> Matrix:
    """Fold each column; returns a ``p x 1`` matrix."""
    A = as_matrix(A)
    g = agg_fn(g)
    etype = g.acc_type(A.elem_type)
    if not A.transposed:
        return lift("agg_col", [A.node], (A.ncol, 1), etype, fns=(g.name,))
    return lift("agg_row", [A.node], (A.ncol, 1), etype, fns=(g.name,), op="agg_col")


# ---------------------------------------------------------------------------
# groupby


def groupby(A, L, g, k: int | None = None) -> Matrix:
    """Fold elements by the label at the same position; returns ``k x 1``."""
    A = as_matrix(A)
    g = _group_agg(g, "groupby")
    if isinstance(L, Matrix) and L.shape != A.shape:
        raise ShapeError(f"groupby: labels {L.nrow}x{L.ncol} do not match data {A.nrow}x{A.ncol}")
    _, k = _declare_k(L, k, "groupby")
    L = as_matrix(L)
    if L.shape != A.shape:
        raise ShapeError(f"groupby: labels {L.nrow}x{L.ncol} do not match data {A.nrow}x{A.ncol}")
    if L.transposed != A.transposed:
        L = _relayout(L, A.transposed)
    return lift("groupby", [A.node, L.node], (k, 1), g.value_type(A.elem_type), fns=(g.name,),
                state={"k": k})


def groupby_row(A, r, g, k: int | None = None) -> Matrix:
    """``C[k, j]`` folds rows ``i`` with ``r[i] == k``; returns ``k x p``."""
    A = as_matrix(A)
    g = _group_agg(g, "groupby_row")
    lab, k = _declare_k(r, k, "groupby_row")
    etype = g.value_type(A.elem_type)
    if not A.transposed:
        rnode = _part_vector(r if lab is None else lab, A.nrow, "groupby_row")
        return lift("groupby_row", [A.node, rnode], (k, A.ncol), etype, fns=(g.name,), state={"k": k})
    lab = lab if lab is not None else _labels_local(r, k, "groupby_row")[0]
    if lab.size != A.nrow:
        raise ShapeError(f"groupby_row: expected {A.nrow} labels, got {lab.size}")
    groups = [np.flatnonzero(lab.reshape(-1) == c) for c in range(k)]
    return lift("groupby_col", [A.node], (A.ncol, k), etype, fns=(g.name,), op="groupby_row",
                state={"k": k, "col_groups": groups}, transposed=True)


def groupby_col(A, c, g, k: int | None = None) -> Matrix:
    """``C[i, k]`` folds columns ``j`` with ``c[j] == k``; returns ``n x k``."""
    A = as_matrix(A)
    g = _group_agg(g, "groupby_col")
    etype = g.value_type(A.elem_type)
    if not A.transposed:
        lab, k = _labels_local(c, k, "groupby_col")
        if lab.size != A.ncol:
            raise ShapeError(f"groupby_col: expected {A.ncol} labels, got {lab.size}")
        groups = [np.flatnonzero(lab.reshape(-1) == grp) for grp in range(k)]
        return lift("groupby_col", [A.node], (A.nrow, k), etype, fns=(g.name,),
                    state={"k": k, "col_groups": groups})
    lab, k = _declare_k(c, k, "groupby_col")
    cnode = _part_vector(c if lab is None else lab, A.ncol, "groupby_col")
    return lift("groupby_row", [A.node, cnode], (k, A.nrow), etype, fns=(g.name,), op="groupby_col",
                state={"k": k}, transposed=True)


# ---------------------------------------------------------------------------
# generalized inner product


def _prod_state(f1, f2, ta, tb, swap=False, tiled=False):
    ca = "f64" if ta == "f64" else "i64"
    cb = "f64" if tb == "f64" else "i64"
    ttype = f1.result_type(cb, ca) if swap else f1.result_type(ca, cb)
    state = {"cast_a": ELEM_DTYPES[ca], "cast_b": ELEM_DTYPES[cb], "t_type": ttype, "swap": swap}
    if tiled:
        state["tiled"] = True
    return state, f2.acc_type(ttype)


def inner_prod(A, B, f1="*", f2="+", tiled: bool = False) -> Matrix:
    """``C[i,j] = f2 over k of f1(A[i,k], B[k,j])``."""
    A, B = as_matrix(A), as_matrix(B)
    f1, f2 = elem_fn(f1), agg_fn(f2)
    if f2.index_aware:
        raise RegistryError(f"inner_prod: {f2.name} cannot be the combining fold")
    if f1.arity != 2:
        raise RegistryError(f"inner_prod: {f1.name!r} must be binary")
    if A.ncol != B.nrow:
        raise ShapeError(f"inner_prod: dimension mismatch {A.nrow}x{A.ncol} vs {B.nrow}x{B.ncol}")
    fns = (f1.name, f2.name)
    if not A.transposed:
        # tall A streams, B is broadcast to every slice
        state, etype = _prod_state(f1, f2, A.elem_type, B.elem_type, tiled=tiled)
        return lift("inner_prod", [A.node], (A.nrow, B.ncol), etype, fns=fns, bcast=[B], state=state)
    if not B.transposed:
        # both share the partition dimension: reduce over it
        state, etype = _prod_state(f1, f2, A.elem_type, B.elem_type)
        return lift("inner_prod_reduce", [A.node, B.node], (A.nrow, B.ncol), etype, fns=fns, state=state,
                    op="inner_prod")
    # t(C) = t(B) . t(A) with f1's arguments swapped; t(B) is tall
    state, etype = _prod_state(f1, f2, B.elem_type, A.elem_type, swap=True, tiled=False)
    return lift("inner_prod", [B.node], (B.ncol, A.nrow), etype, fns=fns, bcast=[A.t()], state=state,
                transposed=True)
