"""Slice-level kernels for every node kind.

A kernel sees one row slice ``[r0, r1)`` of the partition dimension.  Inputs
are C-contiguous 2-D arrays already cast to their node's element type;
broadcast operands (small vectors and matrices) arrive fully resolved.

Element-wise kinds return the output slice.  Sink kinds return a *partial*
fold state; partials are combined with :func:`merge` and turned into the final
result with :func:`finalize`.
"""

from __future__ import annotations

import numpy as np

from .errors import KernelError, LabelError
from .functions import agg_fn, elem_fn
from .rng import normals, seed_key, uniforms
from .storage import ELEM_DTYPES

SINK_KINDS = frozenset({"agg", "agg_col", "groupby", "groupby_row", "inner_prod_reduce"})
BLOCK = 32


def _fold(g, etype, arr, axis):
    """Fold ``arr`` along ``axis``; index-aware folds return ``(values, indices)``."""
    if g.index_aware:
        idx = (np.argmin if g.prefers_low else np.argmax)(arr, axis=axis)
        val = np.take_along_axis(arr, np.expand_dims(idx, axis), axis).squeeze(axis)
        return val, idx.astype(np.int64)
    with np.errstate(all="ignore"):
        if g.name in ("+", "*"):
            return g.ufunc.reduce(arr, axis=axis, dtype=ELEM_DTYPES[g.acc_type(etype)])
        if g.name in ("|", "&"):
            return g.ufunc.reduce(arr != 0, axis=axis).astype(np.uint8)
        return g.ufunc.reduce(arr, axis=axis)


def _combine(g, a, b):
    if g.name in ("|", "&"):
        return g.ufunc(a, b).astype(np.uint8)
    with np.errstate(all="ignore"):
        return g.ufunc(a, b)


def _check_labels(lab, k, node):
    if lab.size == 0:
        return
    lo, hi = lab.min(), lab.max()
    if lo < 0:
        raise LabelError(f"negative group label {lo} in node #{node.id}")
    if hi >= k:
        raise LabelError(f"group label {hi} >= k={k} in node #{node.id}")


# ---------------------------------------------------------------------------
# element-wise kinds


def _sapply(node, ins, bvals, r0, r1):
    f = elem_fn(node.fns[0])
    st = node.state
    if "scalar" not in st:
        return f(ins[0])
    s = np.asarray(st["scalar"])
    return f(s, ins[0]) if st.get("scalar_left") else f(ins[0], s)


def _mapply(node, ins, bvals, r0, r1):
    return elem_fn(node.fns[0])(ins[0], ins[1])


def _mapply_row(node, ins, bvals, r0, r1):
    v = bvals[0].reshape(1, -1)
    f = elem_fn(node.fns[0])
    return f(v, ins[0]) if node.state.get("vec_left") else f(ins[0], v)


def _mapply_col(node, ins, bvals, r0, r1):
    f = elem_fn(node.fns[0])
    return f(ins[1], ins[0]) if node.state.get("vec_left") else f(ins[0], ins[1])


def _agg_row(node, ins, bvals, r0, r1):
    g = agg_fn(node.fns[0])
    res = _fold(g, node.inputs[0].etype, ins[0], 1)
    if g.index_aware:
        res = res[1]
    return res.reshape(-1, 1)


def _groupby_col(node, ins, bvals, r0, r1):
    g = agg_fn(node.fns[0])
    k = node.state["k"]
    groups = node.state["col_groups"]
    out = np.full((r1 - r0, k), g.identity(node.inputs[0].etype), dtype=node.dtype)
    for grp, cols in enumerate(groups):
        if cols.size:
            out[:, grp] = _fold(g, node.inputs[0].etype, ins[0][:, cols], 1)
    return out


def _inner_block(f1, f2, etype_t, a3, b3, axis):
    t = f1(a3, b3)
    return _fold(f2, etype_t, t, axis)


def _inner_rows(node, ins, bvals, r0, r1):
    """C[i, j] = f2 over k of f1(A[i, k], B[k, j]) with B broadcast."""
    A = ins[0].astype(node.state["cast_a"], copy=False)
    B = bvals[0].astype(node.state["cast_b"], copy=False)
    if node.state.get("tiled"):
        return _tiled_rows(A, B)
    f1, f2 = elem_fn(node.fns[0]), agg_fn(node.fns[1])
    ttype = node.state["t_type"]
    swap = node.state.get("swap")
    r, m = A.shape
    q = B.shape[1]
    out = np.empty((r, q), dtype=node.dtype)
    for j0 in range(0, q, BLOCK):
        j1 = min(q, j0 + BLOCK)
        a3 = A[:, :, None]
        b3 = B[None, :, j0:j1]
        out[:, j0:j1] = _inner_block(f1, f2, ttype, b3 if swap else a3, a3 if swap else b3, 1)
    return out


def _tiled_rows(A, B):
    """Register-tile style f64 product: 8-wide output tiles, fixed k order."""
    r, m = A.shape
    q = B.shape[1]
    out = np.empty((r, q), dtype=np.float64)
    for j0 in range(0, q, 8):
        j1 = min(q, j0 + 8)
        acc = np.zeros((r, j1 - j0))
        for k in range(m):
            acc += A[:, k:k + 1] * B[k, j0:j1]
        out[:, j0:j1] = acc
    return out


def _cbind(node, ins, bvals, r0, r1):
    return np.concatenate([a.astype(node.dtype, copy=False) for a in ins], axis=1)


def _subset_cols(node, ins, bvals, r0, r1):
    return ins[0][:, node.state["cols"]]


def _gen(node, ins, bvals, r0, r1):
    st = node.state
    P, w = node.shape
    dist = st["dist"]
    if dist == "rep":
        return np.full((r1 - r0, w), st["value"], dtype=node.dtype)
    if dist == "seq":
        col = st["start"] + st["step"] * np.arange(r0, r1, dtype=np.int64)
        return np.repeat(col.reshape(-1, 1).astype(node.dtype), w, axis=1)
    rows = np.arange(r0, r1, dtype=np.uint64)[:, None]
    cols = np.arange(w, dtype=np.uint64)[None, :]
    # counter = element index in the caller-visible row-major order
    idx = cols * np.uint64(P) + rows if st.get("transposed") else rows * np.uint64(w) + cols
    key = seed_key(st["seed"])
    if dist == "runif":
        return st["lo"] + (st["hi"] - st["lo"]) * uniforms(key, idx)
    if dist == "rnorm":
        return st["mean"] + st["sd"] * normals(key, idx)
    raise KernelError(f"unknown generator {dist!r}", node.id, (r0, r1))


_ELEMENTWISE = {
    "sapply": _sapply,
    "mapply": _mapply,
    "mapply_row": _mapply_row,
    "mapply_col": _mapply_col,
    "agg_row": _agg_row,
    "groupby_col": _groupby_col,
    "inner_prod": _inner_rows,
    "cbind": _cbind,
    "subset_cols": _subset_cols,
    "gen": _gen,
}


def eval_slice(node, ins, bvals, r0, r1) -> np.ndarray:
    out = _ELEMENTWISE[node.kind](node, ins, bvals, r0, r1)
    return np.ascontiguousarray(out, dtype=node.dtype)


# ---------------------------------------------------------------------------
# sinks


def _sink_agg(node, ins, bvals, r0, r1):
    g = agg_fn(node.fns[0])
    a = ins[0]
    flat = a.reshape(1, -1)
    res = _fold(g, node.inputs[0].etype, flat, 1)
    if g.index_aware:
        return res[0], res[1] + r0 * a.shape[1]
    return res


def _sink_agg_col(node, ins, bvals, r0, r1):
    g = agg_fn(node.fns[0])
    res = _fold(g, node.inputs[0].etype, ins[0], 0)
    if g.index_aware:
        return res[0], res[1] + r0
    return res


def _sink_groupby(node, ins, bvals, r0, r1):
    g = agg_fn(node.fns[0])
    k = node.state["k"]
    a, lab = ins[0], ins[1]
    _check_labels(lab, k, node)
    et = node.inputs[0].etype
    out = np.full(k, g.identity(et), dtype=ELEM_DTYPES[g.value_type(et)])
    for grp in range(k):
        sel = a[lab == grp]
        if sel.size:
            out[grp] = _fold(g, et, sel, 0)
    return out


def _sink_groupby_row(node, ins, bvals, r0, r1):
    g = agg_fn(node.fns[0])
    k = node.state["k"]
    a, lab = ins[0], ins[1].ravel()
    _check_labels(lab, k, node)
    et = node.inputs[0].etype
    out = np.full((k, a.shape[1]), g.identity(et), dtype=ELEM_DTYPES[g.value_type(et)])
    for grp in range(k):
        mask = lab == grp
        if mask.any():
            out[grp] = _fold(g, et, a[mask], 0)
    return out


def _sink_inner_reduce(node, ins, bvals, r0, r1):
    """C[a, b] = f2 over rows i of f1(A[i, a], B[i, b])."""
    A = ins[0].astype(node.state["cast_a"], copy=False)
    B = ins[1].astype(node.state["cast_b"], copy=False)
    f1, f2 = elem_fn(node.fns[0]), agg_fn(node.fns[1])
    ttype = node.state["t_type"]
    swap = node.state.get("swap")
    m, q = A.shape[1], B.shape[1]
    out = np.empty((m, q), dtype=node.dtype)
    for i0 in range(0, m, BLOCK):
        i1 = min(m, i0 + BLOCK)
        a3 = A[:, i0:i1, None]
        for j0 in range(0, q, BLOCK):
            j1 = min(q, j0 + BLOCK)
            b3 = B[:, None, j0:j1]
            out[i0:i1, j0:j1] = _inner_block(f1, f2, ttype, b3 if swap else a3, a3 if swap else b3, 0)
    return out


_SINKS = {
    "agg": _sink_agg,
    "agg_col": _sink_agg_col,
    "groupby": _sink_groupby,
    "groupby_row": _sink_groupby_row,
    "inner_prod_reduce": _sink_inner_reduce,
}


def sink_slice(node, ins, bvals, r0, r1):
    return _SINKS[node.kind](node, ins, bvals, r0, r1)


def merge(node, acc, part):
    """Combine two partials; ``acc`` covers rows strictly before ``part``."""
    g = agg_fn(node.fns[-1])
    if g.index_aware:
        av, ai = acc
        pv, pi = part
        better = pv < av if g.prefers_low else pv > av
        return np.where(better, pv, av), np.where(better, pi, ai)
    return _combine(g, acc, part)


def finalize(node, acc) -> np.ndarray:
    g = agg_fn(node.fns[-1])
    if g.index_aware:
        idx = acc[1]
        if node.kind == "agg" and node.state.get("transposed"):
            P, w = node.state["in_shape"]
            i, j = np.divmod(idx, w)
            idx = j * P + i
        acc = idx
    return np.asarray(acc, dtype=node.dtype).reshape(node.shape)
