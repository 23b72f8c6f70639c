"""Lazy matrices: DAG nodes, handles, materialization triggers and caching.

Every node lives in *tall space*: its first dimension is the partition
dimension.  A :class:`Matrix` handle pairs a node with a ``transposed`` flag,
so a wide matrix is just a transposed view of a tall node.

Nodes that share a partition dimension and are connected through shared
inputs form one DAG.  Sink nodes (aggregations whose output is indexed by
something other than the partition dimension) are leaves: anything that
consumes a sink starts a new DAG.
"""

from __future__ import annotations

import itertools
import warnings
import weakref
from dataclasses import dataclass, field

import numpy as np

from .engine import Engine, get_engine
from .errors import ShapeError, SizeCapError
from .kernels import SINK_KINDS
from .storage import ELEM_DTYPES, MatrixMeta, TasStore, create_tas, elem_type_of

_node_ids = itertools.count()


class Node:
    """One matrix in tall space: physical (has a store), sink, or virtual."""

    __slots__ = ("id", "kind", "op", "shape", "etype", "inputs", "bcast", "fns", "state",
                 "sink", "store", "result", "cache", "consumers", "__weakref__")

    def __init__(self, kind, shape, etype, inputs=(), bcast=(), fns=(), state=None, op=None,
                 store=None, result=None):
        self.id = next(_node_ids)
        self.kind = kind
        self.op = op or kind
        self.shape = (int(shape[0]), int(shape[1]))
        self.etype = etype
        self.inputs = list(inputs)
        self.bcast = list(bcast)
        self.fns = tuple(fns)
        self.state = dict(state or {})
        self.sink = kind in SINK_KINDS
        self.store = store
        self.result = result
        self.cache = None
        self.consumers = weakref.WeakSet()
        for inp in self.inputs:
            inp.consumers.add(self)

    @property
    def dtype(self) -> np.dtype:
        return ELEM_DTYPES[self.etype]

    @property
    def pending(self) -> bool:
        return self.store is None and self.result is None

    def physical_store(self, engine: Engine) -> TasStore:
        """Store backing this node; sink results get an in-memory store on demand."""
        if self.store is None:
            if self.result is None:
                raise RuntimeError(f"node #{self.id} is not materialized")
            meta = MatrixMeta(self.shape[0], self.shape[1], self.etype)
            store = create_tas(meta, engine.config.part_rows, "memory", pool=engine.pool)
            arr = self.result
            for p in range(store.nparts):
                lo = p * store.part_rows
                store.write_partition(p, arr[lo:lo + store.part_nrows(p)])
            self.store = store
        return self.store

    def detach(self):
        """Drop references to inputs once this node holds its own data."""
        self.inputs = []
        self.bcast = []

    def __repr__(self):
        return f"Node(#{self.id} {self.op} {self.shape[0]}x{self.shape[1]} {self.etype})"


class Matrix:
    """Immutable handle to a dense matrix: a node plus a transpose flag."""

    __slots__ = ("node", "transposed", "__weakref__")
    __array_priority__ = 100

    def __init__(self, node: Node, transposed: bool = False):
        self.node = node
        self.transposed = bool(transposed)

    # shape & metadata -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        r, c = self.node.shape
        return (c, r) if self.transposed else (r, c)

    @property
    def nrow(self) -> int:
        return self.shape[0]

    @property
    def ncol(self) -> int:
        return self.shape[1]

    @property
    def size(self) -> int:
        return self.nrow * self.ncol

    @property
    def elem_type(self) -> str:
        return self.node.etype

    @property
    def dtype(self) -> np.dtype:
        return self.node.dtype

    @property
    def meta(self) -> MatrixMeta:
        store = self.node.store
        layout = store.meta.layout if store is not None else "col"
        meta = MatrixMeta(self.node.shape[0], self.node.shape[1], self.node.etype, layout, "tall")
        return meta.transposed() if self.transposed else meta

    @property
    def store(self) -> TasStore | None:
        return self.node.store

    @property
    def name(self) -> str | None:
        """Store name used as the key of per-matrix I/O tallies."""
        return self.node.store.name if self.node.store is not None else None

    @property
    def is_sink(self) -> bool:
        return self.node.sink

    @property
    def is_virtual(self) -> bool:
        return self.node.pending and not self.node.sink

    @property
    def is_materialized(self) -> bool:
        return not self.node.pending

    def t(self) -> "Matrix":
        return Matrix(self.node, not self.transposed)

    @property
    def T(self) -> "Matrix":
        return self.t()

    # materialization ------------------------------------------------------
    def materialize(self) -> "Matrix":
        materialize(self)
        return self

    def set_cache(self, where: str = "memory") -> "Matrix":
        set_cache(self, where)
        return self

    def to_local(self, cap: int | None = None) -> np.ndarray:
        return to_local(self, cap)

    def __array__(self, dtype=None, copy=None):
        arr = to_local(self)
        return arr if dtype is None else arr.astype(dtype)

    def item(self):
        if self.size != 1:
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.nrow}x{self.ncol}")
        return to_local(self).reshape(-1)[0].item()

    def __float__(self):
        return float(self.item())

    def __int__(self):
        return int(self.item())

    def __repr__(self):
        kind = "sink" if self.is_sink else ("virtual" if self.node.pending else "physical")
        return f"<Matrix {self.nrow}x{self.ncol} {self.elem_type} {kind} #{self.node.id}{' T' if self.transposed else ''}>"

    # operators delegate to the convenience layer
    def _rb(self):
        from . import rbase
        return rbase

    def __add__(self, o): return self._rb().arith("+", self, o)
    def __radd__(self, o): return self._rb().arith("+", o, self)
    def __sub__(self, o): return self._rb().arith("-", self, o)
    def __rsub__(self, o): return self._rb().arith("-", o, self)
    def __mul__(self, o): return self._rb().arith("*", self, o)
    def __rmul__(self, o): return self._rb().arith("*", o, self)
    def __truediv__(self, o): return self._rb().arith("/", self, o)
    def __rtruediv__(self, o): return self._rb().arith("/", o, self)
    def __lt__(self, o): return self._rb().arith("<", self, o)
    def __le__(self, o): return self._rb().arith("<=", self, o)
    def __gt__(self, o): return self._rb().arith(">", self, o)
    def __ge__(self, o): return self._rb().arith(">=", self, o)
    def __and__(self, o): return self._rb().arith("&", self, o)
    def __or__(self, o): return self._rb().arith("|", self, o)
    def __neg__(self): return self._rb().sapply(self, "neg")
    def __abs__(self): return self._rb().sapply(self, "abs")
    def __matmul__(self, o): return self._rb().matmul(self, o)
    def __rmatmul__(self, o): return self._rb().matmul(o, self)
    # identity-based hashing keeps handles usable as dict keys
    __hash__ = object.__hash__


# ---------------------------------------------------------------------------
# construction


def source(store: TasStore, transposed: bool = False) -> Matrix:
    """Wrap a physical store in a handle."""
    node = Node("source", (store.nrow, store.ncol), store.meta.elem_type, store=store)
    return Matrix(node, transposed)


def store_from_array(arr: np.ndarray, layout: str = "col", backing: str | None = None,
                     part_rows: int | None = None, path: str | None = None,
                     orientation: str = "tall", engine: Engine | None = None) -> TasStore:
    """Copy a 2-D tall-space array into a new store."""
    eng = engine or get_engine()
    backing = backing or eng.config.backing
    part_rows = part_rows or eng.config.part_rows
    meta = MatrixMeta(arr.shape[0], arr.shape[1], elem_type_of(arr.dtype), layout)
    if backing == "file":
        owned = path is None
        store = create_tas(meta, part_rows, "file", path=path or eng.temp_path(), pool=eng.pool,
                           owned=owned, orientation=orientation)
    else:
        store = create_tas(meta, part_rows, "memory", pool=eng.pool)
    for p in range(store.nparts):
        lo = p * part_rows
        store.write_partition(p, arr[lo:lo + store.part_nrows(p)], eng.io)
    return store


def from_local(array, orientation: str = "tall", layout: str | None = None, backing: str | None = None,
               part_rows: int | None = None, engine: Engine | None = None) -> Matrix:
    """Copy a numpy array (or nested sequence) into the engine.

    1-D input becomes a column vector.  ``orientation="wide"`` stores the
    transpose as a tall store and returns a transposed handle.
    """
    arr = np.asarray(array)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected a 1-D or 2-D array, got {arr.ndim} dimensions")
    if arr.size == 0:
        raise ShapeError("cannot create an empty matrix")
    arr = arr.astype(ELEM_DTYPES[elem_type_of(arr.dtype)], copy=False)
    wide = orientation == "wide"
    if orientation not in ("tall", "wide"):
        raise ValueError(f"orientation must be 'tall' or 'wide', got {orientation!r}")
    tall = arr.T if wide else arr
    if layout is None:
        store_layout = "col"
    else:
        store_layout = layout if not wide else ("col" if layout == "row" else "row")
    store = store_from_array(tall, store_layout, backing, part_rows, orientation=orientation, engine=engine)
    return source(store, wide)


def lift(kind, inputs, shape, etype, fns=(), state=None, bcast=(), op=None,
         transposed=False, engine: Engine | None = None) -> Matrix:
    """Create a node over tall-space ``inputs`` without computing anything."""
    P = shape[0] if kind not in SINK_KINDS else None
    parts = {n.shape[0] for n in inputs}
    if len(parts) > 1:
        raise ShapeError(f"{op or kind}: inputs differ in partition dimension {sorted(parts)}")
    if P is not None and parts and P not in parts:
        raise ShapeError(f"{op or kind}: output rows {P} differ from input rows {parts.pop()}")
    node = Node(kind, shape, etype, inputs=inputs, bcast=bcast, fns=fns, state=state, op=op)
    h = Matrix(node, transposed)
    eng = engine or get_engine()
    if not eng.config.fused:
        materialize(h)
    return h


def generator(shape, etype, state, op, transposed=False) -> Matrix:
    """Lazy constructor node (no inputs); stays virtual even in unfused mode."""
    return Matrix(Node("gen", shape, etype, fns=(state["dist"],), state=state, op=op), transposed)


# ---------------------------------------------------------------------------
# DAG discovery


@dataclass
class Dag:
    nrows: int
    order: list = field(default_factory=list)
    sources: list = field(default_factory=list)
    sinks: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    @property
    def nodes(self):
        return sorted(self.sources + self.order, key=lambda n: n.id)


def _pending_ancestors(node: Node) -> list[Node]:
    """``node`` plus every pending non-sink node feeding it within its DAG."""
    seen = {node.id: node}
    stack = [node]
    while stack:
        n = stack.pop()
        for inp in n.inputs:
            if inp.pending and not inp.sink and inp.id not in seen:
                seen[inp.id] = inp
                stack.append(inp)
    return list(seen.values())


def _deps(node: Node):
    """Handles that must be materialized before ``node``'s DAG can run."""
    for a in _pending_ancestors(node):
        for b in a.bcast:
            if isinstance(b, Matrix) and b.node.pending:
                yield b
        for inp in a.inputs:
            if inp.sink and inp.pending:
                yield Matrix(inp)


def _ready(node: Node) -> bool:
    return next(_deps(node), None) is None


def _component(targets: list[Node]) -> dict[int, Node]:
    """All nodes connected to ``targets`` without crossing a sink boundary."""
    seen = {}
    stack = list(targets)
    while stack:
        n = stack.pop()
        if n.id in seen:
            continue
        seen[n.id] = n
        if n.pending or not n.sink:
            for inp in n.inputs:
                if not inp.sink:
                    stack.append(inp)
        if not n.sink:
            stack.extend(c for c in list(n.consumers) if c.id not in seen)
    return seen


def build_dag(targets: list[Node]) -> Dag:
    """Collect the DAG that computes ``targets`` plus every other pending sink
    and cache-flagged matrix sharing their inputs."""
    comp = _component(targets)
    tid = {n.id for n in targets}
    goal = list(targets)
    for n in sorted(comp.values(), key=lambda n: n.id):
        if n.id not in tid and n.pending and (n.sink or n.cache) and _ready(n):
            goal.append(n)
    needed = {}
    for g in goal:
        for a in _pending_ancestors(g):
            needed[a.id] = a
    order = sorted(needed.values(), key=lambda n: n.id)
    srcs = {}
    for n in order:
        for inp in n.inputs:
            if not inp.pending:
                srcs[inp.id] = inp
    nrows = order[0].inputs[0].shape[0] if order[0].sink else order[0].shape[0]
    outputs = [n for n in order if not n.sink and (n.id in tid or n.cache)]
    return Dag(
        nrows=nrows,
        order=order,
        sources=sorted(srcs.values(), key=lambda n: n.id),
        sinks=[n for n in order if n.sink],
        outputs=outputs,
    )


def materialize(*handles, engine: Engine | None = None):
    """Compute the given handles (and everything sharing their DAG) in one pass."""
    from .exec import run_dag

    eng = engine or get_engine()
    for h in handles:
        for dep in _deps(h.node):
            materialize(dep, engine=eng)
    targets = []
    for h in handles:
        if h.node.pending and all(h.node is not t for t in targets):
            targets.append(h.node)
    if targets:
        # a target may sit in a different DAG (different partition dimension)
        groups: dict[int, list[Node]] = {}
        for t in targets:
            rows = t.inputs[0].shape[0] if t.sink else t.shape[0]
            groups.setdefault(rows, []).append(t)
        for group in groups.values():
            group = [t for t in group if t.pending]
            if group:
                run_dag(build_dag(group), eng)
    return handles[0] if len(handles) == 1 else handles


def set_cache(h: Matrix, where: str = "memory"):
    """Flag a virtual matrix to be written out and kept by its next materialization."""
    if where not in ("memory", "file"):
        raise ValueError(f"cache target must be 'memory' or 'file', got {where!r}")
    if h.node.sink:
        warnings.warn("sink matrices are always cached; set_cache ignored", stacklevel=2)
        return
    if h.node.pending:
        h.node.cache = where


def node_local(node: Node, engine: Engine | None = None) -> np.ndarray:
    """Tall-space contents of a materialized node as a C-ordered array."""
    eng = engine or get_engine()
    if node.pending:
        materialize(Matrix(node), engine=eng)
    if node.result is not None:
        return node.result
    store = node.store
    out = np.empty((store.nrow, store.ncol), dtype=store.dtype)
    for p in range(store.nparts):
        buf = store.read_partitions(p, 1, eng.io, eng.pool)
        try:
            lo = p * store.part_rows
            out[lo:lo + store.part_nrows(p)] = buf.parts[0]
        finally:
            buf.release()
    return out


def to_local(h: Matrix, cap: int | None = None, engine: Engine | None = None) -> np.ndarray:
    """Materialize ``h`` and copy it into a row-major numpy array."""
    eng = engine or get_engine()
    cap = eng.config.local_cap if cap is None else cap
    nbytes = h.size * h.dtype.itemsize
    if nbytes > cap:
        raise SizeCapError(f"{h.nrow}x{h.ncol} {h.elem_type} matrix is {nbytes} bytes, over the local cap of {cap}")
    arr = node_local(h.node, eng)
    return np.ascontiguousarray(arr.T) if h.transposed else arr.copy()


# ---------------------------------------------------------------------------
# inspection


def _tag(n: Node) -> str:
    if n.sink:
        return "sink"
    return "virtual" if n.pending else "physical"


def dump_dag(*handles) -> str:
    """One line per node, ids renumbered in topological (creation) order."""
    seen = {}
    stack = [h.node for h in handles]
    while stack:
        n = stack.pop()
        if n.id in seen:
            continue
        seen[n.id] = n
        stack.extend(n.inputs)
        stack.extend(b.node for b in n.bcast if isinstance(b, Matrix))
    nodes = sorted(seen.values(), key=lambda n: n.id)
    num = {n.id: i for i, n in enumerate(nodes)}
    lines = []
    for n in nodes:
        fn = ",".join(n.fns) if n.fns else "-"
        line = f"#{num[n.id]} {n.op} fn={fn} shape={n.shape[0]}x{n.shape[1]} {_tag(n)}"
        if n.inputs:
            line += " in=" + ",".join(f"#{num[i.id]}" for i in n.inputs)
        bc = [b for b in n.bcast if isinstance(b, Matrix)]
        if bc:
            line += " bcast=" + ",".join(f"#{num[b.node.id]}" for b in bc)
        lines.append(line)
    return "\n".join(lines) + "\n"
