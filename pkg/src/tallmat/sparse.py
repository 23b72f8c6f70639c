"""Sparse matrices: in-memory COO and a row-partitioned CSR file format
streamed one partition at a time against in-memory dense vectors."""

from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .engine import Engine, get_engine
from .errors import (
    BadMagicError, GeometryError, MemoryBudgetError, ParseError, ShapeError, StorageIOError,
    TruncatedFileError, VersionMismatchError,
)
from .storage import IoStats, is_power_of_two

SPARSE_MAGIC = b"FLSX"
SPARSE_VERSION = 1
SPARSE_HEADER = struct.Struct("<4sIQQQB")
DEFAULT_SPARSE_PART_ROWS = 1 << 14


class CooMatrix:
    """Small sparse matrix held as sorted, duplicate-free coordinate triples."""

    def __init__(self, nrow: int, ncol: int, rows, cols, vals=None):
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        vals = np.ones(rows.size) if vals is None else np.asarray(vals, dtype=np.float64).reshape(-1)
        if not (rows.size == cols.size == vals.size):
            raise ShapeError("COO arrays must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= nrow or cols.min() < 0 or cols.max() >= ncol):
            raise IndexError(f"COO index outside {nrow}x{ncol}")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate COO entry ({rows[i]}, {cols[i]})")
        self.nrow, self.ncol = int(nrow), int(ncol)
        self.rows, self.cols, self.vals = rows, cols, vals

    @property
    def shape(self):
        return (self.nrow, self.ncol)

    @property
    def nnz(self) -> int:
        return self.rows.size

    def dot(self, x) -> np.ndarray:
        """Sparse times dense (vector or matrix) into a dense result."""
        x = np.asarray(x, dtype=np.float64)
        vec = x.ndim == 1
        x2 = x.reshape(-1, 1) if vec else x
        if x2.shape[0] != self.ncol:
            raise ShapeError(f"COO {self.nrow}x{self.ncol} times {x2.shape[0]}x{x2.shape[1]}")
        out = np.zeros((self.nrow, x2.shape[1]))
        np.add.at(out, self.rows, self.vals[:, None] * x2[self.cols])
        return out.reshape(-1) if vec else out

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.vals
        return out

    def t(self) -> "CooMatrix":
        return CooMatrix(self.ncol, self.nrow, self.cols, self.rows, self.vals)


@dataclass(frozen=True)
class _PartIndex:
    offset: int  # byte position of the partition in the file
    rows: int
    nnz: int


class CsrGraph:
    """Square sparse matrix in row-partitioned CSR, backed by a file.

    Partition ``p`` covers rows ``[p * part_rows, (p + 1) * part_rows)`` and
    stores its relative row offsets, column indices and (optionally) values
    contiguously, so multiplying streams each partition with one read.
    """

    def __init__(self, path: str, owned: bool = False):
        self.path = path
        self.owned = owned
        self.duplicates = 0
        try:
            size = os.path.getsize(path)
            with open(path, "rb") as f:
                raw = f.read(SPARSE_HEADER.size)
        except OSError as e:
            raise StorageIOError(f"cannot read {path}: {e}") from e
        if raw[:4] != SPARSE_MAGIC:
            raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {SPARSE_MAGIC!r}")
        if len(raw) < SPARSE_HEADER.size:
            raise TruncatedFileError(f"{path}: truncated header")
        _, version, n, nnz, part_rows, flag = SPARSE_HEADER.unpack(raw)
        if version != SPARSE_VERSION:
            raise VersionMismatchError(f"{path}: version mismatch: file has {version}, reader supports {SPARSE_VERSION}")
        if not is_power_of_two(part_rows):
            raise GeometryError(f"{path}: part_rows {part_rows} is not a power of two")
        self.n, self.nnz, self.part_rows, self.has_values = int(n), int(nnz), int(part_rows), bool(flag)
        self.name = os.path.basename(path)
        self.index = self._scan(size)

    def _scan(self, size) -> list[_PartIndex]:
        index = []
        pos = SPARSE_HEADER.size
        per_nz = 16 if self.has_values else 8
        with open(self.path, "rb") as f:
            for p in range(self.nparts):
                rows = min(self.part_rows, self.n - p * self.part_rows)
                end_off = pos + rows * 8
                if end_off + 8 > size:
                    raise TruncatedFileError(f"{self.path}: truncated: partition {p} offsets incomplete", partition=p)
                f.seek(end_off)
                nnz = int(np.frombuffer(f.read(8), dtype="<u8")[0])
                index.append(_PartIndex(pos, rows, nnz))
                pos = end_off + 8 + nnz * per_nz
                if pos > size:
                    raise TruncatedFileError(f"{self.path}: truncated: partition {p} has missing entries", partition=p)
        if sum(e.nnz for e in index) != self.nnz:
            raise GeometryError(f"{self.path}: partition entry counts do not add up to nnz={self.nnz}")
        return index

    @property
    def nparts(self) -> int:
        return -(-self.n // self.part_rows)

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def file_nbytes(self) -> int:
        return os.path.getsize(self.path)

    def part_nbytes(self, p: int) -> int:
        e = self.index[p]
        return (e.rows + 1) * 8 + e.nnz * (16 if self.has_values else 8)

    def read_partition(self, p: int, stats: IoStats | None = None):
        """``(relative offsets, column indices, values or None)`` of partition ``p``."""
        e = self.index[p]
        nbytes = self.part_nbytes(p)
        try:
            with open(self.path, "rb") as f:
                f.seek(e.offset)
                raw = f.read(nbytes)
        except OSError as err:
            raise StorageIOError(f"{self.path}: read of partition {p} failed: {err}") from err
        if len(raw) != nbytes:
            raise StorageIOError(f"{self.path}: short read in partition {p}")
        if stats is not None:
            stats.record_read(self.name, nbytes)
        off = np.frombuffer(raw, dtype="<u8", count=e.rows + 1).astype(np.int64)
        cols = np.frombuffer(raw, dtype="<u8", count=e.nnz, offset=(e.rows + 1) * 8).astype(np.int64)
        vals = None
        if self.has_values:
            vals = np.frombuffer(raw, dtype="<f8", count=e.nnz, offset=(e.rows + 1 + e.nnz) * 8)
        return off, cols, vals

    def to_coo(self, stats: IoStats | None = None) -> CooMatrix:
        rows, cols, vals = [], [], []
        for p in range(self.nparts):
            off, c, v = self.read_partition(p, stats)
            rows.append(p * self.part_rows + np.repeat(np.arange(off.size - 1), np.diff(off)))
            cols.append(c)
            vals.append(v if v is not None else np.ones(c.size))
        return CooMatrix(self.n, self.n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))

    def __del__(self):
        if getattr(self, "owned", False):
            try:
                os.unlink(self.path)
            except OSError:
                pass


def write_csr(path: str, n: int, src, dst, vals=None, part_rows: int = DEFAULT_SPARSE_PART_ROWS,
              owned: bool = False) -> CsrGraph:
    """Write edges (already duplicate-free) as a CSR file and open it."""
    if not is_power_of_two(part_rows):
        raise GeometryError(f"part_rows must be a power of two, got {part_rows}")
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    if vals is not None:
        vals = np.asarray(vals, dtype=np.float64)[order]
    counts = np.bincount(src, minlength=n)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    with open(path, "wb") as f:
        f.write(SPARSE_HEADER.pack(SPARSE_MAGIC, SPARSE_VERSION, n, src.size, part_rows, vals is not None))
        for p in range(-(-n // part_rows)):
            r0, r1 = p * part_rows, min(n, (p + 1) * part_rows)
            lo, hi = offsets[r0], offsets[r1]
            f.write((offsets[r0:r1 + 1] - lo).astype("<u8").tobytes())
            f.write(dst[lo:hi].astype("<u8").tobytes())
            if vals is not None:
                f.write(vals[lo:hi].astype("<f8").tobytes())
    return CsrGraph(path, owned=owned)


def from_edges(src, dst, n: int | None = None, vals=None, path: str | None = None,
               part_rows: int = DEFAULT_SPARSE_PART_ROWS) -> CsrGraph:
    """Build a graph from edge arrays; duplicate edges keep their first weight."""
    src = np.asarray(src, dtype=np.int64).reshape(-1)
    dst = np.asarray(dst, dtype=np.int64).reshape(-1)
    if src.size != dst.size:
        raise ShapeError("edge arrays differ in length")
    top = int(max(src.max(initial=-1), dst.max(initial=-1))) + 1
    if n is None:
        n = max(top, 1)
    elif top > n:
        raise IndexError(f"vertex index {top - 1} >= n={n}")
    if src.size and min(src.min(), dst.min()) < 0:
        raise IndexError("negative vertex index")
    key = src * n + dst
    _, first = np.unique(key, return_index=True)
    first.sort()
    dups = src.size - first.size
    src, dst = src[first], dst[first]
    if vals is not None:
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)[first]
    owned = path is None
    path = path or get_engine().temp_path("g")
    g = write_csr(path, n, src, dst, vals, part_rows, owned=owned)
    g.duplicates = dups
    return g


def load_sparse_edges(path: str, n: int | None = None, out: str | None = None,
                      part_rows: int = DEFAULT_SPARSE_PART_ROWS) -> CsrGraph:
    """Parse a ``src dst [weight]`` edge list (``#`` comments allowed)."""
    src, dst, w = [], [], []
    weighted = None
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                fields = line.replace(",", " ").split()
                if len(fields) not in (2, 3):
                    raise ParseError(f"{path}: line {lineno}: expected 'src dst [weight]'", row=lineno)
                try:
                    s, d = int(fields[0]), int(fields[1])
                    wt = float(fields[2]) if len(fields) == 3 else 1.0
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: cannot parse {line!r}", row=lineno) from None
                if weighted is None:
                    weighted = len(fields) == 3
                if n is not None and (s >= n or d >= n):
                    raise ParseError(f"{path}: line {lineno}: vertex {max(s, d)} >= n={n}", row=lineno)
                src.append(s)
                dst.append(d)
                w.append(wt)
    except OSError as e:
        raise StorageIOError(f"cannot read {path}: {e}") from e
    g = from_edges(src, dst, n, w if weighted else None, out, part_rows)
    if g.duplicates:
        warnings.warn(f"{path}: {g.duplicates} duplicate edge(s) dropped", stacklevel=2)
    return g


def _check_budget(engine: Engine, nbytes: int):
    budget = engine.pool.budget
    if budget is not None and engine.pool.allocated_bytes + nbytes > budget:
        raise MemoryBudgetError(f"dense operand of {nbytes} bytes exceeds the memory budget {budget}")


def spmv_semi_external(G: CsrGraph, x, engine: Engine | None = None) -> np.ndarray:
    """``y = G x`` streaming ``G`` from its file once; ``x`` stays in memory."""
    eng = engine or get_engine()
    x = np.asarray(x, dtype=np.float64)
    vec = x.ndim == 1
    x2 = x.reshape(-1, 1) if vec else x
    if x2.shape[0] != G.n:
        raise ShapeError(f"spmv: graph has {G.n} columns, vector has {x2.shape[0]} rows")
    _check_budget(eng, 2 * x2.nbytes)
    y = np.zeros((G.n, x2.shape[1]))

    def part(p):
        off, cols, vals = G.read_partition(p, eng.io)
        rows = np.repeat(np.arange(off.size - 1), np.diff(off))
        r0 = p * G.part_rows
        for j in range(x2.shape[1]):
            w = x2[cols, j] if vals is None else vals * x2[cols, j]
            y[r0:r0 + off.size - 1, j] = np.bincount(rows, weights=w, minlength=off.size - 1)

    eng.io.begin()
    try:
        if eng.config.workers > 1 and G.nparts > 1:
            list(eng.executor().map(part, range(G.nparts)))
        else:
            for p in range(G.nparts):
                part(p)
    finally:
        eng.io.end()
    return y.reshape(-1) if vec else y


def out_degrees(G: CsrGraph, engine: Engine | None = None) -> np.ndarray:
    """Number of stored entries in each row."""
    eng = engine or get_engine()
    deg = np.empty(G.n, dtype=np.int64)
    for p in range(G.nparts):
        off, _, _ = G.read_partition(p, eng.io)
        r0 = p * G.part_rows
        deg[r0:r0 + off.size - 1] = np.diff(off)
    return deg


def transpose(G: CsrGraph, path: str | None = None, engine: Engine | None = None) -> CsrGraph:
    """Write ``t(G)`` as a new CSR file (built in memory from one pass over ``G``)."""
    eng = engine or get_engine()
    coo = G.to_coo(eng.io)
    owned = path is None
    path = path or eng.temp_path("gt")
    return write_csr(path, G.n, coo.cols, coo.rows, coo.vals if G.has_values else None, G.part_rows, owned=owned)
