"""Physical storage for tall-and-skinny (TAS) matrices.

A :class:`TasStore` holds one matrix in *tall space*: rows are the partition
dimension and are split into I/O partitions of ``part_rows`` rows (a power of
two).  Every partition's elements are contiguous in the store's layout, both
in memory and on disk, so a run of partitions can be fetched with one read.

In-memory partitions are carved from the fixed-size chunks of a
:class:`ChunkPool`; file-backed stores use the native ``FLMX`` format directly
as their backing file, so a native file can be streamed without conversion.
"""

from __future__ import annotations

import itertools
import os
import struct
import threading
import weakref
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadMagicError,
    GeometryError,
    MemoryBudgetError,
    StorageIOError,
    TruncatedFileError,
    VersionMismatchError,
)

ELEM_DTYPES = {
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
    "i32": np.dtype("<i4"),
    "u8": np.dtype("u1"),
}
ELEM_CODES = {"f64": 0, "i64": 1, "i32": 2, "u8": 3}
CODE_ELEMS = {v: k for k, v in ELEM_CODES.items()}
LAYOUT_CODES = {"col": 0, "row": 1}
ORIENT_CODES = {"tall": 0, "wide": 1}

MAGIC = b"FLMX"
VERSION = 1
HEADER = struct.Struct("<4sIBBBBQQQ")
HEADER_SIZE = HEADER.size  # 36 bytes

DEFAULT_PART_ROWS = 1 << 16
DEFAULT_CHUNK_BYTES = 64 << 20
_ALIGN = 64


def elem_type_of(dtype) -> str:
    """Map a numpy dtype onto the engine's element type names."""
    dt = np.dtype(dtype)
    if dt == np.bool_ or dt == np.uint8:
        return "u8"
    if dt.kind == "f":
        return "f64"
    if dt.kind in "iu":
        return "i32" if dt.itemsize <= 4 and dt.kind == "i" else "i64"
    raise TypeError(f"unsupported element dtype {dt}")


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class MatrixMeta:
    nrow: int
    ncol: int
    elem_type: str = "f64"
    layout: str = "col"
    orientation: str = "tall"

    def __post_init__(self):
        if self.nrow < 1 or self.ncol < 1:
            raise GeometryError(f"matrix dimensions must be >= 1, got {self.nrow}x{self.ncol}")
        if self.elem_type not in ELEM_DTYPES:
            raise TypeError(f"unknown element type {self.elem_type!r}")
        if self.layout not in LAYOUT_CODES:
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.orientation not in ORIENT_CODES:
            raise ValueError(f"unknown orientation {self.orientation!r}")

    @property
    def dtype(self) -> np.dtype:
        return ELEM_DTYPES[self.elem_type]

    @property
    def elem_size(self) -> int:
        return self.dtype.itemsize

    @property
    def nbytes(self) -> int:
        return self.nrow * self.ncol * self.elem_size

    def transposed(self) -> "MatrixMeta":
        return MatrixMeta(
            nrow=self.ncol,
            ncol=self.nrow,
            elem_type=self.elem_type,
            layout="row" if self.layout == "col" else "col",
            orientation="wide" if self.orientation == "tall" else "tall",
        )


# ---------------------------------------------------------------------------
# chunk pool


class _Chunk:
    __slots__ = ("buf", "units", "used", "refs")

    def __init__(self, nbytes, units):
        self.buf = np.empty(nbytes, dtype=np.uint8)
        self.units = units
        self.used = 0
        self.refs = 0


class Region:
    """A byte range carved from a pool chunk."""

    __slots__ = ("pool", "chunk", "offset", "nbytes", "released", "__weakref__")

    def __init__(self, pool, chunk, offset, nbytes):
        self.pool = pool
        self.chunk = chunk
        self.offset = offset
        self.nbytes = nbytes
        self.released = False

    def view(self, dtype, shape, order="C") -> np.ndarray:
        dtype = np.dtype(dtype)
        count = int(np.prod(shape)) if len(shape) else 1
        raw = self.chunk.buf[self.offset:self.offset + count * dtype.itemsize]
        return raw.view(dtype).reshape(shape, order=order)

    def memoryview(self) -> memoryview:
        return memoryview(self.chunk.buf[self.offset:self.offset + self.nbytes])

    def release(self):
        if not self.released:
            self.released = True
            self.pool._release(self)


class ChunkPool:
    """Fixed-size chunk allocator with recycling and a hard byte budget.

    Small requests are bump-allocated inside a shared open chunk; requests of
    at least half a chunk get a chunk of their own; requests larger than a
    chunk get a dedicated multi-chunk buffer that is dropped on release.
    ``allocated_bytes`` counts live and free chunks and never exceeds
    ``budget``.
    """

    def __init__(self, chunk_bytes: int = DEFAULT_CHUNK_BYTES, budget: int | None = None):
        if chunk_bytes < 1024:
            raise ValueError("chunk_bytes must be at least 1 KiB")
        self.chunk_bytes = int(chunk_bytes)
        self.budget = budget
        self._lock = threading.Lock()
        self._free: list[_Chunk] = []
        self._chunks: dict[int, _Chunk] = {}
        self._open: _Chunk | None = None
        self.allocated_units = 0
        self.high_water_bytes = 0
        self.in_use_bytes = 0

    # accounting --------------------------------------------------------
    @property
    def allocated_bytes(self) -> int:
        return self.allocated_units * self.chunk_bytes

    @property
    def live_count(self) -> int:
        return len(self._chunks)

    @property
    def free_count(self) -> int:
        return len(self._free)

    @property
    def allocated_count(self) -> int:
        return len(self._chunks) + len(self._free)

    def stats(self) -> dict:
        return {
            "chunk_bytes": self.chunk_bytes,
            "allocated_bytes": self.allocated_bytes,
            "in_use_bytes": self.in_use_bytes,
            "high_water_bytes": self.high_water_bytes,
            "live_chunks": self.live_count,
            "free_chunks": self.free_count,
        }

    def reset_high_water(self):
        with self._lock:
            self.high_water_bytes = self.allocated_bytes

    def trim(self):
        """Return free chunks to the system."""
        with self._lock:
            self.allocated_units -= sum(c.units for c in self._free)
            self._free.clear()

    # allocation --------------------------------------------------------
    def _new_chunk(self, units) -> _Chunk:
        need = units * self.chunk_bytes
        if self.budget is not None and self.allocated_bytes + need > self.budget:
            # give free chunks back before failing
            self.allocated_units -= sum(c.units for c in self._free)
            self._free.clear()
            if self.allocated_bytes + need > self.budget:
                raise MemoryBudgetError(
                    f"memory budget exhausted: {self.allocated_bytes} bytes allocated, "
                    f"{need} more requested, budget {self.budget}"
                )
        chunk = _Chunk(need, units)
        self.allocated_units += units
        self.high_water_bytes = max(self.high_water_bytes, self.allocated_bytes)
        return chunk

    def _take_chunk(self) -> _Chunk:
        if self._free:
            chunk = self._free.pop()
            chunk.used = 0
            return chunk
        return self._new_chunk(1)

    def allocate(self, nbytes: int) -> Region:
        nbytes = max(int(nbytes), 1)
        padded = (nbytes + _ALIGN - 1) // _ALIGN * _ALIGN
        with self._lock:
            if padded > self.chunk_bytes:
                units = -(-padded // self.chunk_bytes)
                chunk = self._new_chunk(units)
                offset = 0
            elif padded * 2 >= self.chunk_bytes:
                chunk = self._take_chunk()
                offset = 0
            else:
                chunk = self._open
                if chunk is None or chunk.used + padded > self.chunk_bytes:
                    chunk = self._take_chunk()
                    self._open = chunk
                offset = chunk.used
            chunk.used = offset + padded
            chunk.refs += 1
            self._chunks[id(chunk)] = chunk
            self.in_use_bytes += padded
            return Region(self, chunk, offset, nbytes)

    def _retire(self, chunk: _Chunk):
        self._chunks.pop(id(chunk), None)
        if chunk.units == 1:
            chunk.used = 0
            self._free.append(chunk)
        else:
            self.allocated_units -= chunk.units

    def _release(self, region: Region):
        padded = (region.nbytes + _ALIGN - 1) // _ALIGN * _ALIGN
        with self._lock:
            chunk = region.chunk
            chunk.refs -= 1
            self.in_use_bytes -= padded
            if chunk.refs == 0:
                if chunk is self._open:
                    self._open = None
                self._retire(chunk)


# ---------------------------------------------------------------------------
# I/O accounting


class IoStats:
    """Thread-safe byte counters, with per-matrix read/write tallies."""

    def __init__(self):
        self._lock = threading.Lock()
        self._busy = 0
        self.bytes_read = 0
        self.bytes_written = 0
        self.read_calls = 0
        self.write_calls = 0
        self.per_matrix_read: dict[str, int] = {}
        self.per_matrix_written: dict[str, int] = {}

    def record_read(self, name: str, nbytes: int):
        with self._lock:
            self.bytes_read += nbytes
            self.read_calls += 1
            self.per_matrix_read[name] = self.per_matrix_read.get(name, 0) + nbytes

    def record_write(self, name: str, nbytes: int):
        with self._lock:
            self.bytes_written += nbytes
            self.write_calls += 1
            self.per_matrix_written[name] = self.per_matrix_written.get(name, 0) + nbytes

    def read_of(self, name: str) -> int:
        return self.per_matrix_read.get(name, 0)

    def written_of(self, name: str) -> int:
        return self.per_matrix_written.get(name, 0)

    def begin(self):
        with self._lock:
            self._busy += 1

    def end(self):
        with self._lock:
            self._busy -= 1

    def reset(self):
        with self._lock:
            if self._busy:
                raise RuntimeError("IoStats cannot be reset during a materialization")
            self.bytes_read = self.bytes_written = 0
            self.read_calls = self.write_calls = 0
            self.per_matrix_read.clear()
            self.per_matrix_written.clear()

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "bytes_read": self.bytes_read,
                "bytes_written": self.bytes_written,
                "read_calls": self.read_calls,
                "write_calls": self.write_calls,
            }


# ---------------------------------------------------------------------------
# TAS stores

_store_ids = itertools.count()


def pack_header(meta: MatrixMeta, part_rows: int, orientation: str = "tall") -> bytes:
    return HEADER.pack(
        MAGIC,
        VERSION,
        ELEM_CODES[meta.elem_type],
        LAYOUT_CODES[meta.layout],
        ORIENT_CODES[orientation],
        0,
        meta.nrow,
        meta.ncol,
        part_rows,
    )


def unpack_header(raw: bytes, path="<buffer>"):
    """Parse a native header; returns ``(meta, part_rows, orientation)``."""
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < HEADER_SIZE:
        raise TruncatedFileError(f"{path}: truncated header ({len(raw)} of {HEADER_SIZE} bytes)")
    magic, version, etype, layout, orient, _reserved, nrow, ncol, part_rows = HEADER.unpack(raw[:HEADER_SIZE])
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version mismatch: file has {version}, reader supports {VERSION}")
    try:
        meta = MatrixMeta(
            nrow=nrow,
            ncol=ncol,
            elem_type=CODE_ELEMS[etype],
            layout={v: k for k, v in LAYOUT_CODES.items()}[layout],
        )
        orientation = {v: k for k, v in ORIENT_CODES.items()}[orient]
    except KeyError as e:
        raise BadMagicError(f"{path}: corrupt header field {e}") from None
    if not is_power_of_two(part_rows):
        raise GeometryError(f"{path}: part_rows {part_rows} is not a power of two")
    return meta, part_rows, orientation


def _close_fd(fd):
    try:
        os.close(fd)
    except OSError:
        pass


def _cleanup(regions, fd_box, path, owned):
    for r in regions:
        if r is not None:
            r.release()
    regions.clear()
    if fd_box[0] is not None:
        _close_fd(fd_box[0])
        fd_box[0] = None
    if owned and path:
        try:
            os.unlink(path)
        except OSError:
            pass


class PartitionBuffer:
    """Partitions returned by one read; views stay valid until ``release``."""

    __slots__ = ("parts", "first", "_region")

    def __init__(self, parts, first, region=None):
        self.parts = parts
        self.first = first
        self._region = region

    def release(self):
        if self._region is not None:
            self._region.release()
            self._region = None


class TasStore:
    """Partitioned physical storage of a tall matrix.

    ``meta`` always describes the tall-space geometry (rows are the partition
    dimension); wide matrices are transposed views over a store.
    """

    def __init__(self, meta: MatrixMeta, part_rows: int = DEFAULT_PART_ROWS, backing: str = "memory",
                 path: str | None = None, pool: ChunkPool | None = None, owned: bool = False,
                 name: str | None = None):
        if not is_power_of_two(part_rows):
            raise GeometryError(f"part_rows must be a power of two, got {part_rows}")
        if backing not in ("memory", "file"):
            raise ValueError(f"unknown backing {backing!r}")
        if backing == "file" and not path:
            raise ValueError("file backing needs a path")
        if backing == "memory" and pool is None:
            raise ValueError("memory backing needs a chunk pool")
        self.meta = replace(meta, orientation="tall")
        self.part_rows = int(part_rows)
        self.backing = backing
        self.path = path
        self.pool = pool
        self.name = name or f"m{next(_store_ids)}"
        self.nparts = -(-self.meta.nrow // self.part_rows)
        self._regions: list[Region | None] = [None] * self.nparts if backing == "memory" else []
        self._arrays: list[np.ndarray | None] = [None] * self.nparts if backing == "memory" else []
        self._fd = [None]
        self._finalizer = weakref.finalize(self, _cleanup, self._regions, self._fd, path, owned)

    # geometry -------------------------------------------------------------
    @property
    def nrow(self):
        return self.meta.nrow

    @property
    def ncol(self):
        return self.meta.ncol

    @property
    def dtype(self):
        return self.meta.dtype

    @property
    def order(self):
        return "F" if self.meta.layout == "col" else "C"

    def part_nrows(self, idx: int) -> int:
        return min(self.part_rows, self.meta.nrow - idx * self.part_rows)

    def part_nbytes(self, idx: int) -> int:
        return self.part_nrows(idx) * self.meta.ncol * self.meta.elem_size

    def part_offset(self, idx: int) -> int:
        return HEADER_SIZE + idx * self.part_rows * self.meta.ncol * self.meta.elem_size

    def partition_rows(self) -> list[int]:
        return [self.part_nrows(i) for i in range(self.nparts)]

    @property
    def file_nbytes(self) -> int:
        return HEADER_SIZE + self.meta.nbytes

    def _check_range(self, first, count):
        if first < 0 or count < 1 or first + count > self.nparts:
            raise IndexError(f"partition range [{first}, {first + count}) outside [0, {self.nparts}) of {self.name}")

    def _fileno(self):
        if self._fd[0] is None:
            try:
                self._fd[0] = os.open(self.path, os.O_RDWR if os.access(self.path, os.W_OK) else os.O_RDONLY)
            except OSError as e:
                raise StorageIOError(f"cannot open {self.path}: {e}") from e
        return self._fd[0]

    # reads ------------------------------------------------------------------
    def read_partitions(self, first: int, count: int = 1, stats: IoStats | None = None,
                        pool: ChunkPool | None = None) -> PartitionBuffer:
        """Fetch ``count`` partitions starting at ``first`` in a single read."""
        self._check_range(first, count)
        shapes = [(self.part_nrows(i), self.meta.ncol) for i in range(first, first + count)]
        if self.backing == "memory":
            parts = []
            for i, shape in zip(range(first, first + count), shapes):
                arr = self._arrays[i]
                parts.append(arr if arr is not None else np.zeros(shape, dtype=self.dtype, order=self.order))
            return PartitionBuffer(parts, first)
        start = self.part_offset(first)
        nbytes = sum(self.part_nbytes(i) for i in range(first, first + count))
        region = (pool or self.pool or _scratch_pool()).allocate(nbytes)
        mv = region.memoryview()
        fd = self._fileno()
        done = 0
        try:
            while done < nbytes:
                got = os.preadv(fd, [mv[done:]], start + done)
                if got <= 0:
                    part = first + _locate(self, start + done)
                    raise StorageIOError(f"{self.path}: short read in partition {part}")
                done += got
        except OSError as e:
            region.release()
            raise StorageIOError(f"{self.path}: read of partition {first} failed: {e}") from e
        except StorageIOError:
            region.release()
            raise
        if stats is not None:
            stats.record_read(self.name, nbytes)
        parts = []
        off = 0
        for shape in shapes:
            n = shape[0] * shape[1]
            raw = region.chunk.buf[region.offset + off:region.offset + off + n * self.meta.elem_size]
            parts.append(raw.view(self.dtype).reshape(shape, order=self.order))
            off += n * self.meta.elem_size
        return PartitionBuffer(parts, first, region)

    def read_rows(self, r0: int, r1: int, stats: IoStats | None = None) -> np.ndarray:
        """Copy rows ``[r0, r1)`` into a fresh C-ordered array."""
        first = r0 // self.part_rows
        last = (r1 - 1) // self.part_rows
        buf = self.read_partitions(first, last - first + 1, stats)
        try:
            out = np.concatenate(buf.parts, axis=0) if len(buf.parts) > 1 else buf.parts[0]
            lo = r0 - first * self.part_rows
            return np.ascontiguousarray(out[lo:lo + (r1 - r0)])
        finally:
            buf.release()

    # writes -----------------------------------------------------------------
    def _check_geometry(self, idx, buf):
        if not 0 <= idx < self.nparts:
            raise IndexError(f"partition {idx} outside [0, {self.nparts}) of {self.name}")
        expect = (self.part_nrows(idx), self.meta.ncol)
        if tuple(buf.shape) != expect:
            raise GeometryError(
                f"partition {idx} of {self.name} needs a {expect[0]}x{expect[1]} buffer, got {'x'.join(map(str, buf.shape))}"
            )

    def write_partition(self, idx: int, buf, stats: IoStats | None = None):
        buf = np.asarray(buf)
        if buf.ndim == 1:
            buf = buf.reshape(-1, 1)
        self._check_geometry(idx, buf)
        if self.backing == "memory":
            if self._arrays[idx] is None:
                region = self.pool.allocate(self.part_nbytes(idx))
                self._regions[idx] = region
                self._arrays[idx] = region.view(self.dtype, buf.shape, self.order)
            self._arrays[idx][...] = buf
            return
        data = np.ravel(np.asarray(buf, dtype=self.dtype), order=self.order)
        self._pwrite(self.part_offset(idx), memoryview(data).cast("B"), idx)
        if stats is not None:
            stats.record_write(self.name, data.nbytes)

    def adopt_partition(self, idx: int, region: Region, arr: np.ndarray):
        """Install a pool region already holding partition ``idx`` (memory stores)."""
        self._check_geometry(idx, arr)
        old = self._regions[idx]
        self._regions[idx] = region
        self._arrays[idx] = arr
        if old is not None:
            old.release()

    def _pwrite(self, offset, mv, idx):
        fd = self._fileno()
        done = 0
        try:
            while done < len(mv):
                done += os.pwrite(fd, mv[done:], offset + done)
        except OSError as e:
            raise StorageIOError(f"{self.path}: write of partition {idx} failed: {e}") from e

    def write_header(self, orientation="tall"):
        self._pwrite(0, memoryview(pack_header(self.meta, self.part_rows, orientation)), -1)

    def close(self):
        if self._fd[0] is not None:
            _close_fd(self._fd[0])
            self._fd[0] = None

    def __repr__(self):
        return (f"TasStore({self.name}, {self.meta.nrow}x{self.meta.ncol} {self.meta.elem_type} "
                f"{self.meta.layout}, part_rows={self.part_rows}, {self.backing})")


def _locate(store, byte_offset):
    return max(0, (byte_offset - HEADER_SIZE) // max(1, store.part_rows * store.meta.ncol * store.meta.elem_size))


_fallback_pool = None


def _scratch_pool():
    global _fallback_pool
    if _fallback_pool is None:
        _fallback_pool = ChunkPool(8 << 20)
    return _fallback_pool


def create_tas(meta: MatrixMeta, part_rows: int = DEFAULT_PART_ROWS, backing: str = "memory",
               path: str | None = None, pool: ChunkPool | None = None, owned: bool = False,
               orientation: str = "tall") -> TasStore:
    """Create an empty store; file stores get a header and a sized, unwritten body."""
    if not is_power_of_two(part_rows):
        raise GeometryError(f"part_rows must be a power of two, got {part_rows}")
    if backing == "memory" and pool is not None and pool.budget is not None and meta.nbytes > pool.budget:
        raise MemoryBudgetError(f"{meta.nbytes} bytes exceed the memory budget {pool.budget}")
    store = TasStore(meta, part_rows, backing, path=path, pool=pool, owned=owned)
    if backing == "file":
        try:
            fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        except OSError as e:
            raise StorageIOError(f"cannot create {path}: {e}") from e
        store._fd[0] = fd
        store.write_header(orientation)
        os.ftruncate(fd, store.file_nbytes)
    return store


def open_native(path: str, pool: ChunkPool | None = None):
    """Open a native file as a file-backed store; returns ``(store, orientation)``."""
    try:
        size = os.path.getsize(path)
        with open(path, "rb") as f:
            raw = f.read(HEADER_SIZE)
    except OSError as e:
        raise StorageIOError(f"cannot read {path}: {e}") from e
    meta, part_rows, orientation = unpack_header(raw, path)
    store = TasStore(meta, part_rows, "file", path=path, pool=pool)
    if size < store.file_nbytes:
        bad = next(i for i in range(store.nparts)
                   if store.part_offset(i) + store.part_nbytes(i) > size)
        have = max(0, size - store.part_offset(bad))
        raise TruncatedFileError(
            f"{path}: truncated: partition {bad} has {have} of {store.part_nbytes(bad)} bytes",
            partition=bad,
        )
    return store, orientation


def read_partitions(store: TasStore, first_idx: int, count: int = 1, stats: IoStats | None = None):
    return store.read_partitions(first_idx, count, stats)


def write_partition(store: TasStore, idx: int, buffer, stats: IoStats | None = None):
    store.write_partition(idx, buffer, stats)
