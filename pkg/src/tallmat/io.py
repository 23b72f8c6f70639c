"""Native binary files and delimited text."""

from __future__ import annotations

import numpy as np

from .dag import Matrix, from_local, materialize, source
from .engine import get_engine
from .errors import ParseError, StorageIOError
from .storage import ELEM_DTYPES, create_tas, open_native


def save_native(m: Matrix, path: str) -> None:
    """Write ``m`` (materializing it first) as a native file at ``path``."""
    eng = get_engine()
    materialize(m)
    st = m.node.physical_store(eng)
    out = create_tas(st.meta, st.part_rows, "file", path=path, pool=eng.pool, owned=False,
                     orientation="wide" if m.transposed else "tall")
    for p in range(st.nparts):
        buf = st.read_partitions(p, 1, eng.io, eng.pool)
        try:
            out.write_partition(p, buf.parts[0], eng.io)
        finally:
            buf.release()
    out.close()


def load_native(path: str) -> Matrix:
    """Open a native file as a file-backed matrix; no data is read yet."""
    store, orientation = open_native(path, get_engine().pool)
    return source(store, transposed=orientation == "wide")


def load_dense_text(path: str, delimiter: str = ",", elem_type: str = "f64") -> Matrix:
    """Parse a rectangular delimited text file; row ``i``, field ``j`` -> element ``(i, j)``."""
    dtype = ELEM_DTYPES[elem_type]
    conv = float if elem_type == "f64" else int
    rows = []
    width = None
    try:
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                fields = line.split(delimiter)
                r = len(rows)
                if width is None:
                    width = len(fields)
                elif len(fields) != width:
                    raise ParseError(f"{path}: row {r} has {len(fields)} fields, expected {width}", row=r)
                try:
                    rows.append([conv(x) for x in fields])
                except ValueError:
                    bad = next(x for x in fields if not _parses(conv, x))
                    raise ParseError(f"{path}: row {r}: cannot parse {bad.strip()!r} as {elem_type}", row=r) from None
    except OSError as e:
        raise StorageIOError(f"cannot read {path}: {e}") from e
    if not rows:
        raise ParseError(f"{path}: no data rows", row=0)
    return from_local(np.array(rows, dtype=dtype))


def _parses(conv, x) -> bool:
    try:
        conv(x)
        return True
    except ValueError:
        return False


def save_dense_text(array, path: str, delimiter: str = ",") -> None:
    arr = np.asarray(array)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    fmt = "%.17g" if arr.dtype.kind == "f" else "%d"
    np.savetxt(path, arr, delimiter=delimiter, fmt=fmt)
