import numpy as np

from ..dag import Matrix, from_local, to_local
from ..errors import LabelError, ShapeError
from ..genops import agg, as_matrix


def class_labels(y, n: int, k: int | None = None):
    """Label vector as an ``n x 1`` engine matrix plus the class count."""
    if isinstance(y, Matrix):
        if y.size != n:
            raise ShapeError(f"expected {n} labels, got {y.size}")
        if y.elem_type == "f64":
            y = from_local(to_local(y).reshape(-1).astype(np.int64))
        elif y.shape != (n, 1):
            y = from_local(to_local(y).reshape(-1))
        lo = int(agg(y, "min").item())
        if lo < 0:
            raise LabelError(f"negative class label {lo}")
        if k is None:
            k = int(agg(y, "max").item()) + 1
        return y, k
    arr = np.asarray(y).reshape(-1)
    if arr.size != n:
        raise ShapeError(f"expected {n} labels, got {arr.size}")
    if arr.dtype.kind == "f":
        if not np.all(np.floor(arr) == arr):
            raise LabelError("class labels must be integers")
        arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise LabelError(f"negative class label {arr.min()}")
    if k is None:
        k = int(arr.max()) + 1
    return as_matrix(arr.astype(np.int64)), k
