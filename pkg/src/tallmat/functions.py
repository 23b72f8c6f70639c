"""Name-keyed registry of element-wise and aggregation functions.

Element functions are vectorized numpy callables; the registry also fixes the
result element type of every function so shapes and types are known when an
operation is lifted, before any data is touched.  Integer arithmetic wraps in
two's complement and floating-point division by zero follows IEEE rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import RegistryError
from .storage import ELEM_DTYPES

_RANK = {"u8": 0, "i32": 1, "i64": 2, "f64": 3}


def promote(*types: str) -> str:
    return max(types, key=_RANK.__getitem__)


def scalar_type(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "u8"
    if isinstance(value, (int, np.integer)):
        return "i64"
    if isinstance(value, (float, np.floating)):
        return "f64"
    raise TypeError(f"unsupported scalar {value!r}")


def _arith(*types):
    t = promote(*types)
    return "i32" if t == "u8" else t


_TYPE_RULES: dict[str, Callable[..., str]] = {
    "arith": _arith,
    "float": lambda *t: "f64",
    "same": lambda *t: promote(*t),
    "bool": lambda *t: "u8",
    "i64": lambda *t: "i64",
}


@dataclass(frozen=True)
class ElemFn:
    name: str
    arity: int
    impl: Callable
    rule: str

    def result_type(self, *types: str) -> str:
        if len(types) != self.arity:
            raise RegistryError(f"{self.name!r} takes {self.arity} argument(s), got {len(types)}")
        return _TYPE_RULES[self.rule](*types)

    def compute_type(self, *types: str) -> str:
        """Element type the inputs are cast to before ``impl`` runs."""
        if self.rule == "float":
            return "f64"
        if self.rule in ("bool", "i64"):
            return promote(*types)
        return self.result_type(*types)

    def __call__(self, *args):
        out_t = self.result_type(*(_etype(a) for a in args))
        in_t = self.compute_type(*(_etype(a) for a in args))
        dt = ELEM_DTYPES[in_t]
        args = [np.asarray(a).astype(dt, copy=False) for a in args]
        with np.errstate(all="ignore"):
            res = self.impl(*args)
        return np.asarray(res).astype(ELEM_DTYPES[out_t], copy=False)


def _etype(a) -> str:
    if isinstance(a, np.ndarray):
        from .storage import elem_type_of
        return elem_type_of(a.dtype)
    return scalar_type(a)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    # log(1 + exp(x)) without overflow
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sqdiff(a, b):
    d = np.subtract(a, b)
    return np.multiply(d, d, out=d) if isinstance(d, np.ndarray) else d * d


_ELEM = [
    ElemFn("+", 2, np.add, "arith"),
    ElemFn("-", 2, np.subtract, "arith"),
    ElemFn("*", 2, np.multiply, "arith"),
    ElemFn("/", 2, np.true_divide, "float"),
    ElemFn("pmin", 2, np.minimum, "same"),
    ElemFn("pmax", 2, np.maximum, "same"),
    ElemFn("euclidean", 2, _sqdiff, "arith"),
    ElemFn("==", 2, np.equal, "bool"),
    ElemFn("!=", 2, np.not_equal, "bool"),
    ElemFn("<", 2, np.less, "bool"),
    ElemFn("<=", 2, np.less_equal, "bool"),
    ElemFn(">", 2, np.greater, "bool"),
    ElemFn(">=", 2, np.greater_equal, "bool"),
    ElemFn("&", 2, np.logical_and, "bool"),
    ElemFn("|", 2, np.logical_or, "bool"),
    ElemFn("abs", 1, np.abs, "same"),
    ElemFn("neg", 1, np.negative, "arith"),
    ElemFn("square", 1, np.square, "arith"),
    ElemFn("sqrt", 1, np.sqrt, "float"),
    ElemFn("exp", 1, np.exp, "float"),
    ElemFn("log", 1, np.log, "float"),
    ElemFn("log1p", 1, np.log1p, "float"),
    ElemFn("floor", 1, np.floor, "float"),
    ElemFn("sigmoid", 1, _sigmoid, "float"),
    ElemFn("softplus", 1, _softplus, "float"),
    ElemFn("!", 1, np.logical_not, "bool"),
    ElemFn("identity", 1, lambda x: x, "same"),
    ElemFn("as.f64", 1, lambda x: x, "float"),
    # truncates toward zero like R's as.integer
    ElemFn("as.i64", 1, np.trunc, "i64"),
]
_ELEM_BY_NAME = {f.name: f for f in _ELEM}


@dataclass(frozen=True)
class AggFn:
    """Fold with an explicit identity; parallel merges rely on associativity only."""

    name: str
    ufunc: np.ufunc
    combine: ElemFn
    index_aware: bool = False

    def acc_type(self, etype: str) -> str:
        if self.index_aware:
            return "i64"
        if self.name == "+" or self.name == "*":
            return "f64" if etype == "f64" else "i64"
        if self.name in ("|", "&"):
            return "u8"
        return etype

    def value_type(self, etype: str) -> str:
        """Element type of the running fold value (differs from acc for which.*)."""
        if self.index_aware:
            return etype
        return self.acc_type(etype)

    def identity(self, etype: str):
        vt = self.value_type(etype)
        dt = ELEM_DTYPES[vt]
        if self.name == "+" or self.name == "|":
            return dt.type(0)
        if self.name == "*" or self.name == "&":
            return dt.type(1)
        lo_better = self.name in ("min", "which.min")
        if vt == "f64":
            return dt.type(np.inf if lo_better else -np.inf)
        info = np.iinfo(dt)
        return dt.type(info.max if lo_better else info.min)

    @property
    def prefers_low(self) -> bool:
        return self.name == "which.min"


_AGG = [
    AggFn("+", np.add, _ELEM_BY_NAME["+"]),
    AggFn("*", np.multiply, _ELEM_BY_NAME["*"]),
    AggFn("min", np.minimum, _ELEM_BY_NAME["pmin"]),
    AggFn("max", np.maximum, _ELEM_BY_NAME["pmax"]),
    AggFn("|", np.logical_or, _ELEM_BY_NAME["|"]),
    AggFn("&", np.logical_and, _ELEM_BY_NAME["&"]),
    AggFn("which.min", np.minimum, _ELEM_BY_NAME["pmin"], index_aware=True),
    AggFn("which.max", np.maximum, _ELEM_BY_NAME["pmax"], index_aware=True),
]
_AGG_BY_NAME = {f.name: f for f in _AGG}
_AGG_ALIASES = {"sum": "+", "prod": "*", "pmin": "min", "pmax": "max", "any": "|", "all": "&"}


def elem_fn(name) -> ElemFn:
    if isinstance(name, ElemFn):
        return name
    try:
        return _ELEM_BY_NAME[name]
    except KeyError:
        raise RegistryError(f"unknown element function {name!r}") from None


def agg_fn(name) -> AggFn:
    if isinstance(name, AggFn):
        return name
    try:
        return _AGG_BY_NAME[_AGG_ALIASES.get(name, name)]
    except KeyError:
        raise RegistryError(f"unknown aggregation function {name!r}") from None


def elem_names(arity: int | None = None) -> list[str]:
    return [n for n, f in _ELEM_BY_NAME.items() if arity is None or f.arity == arity]


def agg_names() -> list[str]:
    return list(_AGG_BY_NAME)
