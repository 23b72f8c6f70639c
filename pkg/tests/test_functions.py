import numpy as np
import pytest

from tallmat.errors import RegistryError
from tallmat.functions import agg_fn, agg_names, elem_fn, elem_names, promote, scalar_type


class TestTypeRules:
    @pytest.mark.parametrize("f,types,expected", [
        ("+", ("u8", "u8"), "i32"),
        ("+", ("i32", "i64"), "i64"),
        ("*", ("i64", "f64"), "f64"),
        ("/", ("i64", "i64"), "f64"),
        ("==", ("f64", "f64"), "u8"),
        ("pmin", ("u8", "i32"), "i32"),
        ("abs", ("i32",), "i32"),
        ("sqrt", ("i64",), "f64"),
        ("as.i64", ("f64",), "i64"),
    ])
    def test_result_type(self, f, types, expected):
        assert elem_fn(f).result_type(*types) == expected

    def test_arity_checked(self):
        with pytest.raises(RegistryError):
            elem_fn("+").result_type("f64")

    def test_promote(self):
        assert promote("u8", "i32") == "i32"
        assert promote("f64", "u8", "i64") == "f64"

    @pytest.mark.parametrize("value,expected", [(True, "u8"), (3, "i64"), (np.int32(3), "i64"), (2.5, "f64")])
    def test_scalar_type(self, value, expected):
        assert scalar_type(value) == expected

    def test_scalar_type_rejects(self):
        with pytest.raises(TypeError):
            scalar_type("x")


class TestElementFunctions:
    def test_integer_wraps(self):
        big = np.array([np.iinfo(np.int64).max], dtype=np.int64)
        assert elem_fn("+")(big, big)[0] == -2

    def test_ieee_division(self):
        out = elem_fn("/")(np.array([1.0, -1.0, 0.0]), np.array([0.0, 0.0, 0.0]))
        assert out[0] == np.inf and out[1] == -np.inf and np.isnan(out[2])

    def test_integer_division_is_float(self):
        out = elem_fn("/")(np.array([7], dtype=np.int64), np.array([2], dtype=np.int64))
        assert out.dtype == np.float64 and out[0] == 3.5

    def test_sigmoid_extremes(self):
        out = elem_fn("sigmoid")(np.array([-800.0, 0.0, 800.0]))
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_softplus_matches_log1p_exp(self):
        x = np.linspace(-30, 30, 61)
        np.testing.assert_allclose(elem_fn("softplus")(x), np.log1p(np.exp(x)), rtol=1e-14)
        assert elem_fn("softplus")(np.array([1000.0]))[0] == 1000.0

    def test_as_i64_truncates(self):
        np.testing.assert_array_equal(elem_fn("as.i64")(np.array([-1.7, 1.7])), [-1, 1])

    def test_comparison_returns_u8(self):
        out = elem_fn("<")(np.array([1, 3]), np.array([2, 2]))
        assert out.dtype == np.uint8
        np.testing.assert_array_equal(out, [1, 0])

    def test_unknown(self):
        with pytest.raises(RegistryError, match="unknown element function"):
            elem_fn("cosh")

    def test_registry_listing(self):
        assert {"+", "euclidean", "pmin"} <= set(elem_names(2))
        assert {"sqrt", "sigmoid", "!"} <= set(elem_names(1))
        assert not set(elem_names(1)) & set(elem_names(2))


class TestAggFunctions:
    @pytest.mark.parametrize("alias,name", [("sum", "+"), ("prod", "*"), ("any", "|"), ("all", "&")])
    def test_aliases(self, alias, name):
        assert agg_fn(alias).name == name

    @pytest.mark.parametrize("g,etype,expected", [
        ("+", "u8", "i64"), ("+", "f64", "f64"), ("*", "i32", "i64"), ("min", "i32", "i32"),
        ("|", "f64", "u8"), ("which.max", "f64", "i64"),
    ])
    def test_acc_type(self, g, etype, expected):
        assert agg_fn(g).acc_type(etype) == expected

    @pytest.mark.parametrize("g,etype,identity", [
        ("+", "f64", 0.0), ("*", "i64", 1), ("min", "f64", np.inf), ("max", "i32", np.iinfo(np.int32).min),
        ("&", "u8", 1), ("|", "u8", 0),
    ])
    def test_identity(self, g, etype, identity):
        assert agg_fn(g).identity(etype) == identity

    def test_identity_is_neutral(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=20)
        for g in ("+", "*", "min", "max"):
            f = agg_fn(g)
            np.testing.assert_array_equal(f.ufunc(x, f.identity("f64")), x)

    def test_index_aware(self):
        assert agg_fn("which.min").index_aware and not agg_fn("min").index_aware
        assert set(agg_names()) == {"+", "*", "min", "max", "|", "&", "which.min", "which.max"}

    def test_unknown(self):
        with pytest.raises(RegistryError):
            agg_fn("median")
