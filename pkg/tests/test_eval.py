import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gen import LAGen
from laeqsat import ir, syntax
from laeqsat.evaluate import (
    EvalError,
    Tensor,
    eval_la,
    eval_ra,
    evaluate,
    load_tensors,
    random_binding,
    same_value,
)
from laeqsat.ir import Attribute
from laeqsat.translate import translate_la_to_ra

A = np.array([[0.0, 5.0], [7.0, 0.0]])
x = np.array([[3.0], [2.0]])


@pytest.fixture
def fig1():
    return ir.Catalog.from_dict({"A": (2, 2), "x": (2, 1)})


def test_elementwise_with_broadcast_vector(fig1):
    e = syntax.parse_la("A * t(x)", fig1)
    np.testing.assert_array_equal(eval_la(e, {"A": A, "x": x}), [[0, 10], [21, 0]])


def test_matrix_vector(fig1):
    e = syntax.parse_la("A %*% x", fig1)
    np.testing.assert_array_equal(eval_la(e, {"A": A, "x": x}), [[10], [21]])


def test_ra_examples():
    i, j = Attribute("i", 2), Attribute("j", 2)
    a = ir.bind(ir.mat("A"), i, j)
    total = eval_ra(ir.ragg([i, j], a), {"A": A})
    assert total.attrs == () and float(total.data) == 12
    q = eval_ra(ir.ragg([j], ir.join(a, ir.bind(ir.mat("x"), j, None))), {"A": A, "x": x})
    np.testing.assert_array_equal(q.aligned((i,)), [10, 21])
    five = eval_ra(ir.ragg([Attribute("i", 3)], ir.lit(5)), {})
    assert float(five.data) == 15
    assert float(eval_ra(ir.dim(Attribute("k", 7)), {}).data) == 7


def test_rename_and_union_broadcast():
    i, j, k = Attribute("i", 2), Attribute("j", 2), Attribute("k", 2)
    a = ir.bind(ir.mat("A"), i, j)
    r = eval_ra(ir.rename({i: k}, a), {"A": A})
    np.testing.assert_array_equal(r.aligned((k, j)), A)
    # A(i,j) + x(i) replicates x along j
    u = eval_ra(ir.union(a, ir.bind(ir.mat("x"), i, None)), {"A": A, "x": x})
    np.testing.assert_array_equal(u.aligned((i, j)), A + x)


def test_transpose_involution():
    cat = ir.Catalog.from_dict({"X": (3, 5)})
    X = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_array_equal(eval_la(syntax.parse_la("t(t(X))", cat), {"X": X}), X)


def test_binding_errors(fig1):
    e = syntax.parse_la("A %*% x", fig1)
    with pytest.raises(EvalError):
        eval_la(e, {"A": A}, fig1)
    with pytest.raises(EvalError):
        eval_la(e, {"A": A, "x": x.T}, fig1)


def test_same_value_treats_1x1_as_scalar():
    assert same_value(Tensor(None, np.array([[2.0]])), Tensor((), np.asarray(2.0)))
    assert not same_value(Tensor(None, np.ones((2, 2))), Tensor(None, np.ones((2, 1))))
    assert same_value(Tensor(None, np.array([[1.0]])), Tensor(None, np.array([[1.0 + 1e-12]])))


def test_load_tensors():
    out = load_tensors(['{"name":"A","rows":2,"cols":2,"data":[0,5,7,0]}', ""])
    np.testing.assert_array_equal(out["A"], A)


def test_random_binding_honours_nnz():
    cat = ir.Catalog.from_dict({"S": (6, 5, 7), "D": (2, 3)})
    b = random_binding(cat, np.random.default_rng(1))
    assert np.count_nonzero(b["S"]) == 7
    assert b["D"].shape == (2, 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_translation_soundness(seed):
    rng = random.Random(seed)
    gen = LAGen(rng)
    e = gen.expr(rng.randint(0, 5))
    r = translate_la_to_ra(e, gen.catalog)
    b = random_binding(gen.catalog, np.random.default_rng(seed))
    m = eval_la(e, b)
    assert same_value(Tensor(None, m), evaluate(r, b))
    # the relational body itself, read through the output layout
    if r.op == "unbind":
        layout = tuple(a for a in r.data if a is not None)
        body = eval_ra(r.children[0], b).aligned(layout)
        np.testing.assert_allclose(body.reshape(m.shape), m, rtol=1e-9, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**9))
def test_evaluation_is_deterministic(seed):
    rng = random.Random(seed)
    gen = LAGen(rng)
    e = gen.expr(rng.randint(0, 5))
    b = random_binding(gen.catalog, np.random.default_rng(seed))
    assert np.array_equal(eval_la(e, b), eval_la(e, b))
