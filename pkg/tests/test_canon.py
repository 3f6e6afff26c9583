import random
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from gen import Rewriter, random_ra
from laeqsat import canon, ir, syntax
from laeqsat.canon import Atom, Polyterm, Term, as_ra, canonicalize, find_homomorphism, iso_terms, isomorphic
from laeqsat.evaluate import eval_ra, evaluate, random_binding, same_value
from laeqsat.ir import Attribute


def attrs(names, dim=3):
    return [Attribute(n, dim) for n in names.split()]


def test_worked_example_two_sum():
    cat = ir.Catalog.from_dict({"x": (4, 4), "y": (4, 4)})
    i, j, k, m, n = attrs("i j k m n", 4)
    x, y = ir.mat("x"), ir.mat("y")
    inner = ir.ragg([k], ir.join(ir.bind(y, j, k), ir.bind(x, i, j)))
    left = ir.ragg([j], ir.join(ir.bind(x, i, j), inner))
    right = ir.ragg([m, n], ir.join(ir.bind(x, i, m), ir.bind(x, i, m), ir.bind(y, m, n)))
    p = canonicalize(ir.union(left, right), cat)
    assert str(p) == "2*sum[b0,b1](x(i,b0)^2*y(b0,b1))"
    ((c, t),) = p.terms
    assert c == 2 and p.constant == 0
    assert Counter(a.name for a in t.bag) == {"x": 2, "y": 1}
    assert t.free == {i} and len(t.bound) == 2


def test_intro_canonical_form():
    cat = ir.Catalog.from_dict({"X": (10, 5, 5), "U": (10, 1), "V": (5, 1)})
    e = syntax.parse_la("sum((X - U %*% t(V))^2)", cat)
    p = canonicalize(e, cat)
    assert str(p) == (
        "1*sum[b0,b1](X(b0,b1)^2) + -2*sum[b0,b1](U(b0)*V(b1)*X(b0,b1)) + 1*sum[b0,b1](U(b0)^2*V(b1)^2)"
    )
    expanded = syntax.parse_la("sum(X^2) - 2*sum(t(U) %*% X %*% V) + sum(t(U) %*% U) * sum(t(V) %*% V)", cat)
    assert canon.equiv(e, expanded, cat)


def test_single_leaf():
    cat = ir.Catalog.from_dict({"A": (2, 3)})
    i, j = Attribute("i", 2), Attribute("j", 3)
    p = canonicalize(ir.bind(ir.mat("A"), i, j), cat)
    ((c, t),) = p.terms
    assert c == 1 and p.constant == 0 and not t.bound
    assert [str(a) for a in t.bag] == ["A(i,j)"]


def _appendix_terms():
    i, v, w, s, t, j, k = attrs("i v w s t j k")
    A = lambda a, b: Atom("A", (a, b))
    B = lambda a, b: Atom("B", (a, b))
    t1 = Term(frozenset({v, w, s, t}), (A(i, v), A(i, s), B(v, w), B(s, t)))
    t2 = Term(frozenset({j, k}), (A(i, j), A(i, j), B(j, k), B(j, k)))
    return t1, t2, dict(v=v, w=w, s=s, t=t, j=j, k=k)


def test_appendix_homomorphism():
    t1, t2, a = _appendix_terms()
    f = find_homomorphism(t1, t2)
    assert f == {a["v"]: a["j"], a["w"]: a["k"], a["s"]: a["j"], a["t"]: a["k"]}


def test_appendix_terms_are_not_isomorphic():
    # No map goes back: both copies of A(i,j) would have to land on the two
    # distinct atoms A(i,v) and A(i,s).  The values differ too.
    t1, t2, _ = _appendix_terms()
    assert find_homomorphism(t2, t1) is None
    assert not iso_terms(t1, t2)
    cat = ir.Catalog.from_dict({"A": (3, 3), "B": (3, 3)})
    b = random_binding(cat, np.random.default_rng(0))
    v1 = eval_ra(as_ra(Polyterm([(Fraction(1), t1)])), b)
    v2 = eval_ra(as_ra(Polyterm([(Fraction(1), t2)])), b)
    assert not same_value(v1, v2)


def test_identity_and_renamed_terms():
    t1, t2, _ = _appendix_terms()
    # t2 has no symmetry, so the only self-map is the identity
    assert find_homomorphism(t2, t2) == {x: x for x in t2.bound}
    # t1 may come back as its swap automorphism; either way the bag is fixed
    f = find_homomorphism(t1, t1)
    assert sorted(t1.renamed(f).bag) == sorted(t1.bag)
    fresh = {x: Attribute(x.name + "'", x.dim) for x in t1.bound}
    assert iso_terms(t1, t1.renamed(fresh))


def test_different_cardinality_needs_no_search():
    t1, t2, _ = _appendix_terms()
    shorter = Term(t2.bound, t2.bag[:3])
    assert find_homomorphism(t2, shorter, budget=0) is None
    assert not iso_terms(t2, shorter, budget=0)


def test_transposed_product_counterexample():
    cat = ir.Catalog.from_dict({"x": (4, 4), "y": (4, 4)})
    a = syntax.parse_la("sum(x * y)", cat)
    b = syntax.parse_la("sum(x * t(y))", cat)
    assert not canon.equiv(a, b, cat)
    ((_, ta),), ((_, tb),) = canonicalize(a, cat).terms, canonicalize(b, cat).terms
    assert find_homomorphism(ta, tb) is None and find_homomorphism(tb, ta) is None


def test_reflexive_and_shape_mismatch():
    cat = ir.Catalog.from_dict({"X": (3, 4), "Y": (4, 3)})
    e = syntax.parse_la("X %*% Y + X %*% Y", cat)
    assert canon.equiv(e, e, cat)
    assert not canon.equiv(syntax.parse_la("X", cat), syntax.parse_la("t(Y)", cat), cat)
    assert not canon.equiv(syntax.parse_la("X %*% Y", cat), syntax.parse_la("sum(X)", cat), cat)
    assert canon.equiv(syntax.parse_la("t(t(X))", cat), syntax.parse_la("X", cat), cat)


def _random(seed):
    rng = random.Random(seed)
    e, cat = random_ra(rng, depth=4)
    return rng, e, cat


def same_broadcast(x, y) -> bool:
    """Equal after replicating ``y`` over attributes only ``x`` has, the
    reading union gives to terms with fewer free indices."""
    x = x.relation()
    if not set(y.relation().attrs) <= set(x.attrs):
        return False
    full = np.broadcast_to(y.aligned(x.attrs), x.data.shape)
    return bool(np.allclose(x.data, full, rtol=1e-9, atol=1e-12))


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**9))
def test_semantic_preservation(seed):
    _, e, cat = _random(seed)
    p = canonicalize(e, cat)
    back = as_ra(p)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        b = random_binding(cat, rng)
        assert same_broadcast(evaluate(e, b), evaluate(back, b))


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**9))
def test_idempotent_up_to_isomorphism(seed):
    _, e, cat = _random(seed)
    p = canonicalize(e, cat)
    assert isomorphic(canonicalize(as_ra(p), cat), p)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**9))
def test_polyterm_invariants(seed):
    _, e, cat = _random(seed)
    p = canonicalize(e, cat)
    # terms with fewer free indices are replicated, as in a broadcast union
    assert all(t.free <= ir.schema_of(e, cat).attrs for _, t in p.terms)
    for k, (c, t) in enumerate(p.terms):
        assert c != 0
        assert t.bound <= t.vars
        for _, s in p.terms[k + 1:]:
            assert not iso_terms(t, s)


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**9))
def test_homomorphisms_compose(seed):
    _, e, cat = _random(seed)
    p = canonicalize(e, cat)
    rng = random.Random(seed)
    for _, t in p.terms:
        f1 = {x: Attribute(f"{x.name}_{rng.randint(0, 9)}a", x.dim) for x in t.bound}
        t1 = t.renamed(f1)
        f2 = {x: Attribute(x.name + "b", x.dim) for x in t1.bound}
        t2 = t1.renamed(f2)
        g = find_homomorphism(t, t1)
        h = find_homomorphism(t1, t2)
        assert g is not None and h is not None
        composed = {x: h[g[x]] for x in t.bound}
        assert Counter(t.renamed(composed).bag) == Counter(t2.bag)
        # surjective on the target's bound indices
        assert set(composed.values()) == set(t2.bound)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**9))
def test_rewritten_terms_stay_equivalent(seed):
    rng, e, cat = _random(seed)
    e2, applied = Rewriter(cat, rng).rewrite(e, rng.randint(1, 10))
    assert canon.equiv(e, e2, cat), applied


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**9))
def test_unequal_values_are_not_equivalent(seed):
    rng, e, cat = _random(seed)
    b = random_binding(cat, np.random.default_rng(seed))
    v = evaluate(e, b)
    for other in [ir.join(e, ir.lit(2)), ir.union(e, ir.lit(1)), Rewriter(cat, rng).rewrite(ir.union(e, e), 3)[0]]:
        if not same_value(v, evaluate(other, b)):
            assert not canon.equiv(e, other, cat)
