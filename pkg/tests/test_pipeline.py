import random

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from cases import INTRO_EXPR, intro_catalog
from gen import LAGen
from laeqsat import ir, syntax
from laeqsat.pipeline import DeriveCase, default_suite_path, derive_case, load_suite, optimize, verify
from laeqsat.saturate import SaturationConfig

SUITE = load_suite(default_suite_path())


def test_suite_is_large_enough_and_parses():
    assert len(SUITE) >= 20
    assert len({c.name for c in SUITE}) == len(SUITE)
    for c in SUITE:
        cat = ir.Catalog.from_dict({k: tuple(v) for k, v in c.catalog.items()})
        lhs, rhs = syntax.parse_la(c.lhs, cat), syntax.parse_la(c.rhs, cat)
        assert ir.la_shape(lhs, cat) == ir.la_shape(rhs, cat)
        assert verify(lhs, rhs, cat, seed=1)


@pytest.mark.parametrize("case", SUITE, ids=[c.name for c in SUITE])
def test_derive_case(case):
    res = derive_case(case)
    assert res.passed, res.line()


def test_derive_identity_case_needs_no_iterations():
    res = derive_case(DeriveCase("same", "t(X)", "t(X)", {"X": [3, 4]}))
    assert res.passed and res.report.iterations_run == 0


def test_unknown_method():
    cat = ir.Catalog.from_dict({"X": (2, 2)})
    with pytest.raises(ValueError):
        optimize(ir.mat("X"), cat, method="simplex")


def test_intro_result():
    cat = intro_catalog()
    e = syntax.parse_la(INTRO_EXPR, cat)
    res = optimize(e, cat, method="both", check=True)
    assert res.verified is True
    assert res.cost_before == 1_500_001
    assert res.cost_after * 10 <= res.cost_before
    assert set(res.plans) == {"greedy", "ilp"}
    d = res.to_dict()
    assert d["plan_dag"] and d["cost_after"] == res.cost_after


def test_input_kept_when_nothing_is_cheaper():
    cat = ir.Catalog.from_dict({"X": (3, 4), "Y": (3, 4)})
    e = syntax.parse_la("X + Y", cat)
    res = optimize(e, cat)
    assert res.cost_after <= res.cost_before
    assert res.output == e or res.cost_after < res.cost_before


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**6))
def test_optimize_never_raises_cost(seed):
    rng = random.Random(seed)
    gen = LAGen(rng)
    e = gen.expr(rng.randint(1, 4))
    res = optimize(e, gen.catalog, SaturationConfig(max_iters=6, rng_seed=seed), check=True)
    assert res.cost_after <= res.cost_before
    assert res.verified is not False
    assert ir.la_shape(res.output, gen.catalog) == ir.la_shape(e, gen.catalog)
