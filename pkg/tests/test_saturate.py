import random

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from gen import LAGen
from laeqsat import ir, syntax
from laeqsat.egraph import EGraph
from laeqsat.evaluate import evaluate, random_binding, same_value
from laeqsat.pipeline import Session
from laeqsat.rules import la_associativity
from laeqsat.saturate import SaturationConfig, saturate


def _report_key(rep):
    d = rep.to_dict()
    d.pop("wall_ms")
    return d


@pytest.mark.parametrize(
    "kwargs",
    [
        {"strategy": "breadth"},
        {"strategy": "sample", "sample_limit": 0},
        {"max_iters": -1},
        {"node_budget": 0},
        {"time_budget_ms": 0},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SaturationConfig(**kwargs)


def test_defaults():
    cfg = SaturationConfig()
    assert (cfg.strategy, cfg.sample_limit, cfg.max_iters) == ("sample", 100, 30)
    assert (cfg.node_budget, cfg.time_budget_ms) == (50_000, 2500)
    # depth-first ignores the sample limit
    SaturationConfig(strategy="depth-first", sample_limit=0)


def test_associativity_alone_converges():
    cat = ir.Catalog.from_dict({"X": (3, 3), "Y": (3, 3)})
    g = EGraph(cat)
    root = g.add(syntax.parse_la("(X*Y)*Y", cat))
    rep = saturate(g, [la_associativity()])
    assert rep.converged and rep.stop_reason == "converged"
    for text in ["(X*Y)*Y", "X*(Y*Y)"]:
        assert g.lookup(syntax.parse_la(text, cat)) == g.find(root)


def test_double_transpose_reaches_input():
    cat = ir.Catalog.from_dict({"X": (3, 4)})
    s = Session(cat, syntax.parse_la("t(t(X))", cat))
    rep = s.saturate()
    assert rep.converged
    assert s.contains(ir.mat("X"))


def test_zero_iterations_leave_graph_alone():
    cat = ir.Catalog.from_dict({"X": (3, 4)})
    s = Session(cat, syntax.parse_la("t(t(X))", cat))
    n = s.g.node_count()
    rep = s.saturate(SaturationConfig(max_iters=0))
    assert (rep.converged, rep.stop_reason, rep.iterations_run) == (False, "iter_limit", 0)
    assert s.g.node_count() == n == rep.nodes_after


def test_budgets_stop_the_run():
    cat = ir.Catalog.from_dict({"X": (1000, 500, 500), "U": (1000, 1), "V": (500, 1)})
    e = syntax.parse_la("sum((X - U %*% t(V))^2)", cat)
    rep = Session(cat, e).saturate(SaturationConfig(node_budget=200))
    assert rep.stop_reason == "node_budget" and not rep.converged
    rep = Session(cat, e).saturate(SaturationConfig(time_budget_ms=1))
    assert rep.stop_reason == "timeout" and not rep.converged


def test_goal_stops_early():
    cat = ir.Catalog.from_dict({"X": (3, 4), "Y": (3, 4)})
    s = Session(cat, syntax.parse_la("sum(X + Y)", cat))
    target = syntax.parse_la("sum(X) + sum(Y)", cat)
    rep = s.saturate(goal=lambda: s.contains(target))
    assert rep.stop_reason == "goal" and s.contains(target)


def test_report_counts():
    cat = ir.Catalog.from_dict({"X": (3, 4), "Y": (3, 4)})
    s = Session(cat, syntax.parse_la("X * Y - X", cat))
    rep = s.saturate()
    assert rep.nodes_before < rep.nodes_after == s.g.node_count()
    assert rep.classes_after == s.g.class_count()
    assert set(rep.applied) <= set(rep.matches)
    assert all(rep.applied[k] <= rep.matches[k] for k in rep.applied)


def _input(seed):
    rng = random.Random(seed)
    gen = LAGen(rng)
    return gen.expr(rng.randint(1, 4)), gen.catalog


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**6), st.sampled_from(["sample", "depth-first"]))
def test_determinism(seed, strategy):
    e, cat = _input(seed)
    cfg = SaturationConfig(strategy=strategy, sample_limit=5, max_iters=6, rng_seed=seed)
    a, b = Session(cat, e), Session(cat, e)
    ra, rb = a.saturate(cfg), b.saturate(cfg)
    assert _report_key(ra) == _report_key(rb)
    assert a.g.to_json() == b.g.to_json()


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**6))
def test_monotone_over_iterations(seed):
    e, cat = _input(seed)
    last_nodes, last_terms = 0, []
    for k in range(5):
        s = Session(cat, e)
        s.saturate(SaturationConfig(max_iters=k, sample_limit=5, rng_seed=seed))
        assert s.g.node_count() >= last_nodes
        # anything the root represented earlier it still represents
        for t in last_terms:
            assert s.contains(t)
        last_nodes = s.g.node_count()
        rng = random.Random(k)
        sizes = s.g.min_sizes()[0]
        last_terms = [s.g.sample_term(s.root, rng, 25, sizes) for _ in range(3)]


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10**6))
def test_root_members_stay_equal_to_input(seed):
    e, cat = _input(seed)
    s = Session(cat, e)
    s.saturate(SaturationConfig(max_iters=8, rng_seed=seed))
    rng = random.Random(seed)
    sizes = s.g.min_sizes()[0]
    nprng = np.random.default_rng(seed)
    binds = [random_binding(cat, nprng) for _ in range(3)]
    for _ in range(5):
        t = s.g.sample_term(s.root, rng, 40, sizes)
        for b in binds:
            assert same_value(evaluate(t, b), evaluate(e, b))
