"""End-to-end optimization: LA in, cheaper LA out."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ir, syntax
from .egraph import EGraph, ENode
from .evaluate import EvalError, eval_la, random_binding, same_value, Tensor
from .extract import CostModel, ExtractedPlan, NoLAPlan, expr_cost, extract_greedy, extract_ilp, lower_to_la
from .ir import Catalog, Expr
from .rules import Rule, RuleContext, builtin_ruleset
from .saturate import SaturationConfig, SaturationReport, saturate

VERIFY_RTOL = 1e-9
VERIFY_TRIALS = 3


class VerifyError(Exception):
    """The optimized plan disagreed with the input on a random binding."""


@dataclass
class Session:
    """An e-graph seeded with one LA expression.

    A non-scalar root is also bound to a fixed output layout so that the
    relational rules have a context to work in.
    """

    catalog: Catalog
    expr: Expr
    g: EGraph = field(init=False)
    ctx: RuleContext = field(init=False)
    root: int = field(init=False)

    def __post_init__(self):
        self.g = EGraph(self.catalog)
        self.root = self.g.add(self.expr)
        self.ctx = RuleContext(self.g)
        shape = ir.la_shape(self.expr, self.catalog)
        if shape != (1, 1):
            out = tuple(self.ctx.names.new(s) if s > 1 else None for s in shape)
            self.g.add_node(ENode("bind", out, (self.root,)))

    def saturate(self, cfg: Optional[SaturationConfig] = None, rules: Optional[list[Rule]] = None, goal=None) -> SaturationReport:
        return saturate(self.g, builtin_ruleset() if rules is None else rules, cfg, self.ctx, goal)

    def contains(self, e: Expr) -> bool:
        cid = self.g.lookup(e)
        return cid is not None and self.g.find(cid) == self.g.find(self.root)


@dataclass
class OptimizeResult:
    input: Expr
    output: Expr
    cost_before: float
    cost_after: float
    saturation: SaturationReport
    method: str
    plan: ExtractedPlan
    plans: dict = field(default_factory=dict)  # method -> (cost, LA text)
    verified: Optional[bool] = None
    phase_ms: dict = field(default_factory=dict)
    session: Optional[Session] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "input": syntax.to_la_text(self.input),
            "output": syntax.to_la_text(self.output),
            "cost_before": self.cost_before,
            "cost_after": self.cost_after,
            "method": self.method,
            "fallback": self.plan.fallback,
            "plans": {k: {"cost": c, "output": t} for k, (c, t) in sorted(self.plans.items())},
            "plan_dag": self.plan.dag(self.session.g) if self.session else None,
            "saturation": self.saturation.to_dict(),
            "verified": self.verified,
            "wall_ms": self.phase_ms,
        }


def verify(a: Expr, b: Expr, catalog: Catalog, seed: int = 0, trials: int = VERIFY_TRIALS) -> bool:
    """Evaluate both expressions on random bindings; raise ``EvalError`` when
    an expression cannot be evaluated (e.g. an undeclared function body)."""
    rng = np.random.default_rng(seed)
    names = sorted(ir.matrices(a) | ir.matrices(b))
    for _ in range(trials):
        bind = random_binding(catalog, rng, names)
        x, y = eval_la(a, bind), eval_la(b, bind)
        if not same_value(Tensor(None, x), Tensor(None, y), rtol=VERIFY_RTOL, atol=VERIFY_RTOL):
            return False
    return True


def optimize(
    expr: Expr,
    catalog: Catalog,
    cfg: Optional[SaturationConfig] = None,
    method: str = "ilp",
    check: bool = False,
    rules: Optional[list[Rule]] = None,
) -> OptimizeResult:
    """Saturate, extract with ``method`` ('greedy', 'ilp' or 'both') and
    lower the chosen plan back to LA.

    If the best plan is not cheaper than the input under the same cost
    model the input is returned unchanged, so cost never goes up.
    """
    if method not in ("greedy", "ilp", "both"):
        raise ValueError(f"unknown extraction method {method!r}")
    cfg = cfg or SaturationConfig()
    ms = {}
    t = time.perf_counter()
    s = Session(catalog, expr)
    cm = CostModel()
    cost_before = expr_cost(s.g, expr, cm)
    ms["setup"] = (time.perf_counter() - t) * 1000.0

    t = time.perf_counter()
    rep = s.saturate(cfg, rules)
    ms["saturation"] = (time.perf_counter() - t) * 1000.0

    t = time.perf_counter()
    plans = {}
    if method in ("greedy", "both"):
        plans["greedy"] = extract_greedy(s.g, s.root, cm)
    if method in ("ilp", "both"):
        plans["ilp"] = extract_ilp(s.g, s.root, cm)
    ms["extraction"] = (time.perf_counter() - t) * 1000.0
    chosen = plans["ilp" if "ilp" in plans else "greedy"]

    t = time.perf_counter()
    lowered = {k: lower_to_la(s.g, p) for k, p in plans.items()}
    out, cost_after = lowered["ilp" if "ilp" in plans else "greedy"], chosen.total_cost
    if cost_after >= cost_before:
        out, cost_after = expr, cost_before
    ms["lowering"] = (time.perf_counter() - t) * 1000.0

    res = OptimizeResult(
        expr, out, cost_before, cost_after, rep, method, chosen,
        {k: (p.total_cost, syntax.to_la_text(lowered[k])) for k, p in plans.items()},
    )
    if check:
        t = time.perf_counter()
        try:
            res.verified = verify(expr, out, catalog, seed=cfg.rng_seed)
        except EvalError:
            res.verified = None
        ms["verify"] = (time.perf_counter() - t) * 1000.0
        if res.verified is False:
            raise VerifyError(f"plan {syntax.to_la_text(out)} differs from {syntax.to_la_text(expr)}")
    res.phase_ms = ms
    res.session = s
    return res


@dataclass
class DeriveCase:
    name: str
    lhs: str
    rhs: str
    catalog: dict
    guard: str = ""


@dataclass
class DeriveResult:
    case: DeriveCase
    passed: bool
    report: SaturationReport

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        r = self.report
        return (
            f"{verdict}  {self.case.name:28s} {self.case.lhs} -> {self.case.rhs}"
            f"  [{r.stop_reason}, {r.iterations_run} it, {r.nodes_after} nodes]"
        )


def derive_case(case: DeriveCase, cfg: Optional[SaturationConfig] = None, stop_early: bool = True) -> DeriveResult:
    """Saturate the lhs and check the rhs lands in the root class.

    With ``stop_early`` the run ends as soon as the rhs is present instead
    of waiting for a fixpoint.
    """
    cat = Catalog.from_dict({k: tuple(v) for k, v in case.catalog.items()})
    lhs = syntax.parse_la(case.lhs, cat)
    rhs = syntax.parse_la(case.rhs, cat)
    s = Session(cat, lhs)
    rep = s.saturate(cfg, goal=(lambda: s.contains(rhs)) if stop_early else None)
    return DeriveResult(case, s.contains(rhs), rep)


def load_suite(path: str) -> list[DeriveCase]:
    import json

    with open(path) as fh:
        data = json.load(fh)
    return [DeriveCase(**c) for c in data["cases"]]


def default_suite_path() -> str:
    from importlib import resources

    return str(resources.files("laeqsat").joinpath("data/derive_suite.json"))


__all__ = [
    "Session",
    "OptimizeResult",
    "optimize",
    "verify",
    "VerifyError",
    "NoLAPlan",
    "DeriveCase",
    "derive_case",
    "load_suite",
]
