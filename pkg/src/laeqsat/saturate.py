"""Equality saturation driver."""

from __future__ import annotations

import random
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from .egraph import EGraph
from .rules import Rule, RuleContext, apply

STRATEGIES = ("sample", "depth-first")

# The time budget is charged in examined matches, which track wall time
# closely (about 20us each here) but keep runs reproducible.  A wall clock
# at HARD_STOP times the budget is kept as a safety net only.
MATCHES_PER_MS = 50
HARD_STOP = 4


@dataclass
class SaturationConfig:
    strategy: str = "sample"
    sample_limit: int = 100
    max_iters: int = 30
    node_budget: int = 50_000
    time_budget_ms: int = 2500
    rng_seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "sample" and self.sample_limit < 1:
            raise ValueError("sample strategy needs sample_limit >= 1")
        if self.max_iters < 0 or self.node_budget < 1 or self.time_budget_ms < 1:
            raise ValueError("limits must be positive")


@dataclass
class SaturationReport:
    iterations_run: int = 0
    converged: bool = False
    stop_reason: str = ""
    nodes_before: int = 0
    nodes_after: int = 0
    classes_before: int = 0
    classes_after: int = 0
    matches: dict = field(default_factory=dict)
    applied: dict = field(default_factory=dict)
    wall_ms: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _satisfied(g: EGraph, m) -> bool:
    rhs = m.build()
    return rhs is None or g.lookup_term(rhs) == g.find(m.root)


def saturate(
    g: EGraph,
    rules: list[Rule],
    cfg: Optional[SaturationConfig] = None,
    ctx: Optional[RuleContext] = None,
    goal: Optional[Callable[[], bool]] = None,
) -> SaturationReport:
    """Run rules to a fixpoint or until a limit trips.

    ``goal``, if given, is polled after every iteration; a true result stops
    the run early with ``stop_reason="goal"``.
    """
    cfg = cfg or SaturationConfig()
    rng = random.Random(cfg.rng_seed)
    t0 = time.perf_counter()
    deadline = t0 + HARD_STOP * cfg.time_budget_ms / 1000.0
    work_budget = cfg.time_budget_ms * MATCHES_PER_MS
    work = 0
    g.rebuild()
    ctx = ctx or RuleContext(g)
    rep = SaturationReport(nodes_before=g.node_count(), classes_before=g.class_count())
    matches: Counter = Counter()
    applied: Counter = Counter()
    full_pass = False

    def out_of_budget() -> Optional[str]:
        if g.node_count() > cfg.node_budget:
            return "node_budget"
        if work > work_budget or time.perf_counter() > deadline:
            return "timeout"
        return None

    while True:
        if goal is not None and goal():
            rep.stop_reason = "goal"
            break
        if rep.iterations_run >= cfg.max_iters:
            rep.stop_reason = "iter_limit"
            break
        ctx.refresh()
        before = g.version
        sampled = False
        batch = []
        stop = None
        for rule in rules:
            found = rule.search(ctx)
            matches[rule.name] += len(found)
            work += len(found)
            if cfg.strategy == "sample" and not full_pass and len(found) > cfg.sample_limit:
                # uniform draw among the matches that would still change the graph
                order = list(range(len(found)))
                rng.shuffle(order)
                keep = []
                for k in order:
                    if not _satisfied(g, found[k]):
                        keep.append(k)
                        if len(keep) == cfg.sample_limit:
                            break
                found = [found[k] for k in sorted(keep)]
                sampled = True
            batch.extend(found)
            stop = out_of_budget()
            if stop:
                break
        if not stop:
            for k, m in enumerate(batch):
                pre = g.version
                apply(m, g)
                if g.version != pre:
                    applied[m.rule] += 1
                if k % 64 == 63:
                    stop = out_of_budget()
                    if stop:
                        break
        g.rebuild()
        ctx.names.rekey(g)
        rep.iterations_run += 1
        stop = stop or out_of_budget()
        if stop:
            rep.stop_reason = stop
            break
        if g.version == before:
            if sampled:
                full_pass = True
                continue
            rep.converged = True
            rep.stop_reason = "converged"
            break
        full_pass = False

    rep.nodes_after = g.node_count()
    rep.classes_after = g.class_count()
    rep.matches = dict(sorted(matches.items()))
    rep.applied = dict(sorted(applied.items()))
    rep.wall_ms = (time.perf_counter() - t0) * 1000.0
    return rep
