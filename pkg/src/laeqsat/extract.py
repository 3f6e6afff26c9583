"""Cost model and plan extraction.

Node cost is the estimated nonzero count of the node's output (class
sparsity times class size).  Leaves and layout-only operators are free;
nodes of classes with more than two attributes cannot be expressed in LA
and cost infinity.

``extract_greedy`` picks the cheapest member per class bottom-up, paying
for a shared child once per use.  ``extract_ilp`` solves the 0-1 program of
choosing one node per needed class exactly, paying for every chosen node
once, by branch and bound seeded with the greedy plan.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ir
from .egraph import EGraph, ENode
from .ir import Expr

FREE_OPS = frozenset({"mat", "lit", "dim", "bind", "unbind", "rename", "transpose"})
INF = math.inf
LB_ROUNDS = 20


class NoLAPlan(Exception):
    """No member of the root class can be built from LA-expressible nodes."""


class CostModel:
    """Fig-10 style output-nnz cost.  ``table`` overrides costs per
    ``(class id, node)`` and is meant for hand-built graphs."""

    def __init__(self, table: Optional[dict] = None):
        self.table = table

    def cost(self, g: EGraph, cid: int, n: ENode) -> float:
        if self.table is not None:
            return self.table[(g.find(cid), g.canonicalize(n))]
        return node_cost(n, g.meta(cid))


def node_cost(n: ENode, meta) -> float:
    if not meta.la_expressible:
        return INF
    if n.op in FREE_OPS:
        return 0.0
    return meta.sparsity * meta.size


@dataclass
class ExtractedPlan:
    root: int
    choice: dict  # class id -> ENode
    total_cost: float
    method: str
    fallback: bool = False
    explored: int = 0
    wall_ms: float = 0.0
    notes: list = field(default_factory=list)

    def classes(self, g: EGraph) -> list[int]:
        """Chosen classes reachable from the root, children before parents."""
        order, seen = [], set()

        def visit(c: int):
            c = g.find(c)
            if c in seen:
                return
            seen.add(c)
            for k in self.choice[c].children:
                visit(k)
            order.append(c)

        visit(self.root)
        return order

    def to_expr(self, g: EGraph) -> Expr:
        """The chosen DAG as an expression (shared classes share objects)."""
        memo: dict[int, Expr] = {}
        for c in self.classes(g):
            n = self.choice[c]
            memo[c] = Expr(n.op, tuple(memo[g.find(k)] for k in n.children), n.data)
        return memo[g.find(self.root)]

    def dag(self, g: EGraph) -> list[dict]:
        ids = {c: k for k, c in enumerate(self.classes(g))}
        out = []
        for c, k in ids.items():
            n = self.choice[c]
            out.append({"id": k, "op": n.op, "data": _data_text(n), "children": [ids[g.find(x)] for x in n.children]})
        return out


def _data_text(n: ENode):
    d = n.data
    if d is None:
        return None
    if n.op in ("bind", "unbind"):
        return ["_" if a is None else a.name for a in d]
    if n.op == "ragg":
        return sorted(a.name for a in d)
    if n.op == "dim":
        return d.name
    if n.op == "rename":
        return [[a.name, b.name] for a, b in d]
    return d


def plan_cost(g: EGraph, choice: dict, root: int, cm: CostModel) -> float:
    """Sum of distinct chosen node costs reachable from ``root``."""
    total, seen, stack = 0.0, set(), [g.find(root)]
    while stack:
        c = stack.pop()
        if c in seen:
            continue
        seen.add(c)
        n = choice[c]
        total += cm.cost(g, c, n)
        stack.extend(g.find(k) for k in n.children)
    return total


def is_acyclic(g: EGraph, choice: dict, root: int) -> bool:
    state: dict[int, int] = {}

    def visit(c: int) -> bool:
        c = g.find(c)
        s = state.get(c)
        if s == 1:
            return False
        if s == 2:
            return True
        state[c] = 1
        for k in choice[c].children:
            if not visit(k):
                return False
        state[c] = 2
        return True

    return visit(root)


# -- greedy -------------------------------------------------------------------


def _tie_key(n: ENode):
    return (len(n.children), n.op)


def greedy_choice(g: EGraph, cm: CostModel) -> tuple[dict, dict]:
    """Cheapest tree cost per class, children counted per occurrence.

    Classes are settled in increasing cost order (a Knuth/Dijkstra sweep),
    so every chosen node's children were settled earlier and the choice is
    acyclic.
    """
    waiting: dict[tuple, int] = {}
    users: dict[int, list] = {}
    heap = []
    seq = 0
    for cid in g.class_ids():
        for n in g.classes[cid].nodes:
            kids = {g.find(k) for k in n.children}
            key = (cid, n)
            waiting[key] = len(kids)
            for k in kids:
                users.setdefault(k, []).append(key)
            if not kids:
                c = cm.cost(g, cid, n)
                if c < INF:
                    heapq.heappush(heap, (c, _tie_key(n), seq, cid, n))
                    seq += 1
    best: dict[int, float] = {}
    choice: dict[int, ENode] = {}
    while heap:
        c, _, _, cid, n = heapq.heappop(heap)
        if cid in best:
            continue
        best[cid], choice[cid] = c, n
        for key in users.get(cid, ()):
            waiting[key] -= 1
            if waiting[key] == 0:
                pid, pn = key
                if pid in best:
                    continue
                v = cm.cost(g, pid, pn)
                if v == INF:
                    continue
                v += sum(best[g.find(k)] for k in pn.children)
                heapq.heappush(heap, (v, _tie_key(pn), seq, pid, pn))
                seq += 1
    return best, choice


def extract_greedy(g: EGraph, root: int, cm: Optional[CostModel] = None, _tree=None) -> ExtractedPlan:
    t0 = time.perf_counter()
    cm = cm or CostModel()
    g.rebuild()
    root = g.find(root)
    best, choice = _tree or greedy_choice(g, cm)
    if root not in best:
        raise NoLAPlan("no LA-expressible plan for the root class")
    plan = ExtractedPlan(root, choice, 0.0, "greedy")
    plan.choice = {c: choice[c] for c in plan.classes(g)}
    plan.total_cost = plan_cost(g, plan.choice, root, cm)
    plan.wall_ms = (time.perf_counter() - t0) * 1000.0
    return plan


# -- exact extraction -----------------------------------------------------------


@dataclass
class ExtractionModel:
    """The 0-1 program: one variable per candidate node and per class, a
    level per class for acyclicity.

    minimize   sum_n B_n * C_n
    subject to B_n <= B_c            for every child class c of node n
               B_c <= sum_{n in c} B_n
               B_root = 1
               L_c >= L_c' + 1 - M (1 - B_n)   for node n in c with child c'
    """

    classes: list  # class ids
    nodes: list  # (class id, ENode, cost, child class ids)
    root: int

    @classmethod
    def build(cls, g: EGraph, root: int, cm: CostModel) -> "ExtractionModel":
        g.rebuild()
        root = g.find(root)
        reach, stack = [], [root]
        seen = {root}
        while stack:
            c = stack.pop()
            reach.append(c)
            if not g.meta(c).la_expressible and cm.table is None:
                continue
            for n in g.classes[c].nodes:
                for k in n.children:
                    k = g.find(k)
                    if k not in seen:
                        seen.add(k)
                        stack.append(k)
        reach.sort()
        nodes = []
        for c in reach:
            for n in g.classes[c].nodes:
                cost = cm.cost(g, c, n)
                if cost == INF:
                    continue
                kids = tuple(sorted({g.find(k) for k in n.children}))
                if any(k not in seen for k in kids):
                    continue
                nodes.append((c, n, cost, kids))
        return cls(reach, nodes, root)

    def objective(self, choice: dict) -> float:
        chosen = set(choice.items())
        return sum(cost for c, n, cost, _ in self.nodes if (c, n) in chosen)

    def check(self, choice: dict) -> list[str]:
        """Constraint violations of a selection (class -> node), or []."""
        errs = []
        if self.root not in choice:
            errs.append("root class not selected")
        index = {(c, n): kids for c, n, _, kids in self.nodes}
        for c, n in choice.items():
            if (c, n) not in index:
                errs.append(f"class {c}: node {n.op} is not a candidate")
                continue
            for k in index[(c, n)]:
                if k not in choice:
                    errs.append(f"class {c}: child class {k} not selected")
        if not errs:
            level = _levels(choice, index)
            if level is None:
                errs.append("selection is cyclic")
        return errs

    def to_milp(self):
        """Dense arrays ``(c, A, lb, ub, integrality)`` for a generic MILP
        solver; variables are node choices, class choices, then levels."""
        nn, nc = len(self.nodes), len(self.classes)
        pos = {c: k for k, c in enumerate(self.classes)}
        nv = nn + 2 * nc
        big = nc + 1
        cost = np.zeros(nv)
        rows, lo, hi = [], [], []

        def row():
            r = np.zeros(nv)
            rows.append(r)
            return r

        for k, (c, n, w, kids) in enumerate(self.nodes):
            cost[k] = w
            for child in kids:
                r = row()
                r[k], r[nn + pos[child]] = 1, -1
                lo.append(-np.inf), hi.append(0)
                r = row()
                # L_c - L_child - 1 + big * (1 - B_n) >= 0
                r[nn + nc + pos[c]], r[nn + nc + pos[child]], r[k] = 1, -1, -big
                lo.append(1 - big), hi.append(np.inf)
        for c in self.classes:
            r = row()
            r[nn + pos[c]] = 1
            for k, (c2, *_rest) in enumerate(self.nodes):
                if c2 == c:
                    r[k] = -1
            lo.append(-np.inf), hi.append(0)
        lb = np.zeros(nv)
        ub = np.ones(nv)
        ub[nn + nc:] = nc
        lb[nn + pos[self.root]] = 1
        integrality = np.ones(nv)
        A = np.array(rows) if rows else np.zeros((0, nv))
        return cost, A, np.array(lo), np.array(hi), lb, ub, integrality


def _levels(choice: dict, index: dict) -> Optional[dict]:
    level: dict[int, int] = {}
    state: dict[int, int] = {}

    def visit(c: int) -> bool:
        s = state.get(c)
        if s == 1:
            return False
        if s == 2:
            return True
        state[c] = 1
        lv = 0
        for k in index[(c, choice[c])]:
            if not visit(k):
                return False
            lv = max(lv, level[k] + 1)
        level[c] = lv
        state[c] = 2
        return True

    for c in choice:
        if not visit(c):
            return None
    return level


def _bottom_up(options: dict, fixed: dict, combine) -> dict:
    """Least fixpoint of ``v[c] = min_n (w_n + combine(v[k] for k in kids))``
    with fixed classes at 0; a Dijkstra sweep, so cycles are harmless."""
    val = {c: 0.0 for c in fixed}
    users: dict[int, list] = {}
    waiting = {}
    heap, seq = [], 0
    for c, opts in options.items():
        for k, (w, n, kids) in enumerate(opts):
            live = [x for x in kids if x not in fixed]
            waiting[(c, k)] = len(live)
            for x in live:
                users.setdefault(x, []).append((c, k))
            if not live:
                heapq.heappush(heap, (w, seq, c))
                seq += 1
    while heap:
        v, _, c = heapq.heappop(heap)
        if c in val:
            continue
        val[c] = v
        for pc, k in users.get(c, ()):
            waiting[(pc, k)] -= 1
            if waiting[(pc, k)] == 0 and pc not in val:
                w, n, kids = options[pc][k]
                heapq.heappush(heap, (w + combine([val[x] for x in kids]), seq, pc))
                seq += 1
    return val


def extract_ilp(
    g: EGraph,
    root: int,
    cm: Optional[CostModel] = None,
    budget: int = 50_000,
    time_budget_ms: float = 10_000.0,
) -> ExtractedPlan:
    """Exact extraction by depth-first branch and bound.

    Exact reductions first: classes whose cheapest tree costs nothing are
    fixed to that tree, dominated nodes (no cheaper and needing a superset
    of child classes) are dropped, and so are nodes that cannot beat the
    greedy incumbent.  The search then assigns one node per needed class;
    its bound is the larger of the summed cheapest node of each open class
    and the costliest cheapest chain below any open class.  Exceeding
    ``budget`` search states (or the time budget, a safety net) returns the
    greedy plan flagged as a fallback.
    """
    t0 = time.perf_counter()
    cm = cm or CostModel()
    g.rebuild()
    tree, tree_choice = greedy_choice(g, cm)
    greedy = extract_greedy(g, root, cm, _tree=(tree, tree_choice))
    root = g.find(root)
    model = ExtractionModel.build(g, root, cm)
    fixed = {c: tree_choice[c] for c in model.classes if tree.get(c) == 0.0}
    raw: dict[int, list] = {}
    for c, n, w, kids in model.nodes:
        if c not in fixed and all(k in tree for k in kids):
            raw.setdefault(c, []).append((w, n, tuple(k for k in kids if k not in fixed)))
    height = _bottom_up(raw, fixed, lambda xs: max(xs, default=0.0))
    best = [greedy.total_cost, dict(greedy.choice)]
    options: dict[int, list] = {}
    for c, opts in raw.items():
        opts = [o for o in opts if o[0] + max((height[k] for k in o[2]), default=0.0) < best[0] - 1e-9]
        opts.sort(key=lambda o: (o[0] + sum(tree[k] for k in o[2]), o[0], _tie_key(o[1])))
        kept: list = []
        for o in opts:
            ks = set(o[2])
            if any(m[0] <= o[0] and set(m[2]) <= ks for m in kept):
                continue
            kept.append(o)
        options[c] = kept
    # keep only classes still reachable from the root through kept options
    live, stack = {root}, [root]
    while stack:
        for o in options.get(stack.pop(), ()):
            for k in o[2]:
                if k not in live:
                    live.add(k)
                    stack.append(k)
    options = {c: o for c, o in options.items() if c in live}
    min_cost = {c: min((o[0] for o in opts), default=INF) for c, opts in options.items()}
    # bitsets of the cost-bearing classes each class may depend on
    bit = {c: 1 << k for k, c in enumerate(sorted(options))}
    below = {c: (bit[c] if min_cost[c] > 0 else 0) for c in options}
    changed = True
    while changed:
        changed = False
        for c, opts in options.items():
            v = below[c]
            for o in opts:
                for k in o[2]:
                    v |= below.get(k, 0)
            if v != below[c]:
                below[c] = v
                changed = True

    explored = 0
    deadline = t0 + time_budget_ms / 1000.0
    aborted = False
    chosen: dict[int, tuple] = {}  # class -> (node, open kids)

    def reaches(src: int, dst: int) -> bool:
        stack, seen = [src], set()
        while stack:
            c = stack.pop()
            if c == dst:
                return True
            if c in seen or c not in chosen:
                continue
            seen.add(c)
            stack.extend(chosen[c][1])
        return False

    def combine(classes, lb: dict, paid: int = 0) -> float:
        # bounds of classes with disjoint cost-bearing descendants add up
        # (and must not reach classes already paid for); any other open
        # class still needs its own node
        used, total, rest = paid, 0.0, []
        for c in sorted(classes, key=lambda x: -lb.get(x, INF)):
            if c not in options:
                return INF
            if below[c] & used == 0:
                total += lb[c]
                used |= below[c]
            else:
                rest.append(c)
        total += sum(min_cost[c] for c in rest if not bit[c] & used)
        return max(total, sum(min_cost[c] for c in classes))

    # every round maps valid lower bounds to valid (tighter) ones
    lb = {c: height.get(c, INF) for c in options}
    for _ in range(LB_ROUNDS):
        new = {c: min((o[0] + combine(o[2], lb) for o in opts), default=INF) for c, opts in options.items()}
        new = {c: max(v, lb[c]) for c, v in new.items()}
        if new == lb:
            break
        lb = new

    def bound(frontier, paid: int) -> float:
        return combine(frontier, lb, paid)

    def search(frontier: frozenset, cost: float, paid: int):
        nonlocal explored, aborted
        explored += 1
        if explored > budget or (explored % 1024 == 0 and time.perf_counter() > deadline):
            aborted = True
            return
        if not frontier:
            if cost < best[0] - 1e-9:
                best[0] = cost
                best[1] = {**fixed, **{c: nk[0] for c, nk in chosen.items()}}
            return
        c = min(frontier, key=lambda x: (len(options.get(x, ())), x))
        rest = frontier - {c}
        for w, n, kids in options.get(c, ()):
            if any(k == c or (k in chosen and reaches(k, c)) for k in kids):
                continue
            nf = rest | frozenset(k for k in kids if k not in chosen)
            now_paid = paid | bit[c]
            if cost + w + bound(nf, now_paid) >= best[0] - 1e-9:
                continue
            chosen[c] = (n, kids)
            search(nf, cost + w, now_paid)
            del chosen[c]
            if aborted:
                return

    if root in fixed:
        best = [0.0, dict(fixed)]
    elif root in options:
        search(frozenset([root]), 0.0, 0)
    plan = ExtractedPlan(root, best[1], best[0], "ilp", fallback=aborted, explored=explored)
    if aborted:
        plan.notes.append("branch-and-bound budget exhausted; best plan found so far kept")
    plan.choice = {c: plan.choice[c] for c in plan.classes(g)}
    plan.total_cost = plan_cost(g, plan.choice, root, cm)
    plan.wall_ms = (time.perf_counter() - t0) * 1000.0
    return plan


def extract(g: EGraph, root: int, method: str = "ilp", cm: Optional[CostModel] = None) -> ExtractedPlan:
    if method == "greedy":
        return extract_greedy(g, root, cm)
    if method == "ilp":
        return extract_ilp(g, root, cm)
    raise ValueError(f"unknown extraction method {method!r}")


# -- lowering back to LA --------------------------------------------------------------


class Lowering:
    """Turn a chosen plan into a pure LA expression."""

    def __init__(self, g: EGraph, choice: dict):
        self.g = g
        self.choice = choice
        self._mat: dict[int, Expr] = {}
        self._rel: dict[tuple, Expr] = {}

    def node(self, cid: int) -> ENode:
        return self.choice[self.g.find(cid)]

    def matrix(self, cid: int) -> Expr:
        cid = self.g.find(cid)
        if cid in self._mat:
            return self._mat[cid]
        n = self.node(cid)
        if n.op == "unbind":
            out = self.relation(n.children[0], tuple(n.data))
        elif n.op in ir.LA_OPS:
            out = Expr(n.op, tuple(self.matrix(k) for k in n.children), n.data)
        else:
            out = self.relation(cid, (None, None))
        self._mat[cid] = out
        return out

    def relation(self, cid: int, q: tuple) -> Expr:
        """LA expression ``M`` with ``bind[q](M)`` equal to the class."""
        cid = self.g.find(cid)
        key = (cid, q)
        if key in self._rel:
            return self._rel[key]
        n = self.node(cid)
        attrs = self.g.meta(cid).schema.attrs
        op = n.op
        if op == "bind":
            p = tuple(n.data)
            inner = self.matrix(n.children[0])
            if p == q:
                out = inner
            elif p == (q[1], q[0]):
                out = ir.transpose(inner)
            else:
                raise NoLAPlan(f"bind layout {p} cannot serve {q}")
        elif op in ("join", "union"):
            kids = [self.relation(k, _restrict(q, self.g.meta(k).schema.attrs)) for k in n.children]
            fold = ir.elemmult if op == "join" else ir.elemplus
            out = kids[0]
            for k in kids[1:]:
                out = fold(out, k)
        elif op == "ragg":
            out = self._aggregate(n, q)
        elif op == "rename":
            inv = {b: a for a, b in n.data}
            out = self.relation(n.children[0], tuple(inv.get(a, a) if a is not None else None for a in q))
        elif op == "dim":
            out = ir.lit(n.data.dim)
        elif attrs:
            raise NoLAPlan(f"operator {op} cannot produce a relation")
        else:
            out = self.matrix(cid)
        self._rel[key] = out
        return out

    def _aggregate(self, n: ENode, q: tuple) -> Expr:
        child = n.children[0]
        cattrs = self.g.meta(child).schema.attrs
        present = sorted(a for a in n.data if a in cattrs)
        factor = 1
        for a in n.data:
            if a not in cattrs:
                factor *= a.dim
        if not present:
            out = self.relation(child, q)
        elif q == (None, None):
            qc = tuple(present) + (None,) * (2 - len(present))
            out = ir.agg(self.relation(child, qc))
        elif q[0] is None:
            (u,) = present
            out = ir.colagg(self.relation(child, (u, q[1])))
        else:
            (u,) = present
            out = ir.rowagg(self.relation(child, (q[0], u)))
        if factor != 1:
            out = ir.elemmult(ir.lit(factor), out)
        return out


def _restrict(q: tuple, attrs) -> tuple:
    return tuple(a if a in attrs else None for a in q)


def lower_to_la(g: EGraph, plan: ExtractedPlan) -> Expr:
    return Lowering(g, plan.choice).matrix(plan.root)


def expr_cost(g: EGraph, e: Expr, cm: Optional[CostModel] = None) -> float:
    """Cost of an expression's own operators under the graph's metadata
    (each distinct subexpression counted once); ``e`` must be in ``g``."""
    cm = cm or CostModel()
    seen: dict = {}
    total = 0.0
    for sub in e.walk():
        if sub in seen:
            continue
        cid = g.lookup(sub)
        if cid is None:
            raise KeyError(f"expression not in the e-graph: {sub!r}")
        kids = tuple(g.lookup(k) for k in sub.children)
        seen[sub] = True
        total += cm.cost(g, cid, ENode(sub.op, sub.data, kids))
    return total
