"""Rewrite rules over the e-graph.

Three families live here:

* translation rules between LA operators and RA plans, in both directions.
  Pushing a bind through an LA operator yields its RA definition; the
  reverse direction lifts an RA node whose children have matrix forms back
  to ``bind[o](LA op)``.  LA nodes carry no attribute names, so lifting is
  also what identifies alpha-equivalent RA plans.
* the seven RA identities (distribution, aggregate pushdown, aggregate
  merging, dimension introduction, AC of join/union), each both ways.
* a few LA-level identities and literal cleanups.

A rule's searcher returns ``Match`` objects whose right-hand side is built
lazily by ``apply``.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import ir
from .egraph import EGraph, ENode
from .ir import Attribute

NONE2 = (None, None)


# -- patterns ------------------------------------------------------------------


@dataclass(frozen=True)
class PVar:
    name: str


@dataclass(frozen=True)
class PNode:
    op: str
    children: tuple = ()
    data: object = None
    any_data: bool = False


def P(op: str, *children, data=None) -> PNode:
    return PNode(op, tuple(children), data)


def ematch(g: EGraph, pat, cid: int, subst: Optional[dict] = None) -> list[dict]:
    """All substitutions under which ``pat`` matches some member of ``cid``."""
    subst = {} if subst is None else subst
    cid = g.find(cid)
    if isinstance(pat, PVar):
        bound = subst.get(pat.name)
        if bound is None:
            return [{**subst, pat.name: cid}]
        return [subst] if g.find(bound) == cid else []
    out = []
    for n in g.classes[cid].nodes:
        if n.op != pat.op or len(n.children) != len(pat.children):
            continue
        if not pat.any_data and n.data != pat.data:
            continue
        partial = [subst]
        for sub, kid in zip(pat.children, n.children):
            partial = [s2 for s in partial for s2 in ematch(g, sub, kid, s)]
            if not partial:
                break
        out.extend(partial)
    return out


def instantiate(pat, subst: dict):
    if isinstance(pat, PVar):
        return subst[pat.name]
    return ENode(pat.op, pat.data, tuple(instantiate(c, subst) for c in pat.children))


# -- rules and matches ----------------------------------------------------------


@dataclass(frozen=True)
class Match:
    rule: str
    root: int
    subst: tuple  # ((variable, class id or payload), ...)
    attrs: tuple = ()
    build: Callable = field(default=None, compare=False, repr=False)


@dataclass
class Rule:
    name: str
    lhs: str
    rhs: str
    searcher: Callable  # (RuleContext, Rule) -> list[Match]
    bidirectional: bool = True
    family: str = "eq"

    def search(self, ctx: "RuleContext") -> list[Match]:
        return self.searcher(ctx, self)


def match(r: Rule, g: EGraph, ctx: Optional["RuleContext"] = None) -> list[Match]:
    ctx = ctx or RuleContext(g)
    ctx.refresh()
    return r.search(ctx)


def apply(m: Match, g: EGraph) -> int:
    """Add the match's right-hand side and merge it with the matched root."""
    rhs = m.build()
    if rhs is None:
        return g.find(m.root)
    return g.merge(m.root, g.add_term(rhs))


def pattern_rule(name: str, lhs, rhs, guard=None, family: str = "la") -> Rule:
    def search(ctx, rule):
        out = []
        for cid in ctx.g.class_ids():
            for s in ematch(ctx.g, lhs, cid):
                if guard is not None and not guard(ctx, s):
                    continue
                key = tuple(sorted(s.items()))
                out.append(Match(rule.name, cid, key, (), lambda s=s: instantiate(rhs, s)))
        return out

    return Rule(name, _pat_text(lhs), _pat_text(rhs), search, family=family)


def _pat_text(p) -> str:
    if isinstance(p, PVar):
        return "?" + p.name
    head = p.op if p.data is None else f"{p.op}[{p.data}]"
    if not p.children:
        return head
    return f"({head} {' '.join(_pat_text(c) for c in p.children)})"


# -- session state ----------------------------------------------------------------


class FreshNames:
    """Deterministic fresh attributes, memoized per rule site so that
    re-applying a rule reuses the names it chose before."""

    def __init__(self, reserved=(), prefix: str = "k"):
        self.reserved = set(reserved)
        self.prefix = prefix
        self._count = itertools.count()
        self.memo: dict = {}

    def new(self, dim: int) -> Attribute:
        while True:
            name = f"{self.prefix}{next(self._count)}"
            if name not in self.reserved:
                return Attribute(name, dim)

    def get(self, key, dim: int, avoid=()) -> Optional[Attribute]:
        """The name memoized for ``key``; ``avoid`` lists names in scope that
        it must differ from (a clash moves to a secondary key)."""
        if dim == 1:
            return None
        taken = {x.name for x in avoid if x is not None}
        attempt = 0
        while True:
            k = key + (attempt,)
            a = self.memo.get(k)
            if a is None:
                a = self.memo[k] = self.new(dim)
            if a.name not in taken:
                return a
            attempt += 1

    def rekey(self, g: EGraph) -> None:
        out: dict = {}
        for key, a in self.memo.items():
            k2 = tuple(g.canonicalize(x) if isinstance(x, ENode) else x for x in key)
            out.setdefault(k2, a)
        self.memo = out


def expr_attrs(e: ir.Expr) -> set:
    """Every attribute mentioned anywhere in ``e``, bound or free."""
    out = set()
    for n in e.walk():
        if n.op in ("bind", "unbind"):
            out.update(a for a in n.data if a is not None)
        elif n.op == "ragg":
            out.update(n.data)
        elif n.op == "dim":
            out.add(n.data)
        elif n.op == "rename":
            for a, b in n.data:
                out.update((a, b))
    return out


def graph_attr_names(g: EGraph) -> set:
    names = set()
    for cls in g.classes.values():
        names.update(a.name for a in cls.meta.schema.attrs)
        for n in cls.nodes:
            if n.op in ("bind", "unbind"):
                names.update(a.name for a in n.data if a is not None)
            elif n.op == "ragg":
                names.update(a.name for a in n.data)
            elif n.op == "dim":
                names.add(n.data.name)
            elif n.op == "rename":
                names.update(x.name for pair in n.data for x in pair)
    return names


class RuleContext:
    """Per-session rule state plus per-iteration indexes over the graph."""

    def __init__(self, g: EGraph, names: Optional[FreshNames] = None):
        self.g = g
        self.names = names or FreshNames(graph_attr_names(g))
        self.refresh()

    def refresh(self) -> None:
        self.by_op = self.g.nodes_by_op()
        self._forms: dict = {}
        self._members: dict = {}
        self._contexts = None
        self._smallest = None

    def nodes(self, *ops):
        for op in ops:
            yield from self.by_op.get(op, ())

    def attrs(self, cid: int) -> frozenset:
        return self.g.meta(cid).schema.attrs

    def shape(self, cid: int) -> tuple:
        return self.g.meta(cid).schema.matrix_shape

    def is_scalar(self, cid: int) -> bool:
        return self.g.meta(cid).schema.is_scalar

    def forms(self, cid: int) -> list:
        """Matrix views ``(layout, la_class)`` of a relation class."""
        cid = self.g.find(cid)
        hit = self._forms.get(cid)
        if hit is None:
            hit = []
            if self.is_scalar(cid):
                hit.append((NONE2, cid))
            for n in self.g.classes[cid].nodes:
                if n.op == "bind":
                    hit.append((n.data, self.g.find(n.children[0])))
            self._forms[cid] = hit
        return hit

    def members(self, cid: int) -> dict:
        """``op -> [node]`` for one class."""
        cid = self.g.find(cid)
        hit = self._members.get(cid)
        if hit is None:
            hit = {}
            for n in self.g.classes[cid].nodes:
                hit.setdefault(n.op, []).append(n)
            self._members[cid] = hit
        return hit

    def contexts(self) -> list:
        """``(target class, layout, la class)`` for every bind node, plus
        every scalar class viewed as its own context."""
        if self._contexts is None:
            out = [(cid, n.data, self.g.find(n.children[0])) for cid, n in self.nodes("bind")]
            out.extend((cid, NONE2, cid) for cid in self.g.class_ids() if self.is_scalar(cid))
            self._contexts = out
        return self._contexts

    def constant(self, cid: int):
        return self.g.meta(cid).constant

    def smallest(self, cid: int) -> ir.Expr:
        if self._smallest is None:
            self._smallest = self.g.smallest_terms()
        return self._smallest[self.g.find(cid)]


def bnd(cid, layout: tuple):
    """``bind[layout](cid)``, or the class itself for a scalar layout."""
    if layout == NONE2:
        return cid
    return ENode("bind", tuple(layout), (cid,))


def restrict(layout: tuple, shape: tuple) -> tuple:
    return tuple(slot if size > 1 else None for slot, size in zip(layout, shape))


def combine(l1: tuple, l2: tuple) -> Optional[tuple]:
    """Output layout of a broadcast elementwise op over two bound operands."""
    rows = {a for a in (l1[0], l2[0]) if a is not None}
    cols = {a for a in (l1[1], l2[1]) if a is not None}
    if len(rows) > 1 or len(cols) > 1:
        return None
    row = next(iter(rows), None)
    col = next(iter(cols), None)
    if row is not None and row == col:
        return None
    return (row, col)


def layout_attrs(layout: tuple) -> frozenset:
    return frozenset(a for a in layout if a is not None)


def nary(op: str, kids: list):
    kids = list(kids)
    if len(kids) == 1:
        return kids[0]
    return ENode(op, None, tuple(kids))


def lit_node(v) -> ENode:
    if isinstance(v, Fraction):
        v = int(v) if v.denominator == 1 else float(v)
    return ENode("lit", ir.lit(v).data, ())


def fold_constant_kids(ctx: "RuleContext", op: str, kids) -> list:
    """Collapse the known-constant children of a join (product) or union
    (sum) into one literal, so that chains like (-1)*(-1)*X stay bounded."""
    consts, rest = [], []
    for k in kids:
        v = ctx.constant(k) if isinstance(k, int) else None
        (rest if v is None else consts).append(k if v is None else v)
    if len(consts) < 2:
        return list(kids)
    v = Fraction(1) if op == "join" else Fraction(0)
    for c in consts:
        v = v * c if op == "join" else v + c
    unit = 1 if op == "join" else 0
    if v == unit and rest:
        return rest
    return rest + [lit_node(v)]


# -- LA -> RA (bind pushing) ------------------------------------------------------


def _push(ops: tuple, build, guard=None):
    def search(ctx: RuleContext, rule: Rule):
        out = []
        for target, layout, x in ctx.contexts():
            members = ctx.members(x)
            for op in ops:
                for n in members.get(op, ()):
                    if guard is not None and not guard(n, layout):
                        continue
                    out.append(
                        Match(
                            rule.name,
                            target,
                            (("layout", layout), ("node", n)),
                            layout,
                            lambda n=n, layout=layout: build(ctx, n, layout),
                        )
                    )
        return out

    return search


def _push_elementwise(ctx, n, p):
    a, b = n.children
    kids = [bnd(a, restrict(p, ctx.shape(a))), bnd(b, restrict(p, ctx.shape(b)))]
    return ENode("join" if n.op == "elemmult" else "union", None, tuple(kids))


def _push_mmult(ctx, n, p):
    a, b = n.children
    j = ctx.names.get(("mmult", n), ctx.shape(a)[1], p)
    inner = ENode("join", None, (bnd(a, (p[0], j)), bnd(b, (j, p[1]))))
    return inner if j is None else ENode("ragg", frozenset([j]), (inner,))


def _push_agg(ctx, n, p):
    (a,) = n.children
    m, k = ctx.shape(a)
    if n.op == "rowagg":
        row, col = p[0], ctx.names.get(("rowagg", n), k, p)
        summed = [col]
    elif n.op == "colagg":
        row, col = ctx.names.get(("colagg", n), m, p), p[1]
        summed = [row]
    else:
        row = ctx.names.get(("agg-r", n), m)
        col = ctx.names.get(("agg-c", n), k)
        summed = [row, col]
    summed = frozenset(s for s in summed if s is not None)
    inner = bnd(a, (row, col))
    return ENode("ragg", summed, (inner,)) if summed else inner


def _push_transpose(ctx, n, p):
    return bnd(n.children[0], (p[1], p[0]))


def _push_pow(ctx, n, p):
    base = bnd(n.children[0], p)
    return base if n.data == 1 else ENode("join", None, (base,) * n.data)


def _push_unbind(ctx, n, p):
    return n.children[0] if tuple(n.data) == tuple(p) else None


# -- RA -> LA (lifting) -----------------------------------------------------------


def _lift_binary(la_op: str, ra_op: str):
    def search(ctx: RuleContext, rule: Rule):
        out = []
        for cid, n in ctx.nodes(ra_op):
            schema = ctx.attrs(cid)
            if len(schema) > 2:
                continue
            kids = n.children
            if len(set(kids)) == 1 and la_op == "elemmult":
                for l1, x1 in ctx.forms(kids[0]):
                    term = bnd(ENode("elempow", len(kids), (x1,)), l1)
                    out.append(Match(rule.name, cid, (("pow", x1), ("layout", l1)), l1, lambda t=term: t))
            if len(kids) != 2:
                continue
            for l1, x1 in ctx.forms(kids[0]):
                for l2, x2 in ctx.forms(kids[1]):
                    o = combine(l1, l2)
                    if o is None or layout_attrs(o) != schema:
                        continue
                    term = bnd(ENode(la_op, None, (x1, x2)), o)
                    out.append(Match(rule.name, cid, (("a", x1), ("b", x2)), o, lambda t=term: t))
        return out

    return search


def _lift_agg(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("ragg"):
        if len(ctx.attrs(cid)) > 2:
            continue
        u = n.data
        (child,) = n.children
        for lay, x in ctx.forms(child):
            present = layout_attrs(lay)
            if not u or not u <= present:
                continue
            if u == present:
                term = ENode("agg", None, (x,))
            elif u == {lay[0]}:
                term = bnd(ENode("colagg", None, (x,)), (None, lay[1]))
            else:
                term = bnd(ENode("rowagg", None, (x,)), (lay[0], None))
            out.append(Match(rule.name, cid, (("x", x),), lay, lambda t=term: t))
    return out


def _lift_mmult(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("ragg"):
        if len(n.data) != 1 or len(ctx.attrs(cid)) > 2:
            continue
        (j,) = n.data
        for jn in ctx.g.classes[ctx.g.find(n.children[0])].nodes:
            if jn.op != "join" or len(jn.children) != 2:
                continue
            c1, c2 = jn.children
            for a, b in ((c1, c2), (c2, c1)):
                for l1, x1 in ctx.forms(a):
                    if l1[1] != j or l1[0] == j:
                        continue
                    for l2, x2 in ctx.forms(b):
                        if l2[0] != j or l2[1] == j:
                            continue
                        o = (l1[0], l2[1])
                        if o[0] is not None and o[0] == o[1]:
                            continue
                        term = bnd(ENode("mmult", None, (x1, x2)), o)
                        out.append(Match(rule.name, cid, (("a", x1), ("b", x2)), o, lambda t=term: t))
    return out


def _transpose_intro(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("bind"):
        a, b = n.data
        flipped = (b, a)
        if flipped == n.data:
            continue
        x = n.children[0]
        if any(m.op == "transpose" for m in ctx.g.classes[x].nodes):
            # t(t(y)) is already congruent to y through unbind-bind
            if any(m.op == "bind" and m.data == flipped for m in ctx.g.classes[cid].nodes):
                continue
        term = ENode("bind", flipped, (ENode("transpose", None, (x,)),))
        out.append(Match(rule.name, cid, (("x", n.children[0]),), flipped, lambda t=term: t))
    return out


def _unbind_intro(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("bind"):
        x = ctx.g.find(n.children[0])
        node = ENode("unbind", n.data, (cid,))
        if any(m.op == "unbind" and m.data == n.data and ctx.g.find(m.children[0]) == cid
               for m in ctx.g.classes[x].nodes):
            continue
        out.append(Match(rule.name, x, (("r", cid),), n.data, lambda t=node: t))
    return out


# -- RA identities ----------------------------------------------------------------


def _distribute(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("join"):
        kids = n.children
        for k, ck in enumerate(kids):
            if k and kids[k - 1] == ck:
                continue
            others = kids[:k] + kids[k + 1:]
            for un in ctx.g.classes[ck].nodes:
                if un.op != "union":
                    continue
                term = ENode("union", None, tuple(nary("join", list(others) + [u]) for u in un.children))
                out.append(Match(rule.name, cid, (("k", ck), ("u", un)), (), lambda t=term: t))
    return out


def _factor_views(ctx: RuleContext, cid: int):
    """``(factor, rest)`` pairs with ``cid = factor * rest``."""
    views = [(cid, lit_node(1))]
    for n in ctx.g.classes[cid].nodes:
        if n.op != "join":
            continue
        seen = set()
        for k, f in enumerate(n.children):
            if f in seen:
                continue
            seen.add(f)
            rest = n.children[:k] + n.children[k + 1:]
            views.append((f, nary("join", rest)))
    return views


def _factor(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("union"):
        kids = n.children
        for i, j in itertools.combinations(range(len(kids)), 2):
            others = [kids[m] for m in range(len(kids)) if m not in (i, j)]
            vj = _factor_views(ctx, kids[j])
            for f1, r1 in _factor_views(ctx, kids[i]):
                for f2, r2 in vj:
                    if f1 != f2:
                        continue
                    new = ENode("join", None, (f1, ENode("union", None, (r1, r2))))
                    term = nary("union", others + [new])
                    out.append(Match(rule.name, cid, (("f", f1), ("i", i), ("j", j)), (),
                                     lambda t=term: t))
    return out


def _agg_union(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("ragg"):
        for un in ctx.g.classes[ctx.g.find(n.children[0])].nodes:
            if un.op != "union":
                continue
            term = ENode("union", None, tuple(ENode("ragg", n.data, (u,)) for u in un.children))
            out.append(Match(rule.name, cid, (("u", un),), tuple(sorted(n.data)), lambda t=term: t))
    return out


def _union_agg(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("union"):
        kids = n.children
        for i, j in itertools.combinations(range(len(kids)), 2):
            others = [kids[m] for m in range(len(kids)) if m not in (i, j)]
            for a in ctx.g.classes[kids[i]].nodes:
                if a.op != "ragg":
                    continue
                for b in ctx.g.classes[kids[j]].nodes:
                    if b.op != "ragg" or b.data != a.data:
                        continue
                    new = ENode("ragg", a.data, (ENode("union", None, (a.children[0], b.children[0])),))
                    term = nary("union", others + [new])
                    out.append(Match(rule.name, cid, (("a", a), ("b", b)), (), lambda t=term: t))
    return out


def rename_free(e: ir.Expr, mapping: dict) -> ir.Expr:
    """Rename free attribute occurrences of an RA term (LA subterms have none)."""
    if not mapping:
        return e
    op = e.op
    if op == "bind":
        return ir.Expr(op, e.children, tuple(mapping.get(a, a) if a is not None else None for a in e.data))
    if op == "dim":
        return ir.Expr(op, (), mapping.get(e.data, e.data))
    if op == "ragg":
        inner = {k: v for k, v in mapping.items() if k not in e.data}
        return ir.Expr(op, (rename_free(e.children[0], inner),), e.data)
    if op in ("join", "union"):
        return ir.Expr(op, tuple(rename_free(c, mapping) for c in e.children), e.data)
    if op == "rename":
        inner = {k: v for k, v in mapping.items() if k not in {a for a, _ in e.data}}
        pairs = tuple(sorted((a, mapping.get(b, b)) for a, b in e.data))
        return ir.Expr(op, (rename_free(e.children[0], inner),), pairs)
    return e


def _expr_term(e: ir.Expr):
    return ENode(e.op, e.data, tuple(_expr_term(c) for c in e.children))


def _push_join_into_agg(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("join"):
        kids = n.children
        for k, ck in enumerate(kids):
            if k and kids[k - 1] == ck:
                continue
            others = kids[:k] + kids[k + 1:]
            free = frozenset().union(*(ctx.attrs(o) for o in others))
            for an in ctx.g.classes[ck].nodes:
                if an.op != "ragg":
                    continue
                clash = an.data & free
                body = an.children[0]

                def build(an=an, others=others, clash=clash, body=body, free=free):
                    if not clash:
                        return ENode("ragg", an.data, (ENode("join", None, tuple(others) + (body,)),))
                    rep = ctx.smallest(body)
                    avoid = set(free) | set(an.data) | expr_attrs(rep)
                    mapping = {}
                    for u in sorted(clash):
                        w = ctx.names.get(("rename", an, u), u.dim, avoid)
                        mapping[u] = w
                        avoid.add(w)
                    renamed = _expr_term(rename_free(rep, mapping))
                    new_u = frozenset(mapping.get(u, u) for u in an.data)
                    return ENode("ragg", new_u, (ENode("join", None, tuple(others) + (renamed,)),))

                out.append(Match(rule.name, cid, (("agg", an), ("k", k)), tuple(sorted(clash)), build))
    return out


def _pull_agg_from_join(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("ragg"):
        us = n.data
        for jn in ctx.g.classes[ctx.g.find(n.children[0])].nodes:
            if jn.op != "join":
                continue
            groups = [frozenset([u]) for u in sorted(us)]
            if len(us) > 1:
                groups.append(us)
            for v in groups:
                touching = [c for c in jn.children if ctx.attrs(c) & v]
                non = [c for c in jn.children if not ctx.attrs(c) & v]
                if not touching or not non:
                    continue
                inner = ENode("ragg", v, (nary("join", touching),))
                body = ENode("join", None, tuple(non) + (inner,))
                rest = us - v
                term = ENode("ragg", rest, (body,)) if rest else body
                out.append(Match(rule.name, cid, (("join", jn),), tuple(sorted(v)), lambda t=term: t))
    return out


def _merge_aggs(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("ragg"):
        for inner in ctx.g.classes[ctx.g.find(n.children[0])].nodes:
            if inner.op != "ragg" or inner.data & n.data:
                continue
            term = ENode("ragg", n.data | inner.data, inner.children)
            out.append(Match(rule.name, cid, (("inner", inner),), (), lambda t=term: t))
    return out


def _split_agg(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("ragg"):
        if len(n.data) < 2:
            continue
        for u in sorted(n.data):
            term = ENode("ragg", n.data - {u}, (ENode("ragg", frozenset([u]), n.children),))
            out.append(Match(rule.name, cid, (("u", u),), (u,), lambda t=term: t))
    return out


def _agg_absent(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("ragg"):
        (child,) = n.children
        absent = n.data - ctx.attrs(child)
        if not absent:
            continue
        rest = n.data - absent
        base = ENode("ragg", rest, (child,)) if rest else child
        dims = tuple(ENode("dim", a, ()) for a in sorted(absent))
        term = ENode("join", None, (base,) + dims)
        out.append(Match(rule.name, cid, (("absent", tuple(sorted(absent))),), (), lambda t=term: t))
    return out


def _dim_to_agg(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("join"):
        kids = n.children
        for k, ck in enumerate(kids):
            for dn in ctx.g.classes[ck].nodes:
                if dn.op != "dim":
                    continue
                others = kids[:k] + kids[k + 1:]
                u = dn.data
                if any(u in ctx.attrs(o) for o in others):
                    continue
                term = ENode("ragg", frozenset([u]), (nary("join", others),))
                out.append(Match(rule.name, cid, (("dim", u),), (u,), lambda t=term: t))
    return out


def _flatten(op: str):
    unit = 1 if op == "join" else 0

    def search(ctx: RuleContext, rule: Rule):
        out = []
        for cid, n in ctx.nodes(op):
            kids = n.children
            for k, ck in enumerate(kids):
                if k and kids[k - 1] == ck:
                    continue
                for inner in ctx.g.classes[ck].nodes:
                    if inner.op != op:
                        continue
                    # a class holding op(itself, unit) would inline forever
                    if ck in inner.children or cid in inner.children:
                        continue
                    if any(ctx.constant(c) == unit for c in inner.children):
                        continue
                    merged = fold_constant_kids(ctx, op, kids[:k] + kids[k + 1:] + inner.children)
                    term = nary(op, merged)
                    out.append(Match(rule.name, cid, (("k", k), ("inner", inner)), (), lambda t=term: t))
        return out

    return search


def _group(op: str):
    def search(ctx: RuleContext, rule: Rule):
        out = []
        for cid, n in ctx.nodes(op):
            kids = n.children
            if len(kids) < 3:
                continue
            seen = set()
            for i, j in itertools.combinations(range(len(kids)), 2):
                pair = (kids[i], kids[j])
                if pair in seen:
                    continue
                seen.add(pair)
                others = [kids[m] for m in range(len(kids)) if m not in (i, j)]
                term = ENode(op, None, tuple(others) + (ENode(op, None, pair),))
                out.append(Match(rule.name, cid, (("pair", pair),), (), lambda t=term: t))
        return out

    return search


def _drop_unit(op: str, unit: int):
    def search(ctx: RuleContext, rule: Rule):
        out = []
        for cid, n in ctx.nodes(op):
            kids = n.children
            for k, ck in enumerate(kids):
                if ctx.constant(ck) != unit:
                    continue
                others = kids[:k] + kids[k + 1:]
                if frozenset().union(*(ctx.attrs(o) for o in others)) != ctx.attrs(cid):
                    continue
                out.append(Match(rule.name, cid, (("k", k),), (), lambda t=nary(op, others): t))
                break
        return out

    return search


# -- LA identities ----------------------------------------------------------------


def _minus_from_plus(ctx: RuleContext, rule: Rule):
    out = []
    for cid, n in ctx.nodes("elemplus"):
        a, c = n.children
        for m in ctx.g.classes[c].nodes:
            if m.op != "elemmult":
                continue
            x, y = m.children
            if ctx.constant(x) == -1:
                term = ENode("elemminus", None, (a, y))
                out.append(Match(rule.name, cid, (("a", a), ("b", y)), (), lambda t=term: t))
    return out


# -- the rule set -------------------------------------------------------------------


def _la_rules() -> list[Rule]:
    a, b = PVar("a"), PVar("b")
    return [
        pattern_rule("la-mult-comm", P("elemmult", a, b), P("elemmult", b, a)),
        pattern_rule("la-plus-comm", P("elemplus", a, b), P("elemplus", b, a)),
        pattern_rule(
            "lr-minus", P("elemminus", a, b),
            P("elemplus", a, P("elemmult", P("lit", data=-1), b)), family="lr",
        ),
        Rule("lr-minus-rev", "(elemplus ?a (elemmult -1 ?b))", "(elemminus ?a ?b)", _minus_from_plus,
             family="lr"),
    ]


def la_associativity() -> Rule:
    """LA-level associativity of ``*``; the RA rules subsume it, so it is not
    part of the built-in set, but it reproduces the classic small example."""
    a, b, c = PVar("a"), PVar("b"), PVar("c")
    return pattern_rule(
        "la-mult-assoc",
        P("elemmult", P("elemmult", a, b), c),
        P("elemmult", a, P("elemmult", b, c)),
    )


def builtin_ruleset() -> list[Rule]:
    R = Rule
    return [
        # translation, LA -> RA
        R("lr-mult", "bind[p](?a * ?b)", "bind[p](?a) join bind[p](?b)",
          _push(("elemmult", "elemplus"), _push_elementwise), family="lr"),
        R("lr-mmult", "bind[i,k](?a %*% ?b)", "agg[j](bind[i,j](?a) join bind[j,k](?b))",
          _push(("mmult",), _push_mmult), family="lr"),
        R("lr-agg", "bind[p](rowSums|colSums|sum ?a)", "agg[..](bind[..](?a))",
          _push(("rowagg", "colagg", "agg"), _push_agg), family="lr"),
        R("lr-transpose", "bind[i,j](t(?a))", "bind[j,i](?a)",
          _push(("transpose",), _push_transpose), family="lr"),
        R("lr-pow", "bind[p](?a ^ k)", "bind[p](?a) join ... join bind[p](?a)",
          _push(("elempow",), _push_pow), family="lr"),
        R("bind-unbind", "bind[p](unbind[p](?r))", "?r",
          _push(("unbind",), _push_unbind, lambda n, p: tuple(n.data) == tuple(p)), family="lr"),
        # translation, RA -> LA
        R("lr-mult-rev", "bind[p](?a) join bind[q](?b)", "bind[o](?a * ?b)",
          _lift_binary("elemmult", "join"), family="lr"),
        R("lr-plus-rev", "bind[p](?a) union bind[q](?b)", "bind[o](?a + ?b)",
          _lift_binary("elemplus", "union"), family="lr"),
        R("lr-mmult-rev", "agg[j](bind[i,j](?a) join bind[j,k](?b))", "bind[i,k](?a %*% ?b)",
          _lift_mmult, family="lr"),
        R("lr-agg-rev", "agg[U](bind[p](?a))", "bind[..](rowSums|colSums|sum ?a)",
          _lift_agg, family="lr"),
        R("lr-transpose-rev", "bind[i,j](?a)", "bind[j,i](t(?a))", _transpose_intro, family="lr"),
        R("unbind-bind", "bind[p](?a) in ?r", "?a = unbind[p](?r)", _unbind_intro, family="lr"),
        # RA identities
        R("eq1-distribute", "?a join (?b union ?c)", "(?a join ?b) union (?a join ?c)", _distribute),
        R("eq1-factor", "(?a join ?b) union (?a join ?c)", "?a join (?b union ?c)", _factor),
        R("eq2-agg-union", "agg[U](?a union ?b)", "agg[U](?a) union agg[U](?b)", _agg_union),
        R("eq2-union-agg", "agg[U](?a) union agg[U](?b)", "agg[U](?a union ?b)", _union_agg),
        R("eq3-push", "?a join agg[i](?b)", "agg[i](?a join ?b)  (i renamed if in ?a)",
          _push_join_into_agg),
        R("eq3-pull", "agg[i](?a join ?b), i not in ?a", "?a join agg[i](?b)", _pull_agg_from_join),
        R("eq4-merge", "agg[i](agg[j](?a))", "agg[i,j](?a)", _merge_aggs),
        R("eq4-split", "agg[i,j](?a)", "agg[i](agg[j](?a))", _split_agg),
        R("eq5-dim", "agg[i](?a), i not in ?a", "?a join dim(i)", _agg_absent),
        R("eq5-dim-rev", "?a join dim(i), i not in ?a", "agg[i](?a)", _dim_to_agg),
        R("eq6-join-flatten", "?a join (?b join ?c)", "join(?a, ?b, ?c)", _flatten("join")),
        R("eq6-join-group", "join(?a, ?b, ?c)", "?a join (?b join ?c)", _group("join")),
        R("eq7-union-flatten", "?a union (?b union ?c)", "union(?a, ?b, ?c)", _flatten("union")),
        R("eq7-union-group", "union(?a, ?b, ?c)", "?a union (?b union ?c)", _group("union")),
        R("join-one", "?a join 1", "?a", _drop_unit("join", 1), bidirectional=False),
        R("union-zero", "?a union 0", "?a", _drop_unit("union", 0), bidirectional=False),
    ] + _la_rules()


def rule_table(rules: Optional[list] = None) -> list[tuple]:
    return [(r.name, r.family, r.lhs, r.rhs) for r in (rules or builtin_ruleset())]
