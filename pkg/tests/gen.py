"""Random expression generators and a term-level rewriter for the tests.

The rewriter applies the relational identities directly to expression trees,
independently of the e-graph rule implementations.
"""

from __future__ import annotations

import itertools
import random

from laeqsat import ir
from laeqsat.ir import Attribute, Catalog, Expr
from laeqsat.translate import Translator

MAX_DIM = 6


class LAGen:
    """Random dimension-correct LA expressions over a growing catalog."""

    def __init__(self, rng: random.Random, max_dim: int = MAX_DIM, sparse_p: float = 0.4):
        self.rng = rng
        self.max_dim = max_dim
        self.sparse_p = sparse_p
        self.catalog = Catalog()
        self._names = (f"M{k}" for k in itertools.count())

    def dim(self) -> int:
        return self.rng.choice([1, 2, 3, self.rng.randint(1, self.max_dim)])

    def leaf(self, shape) -> Expr:
        r, c = shape
        if r == c == 1 and self.rng.random() < 0.3:
            return ir.lit(self.rng.choice([-1, 2, 3, 0.5]))
        same = [m for m in self.catalog.entries.values() if m.shape == shape]
        if same and self.rng.random() < 0.5:
            return ir.mat(self.rng.choice(same).name)
        size = r * c
        nnz = size if self.rng.random() > self.sparse_p else self.rng.randint(0, size)
        name = next(self._names)
        self.catalog.add(name, r, c, nnz)
        return ir.mat(name)

    def expr(self, depth: int, shape=None) -> Expr:
        rng = self.rng
        shape = shape or (self.dim(), self.dim())
        r, c = shape
        if depth <= 0 or rng.random() < 0.2:
            return self.leaf(shape)
        ops = ["elemplus", "elemminus", "elemmult", "mmult", "transpose", "elempow", "scale"]
        if c == 1:
            ops.append("rowagg")
        if r == 1:
            ops.append("colagg")
        if r == c == 1:
            ops += ["agg", "agg"]
        op = rng.choice(ops)
        d = depth - 1
        if op in ("elemplus", "elemminus", "elemmult"):
            return Expr(op, (self.expr(d, shape), self.expr(d, shape)))
        if op == "scale":
            s = self.expr(d, (1, 1))
            kids = (s, self.expr(d, shape)) if rng.random() < 0.5 else (self.expr(d, shape), s)
            return Expr(rng.choice(["elemmult", "elemplus"]), kids)
        if op == "mmult":
            k = self.dim()
            return ir.mmult(self.expr(d, (r, k)), self.expr(d, (k, c)))
        if op == "transpose":
            return ir.transpose(self.expr(d, (c, r)))
        if op == "elempow":
            return ir.elempow(self.expr(d, shape), rng.choice([2, 2, 3]))
        if op == "rowagg":
            return ir.rowagg(self.expr(d, (r, self.dim())))
        if op == "colagg":
            return ir.colagg(self.expr(d, (self.dim(), c)))
        return ir.agg(self.expr(d, (self.dim(), self.dim())))


def random_ra(rng: random.Random, depth: int = 4):
    """(RA body, catalog): a random LA expression translated to RA."""
    gen = LAGen(rng)
    e = gen.expr(depth)
    tr = Translator(gen.catalog)
    layout = tr.output_layout(e)
    return tr.to_ra(e, layout), gen.catalog


# -- term-level relational rewriting -------------------------------------------


def free(e: Expr, cat: Catalog) -> frozenset:
    return ir.schema_of(e, cat).attrs


def subst(e: Expr, old: Attribute, new: Attribute) -> Expr:
    def go(n: Expr) -> Expr:
        data = n.data
        if n.op in ("bind", "unbind"):
            data = tuple(new if a == old else a for a in data)
        elif n.op == "ragg":
            data = frozenset(new if a == old else a for a in data)
        elif n.op == "dim" and data == old:
            data = new
        return Expr(n.op, tuple(go(k) for k in n.children), data)

    return go(e)


class Rewriter:
    """Apply random relational identities at random positions of a term."""

    def __init__(self, cat: Catalog, rng: random.Random):
        self.cat = cat
        self.rng = rng
        self._fresh = (f"r{k}" for k in itertools.count())

    def fresh(self, dim: int) -> Attribute:
        return Attribute(next(self._fresh), dim)

    # each returns a replacement or None
    def commute(self, e):
        if e.op in ("join", "union") and len(e.children) > 1:
            kids = list(e.children)
            self.rng.shuffle(kids)
            return Expr(e.op, tuple(kids))

    def flatten(self, e):
        if e.op in ("join", "union"):
            idx = [k for k, c in enumerate(e.children) if c.op == e.op]
            if idx:
                k = self.rng.choice(idx)
                kids = e.children[:k] + e.children[k].children + e.children[k + 1:]
                return Expr(e.op, kids)

    def group(self, e):
        if e.op in ("join", "union") and len(e.children) >= 3:
            i, j = sorted(self.rng.sample(range(len(e.children)), 2))
            rest = tuple(c for k, c in enumerate(e.children) if k not in (i, j))
            return Expr(e.op, rest + (Expr(e.op, (e.children[i], e.children[j])),))

    def distribute(self, e):
        if e.op == "join":
            idx = [k for k, c in enumerate(e.children) if c.op == "union"]
            if idx:
                k = self.rng.choice(idx)
                others = e.children[:k] + e.children[k + 1:]
                return ir.union(*(ir.join(*others, u) for u in e.children[k].children))

    def factor(self, e):
        if e.op == "union" and len(e.children) >= 2 and all(c.op == "join" for c in e.children):
            first = e.children[0].children
            for cand in first:
                if all(cand in c.children for c in e.children[1:]):
                    rests = []
                    for c in e.children:
                        kids = list(c.children)
                        kids.remove(cand)
                        rests.append(kids[0] if len(kids) == 1 else ir.join(*kids) if kids else ir.lit(1))
                    return ir.join(cand, ir.union(*rests))

    def agg_union(self, e):
        if e.op == "ragg" and e.children[0].op == "union":
            return ir.union(*(ir.ragg(e.data, u) for u in e.children[0].children))

    def union_agg(self, e):
        if e.op == "union" and all(c.op == "ragg" for c in e.children):
            s = e.children[0].data
            if all(c.data == s for c in e.children):
                return ir.ragg(s, ir.union(*(c.children[0] for c in e.children)))

    def push_join(self, e):
        if e.op != "join":
            return None
        idx = [k for k, c in enumerate(e.children) if c.op == "ragg"]
        if not idx:
            return None
        k = self.rng.choice(idx)
        agg = e.children[k]
        others = e.children[:k] + e.children[k + 1:]
        taken = set().union(*(free(o, self.cat) for o in others))
        body, attrs = agg.children[0], set(agg.data)
        for a in list(attrs):
            if a in taken:
                b = self.fresh(a.dim)
                body = subst(body, a, b)
                attrs = (attrs - {a}) | {b}
        return ir.ragg(attrs, ir.join(*others, body))

    def pull_join(self, e):
        if e.op == "ragg" and e.children[0].op == "join":
            kids = e.children[0].children
            out = [c for c in kids if not (free(c, self.cat) & e.data)]
            inn = [c for c in kids if free(c, self.cat) & e.data]
            if out and inn:
                inner = inn[0] if len(inn) == 1 else ir.join(*inn)
                return ir.join(*out, ir.ragg(e.data, inner))

    def merge(self, e):
        if e.op == "ragg" and e.children[0].op == "ragg" and not (e.data & e.children[0].data):
            return ir.ragg(e.data | e.children[0].data, e.children[0].children[0])

    def split(self, e):
        if e.op == "ragg" and len(e.data) >= 2:
            attrs = sorted(e.data)
            a = self.rng.choice(attrs)
            return ir.ragg([a], ir.ragg([x for x in attrs if x != a], e.children[0]))

    def absent(self, e):
        if e.op == "ragg":
            body = e.children[0]
            gone = [a for a in sorted(e.data) if a not in free(body, self.cat)]
            if gone:
                a = gone[0]
                rest = e.data - {a}
                inner = ir.ragg(rest, body) if rest else body
                return ir.join(ir.dim(a), inner)

    RULES = ("commute", "flatten", "group", "distribute", "factor", "agg_union", "union_agg",
             "push_join", "pull_join", "merge", "split", "absent")

    def step(self, e: Expr):
        """One random applicable rewrite somewhere in ``e``, or None."""
        sites = []

        def collect(n, path):
            sites.append(path)
            for k, c in enumerate(n.children):
                collect(c, path + (k,))

        collect(e, ())
        self.rng.shuffle(sites)
        rules = list(self.RULES)
        for path in sites:
            node = _at(e, path)
            self.rng.shuffle(rules)
            for name in rules:
                out = getattr(self, name)(node)
                if out is not None and out != node:
                    return _replace(e, path, out), name
        return None

    def rewrite(self, e: Expr, steps: int):
        applied = []
        for _ in range(steps):
            r = self.step(e)
            if r is None:
                break
            e, name = r
            applied.append(name)
        return e, applied


def _at(e: Expr, path):
    for k in path:
        e = e.children[k]
    return e


def _replace(e: Expr, path, new: Expr) -> Expr:
    if not path:
        return new
    k = path[0]
    kids = list(e.children)
    kids[k] = _replace(kids[k], path[1:], new)
    return Expr(e.op, tuple(kids), e.data)
