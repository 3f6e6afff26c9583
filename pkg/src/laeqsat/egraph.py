"""Hash-consed e-graph with union-find, deferred congruence repair and a
per-class analysis (schema, sparsity estimate, exact constant)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional, Union

from . import ir
from .ir import Catalog, Expr, Schema


class EGraphError(Exception):
    pass


class SchemaMismatch(EGraphError):
    """Two classes with different schemas were asked to merge."""


class ConstantConflict(EGraphError):
    """Two classes known to hold different constants were asked to merge."""


class ENode(NamedTuple):
    op: str
    data: object
    children: tuple


# A term is a class id or an ENode whose children are terms; used to add
# rule right-hand sides in one call.
Term = Union[int, ENode]


@dataclass
class ClassMeta:
    schema: Schema
    sparsity: float
    constant: Optional[Fraction] = None

    @property
    def la_expressible(self) -> bool:
        return self.schema.la_expressible

    @property
    def size(self) -> int:
        return self.schema.size


@dataclass
class EClass:
    id: int
    nodes: list
    parents: list = field(default_factory=list)  # [(ENode, class id)]
    meta: ClassMeta = None


def _close(a: Fraction, b: Fraction) -> bool:
    return math.isclose(float(a), float(b), rel_tol=1e-12, abs_tol=1e-300)


def node_sparsity(op: str, data, kids: list, schema: Schema, catalog: Catalog) -> float:
    """Upper bound on the fraction of nonzeros of one operator's output, from
    its children's estimates."""
    if op == "mat":
        return catalog[data].sparsity
    if op == "lit":
        return 0.0 if data == 0 else 1.0
    if op in ("dim", "call"):
        return 1.0
    s = [k.sparsity for k in kids]
    if op in ("bind", "unbind", "rename", "transpose", "elempow"):
        return s[0]
    if op in ("join", "elemmult"):
        return min(s)
    if op in ("union", "elemplus", "elemminus"):
        return min(1.0, sum(s))
    if op == "ragg":
        child = kids[0].schema
        n = 1
        for a in data:
            if a in child.attrs:
                n *= a.dim
        return min(1.0, n * s[0])
    shapes = [k.schema.matrix_shape for k in kids]
    if op == "mmult":
        return min(1.0, shapes[0][1] * min(s))
    if op == "rowagg":
        return min(1.0, shapes[0][1] * s[0])
    if op == "colagg":
        return min(1.0, shapes[0][0] * s[0])
    if op == "agg":
        return min(1.0, shapes[0][0] * shapes[0][1] * s[0])
    raise EGraphError(f"no sparsity rule for {op!r}")


def node_constant(op: str, data, kids: list, schema: Schema) -> Optional[Fraction]:
    """Exact value of a scalar-valued node when its children's values are
    known; ``None`` otherwise."""
    if op == "lit":
        return Fraction(data)
    if op == "dim":
        return Fraction(data.dim)
    if not schema.is_scalar:
        return None
    cs = [k.constant for k in kids]
    if op in ("join", "elemmult", "mmult"):
        if any(c == 0 for c in cs if c is not None):
            return Fraction(0)
        if all(c is not None for c in cs):
            out = Fraction(1)
            for c in cs:
                out *= c
            return out
        return None
    if any(c is None for c in cs):
        return None
    if op in ("union", "elemplus"):
        return sum(cs, Fraction(0))
    if op == "elemminus":
        return cs[0] - cs[1]
    if op == "ragg":
        out = cs[0]
        for a in data:
            out *= a.dim
        return out
    if op == "elempow":
        return cs[0] ** data
    if op in ("bind", "unbind", "rename", "transpose", "rowagg", "colagg", "agg"):
        return cs[0]
    return None


def lit_for(c: Fraction) -> Optional[ENode]:
    """A literal node holding ``c`` exactly, if a float can."""
    v = float(c)
    if not math.isfinite(v) or Fraction(v) != c:
        return None
    return ENode("lit", ir.lit(v).data, ())


class EGraph:
    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._parent: list[int] = []
        self.classes: dict[int, EClass] = {}
        self.memo: dict[ENode, int] = {}
        self._pending: list[int] = []
        self.version = 0  # bumps on every new node and effective merge
        self.merges = 0

    # -- union-find -----------------------------------------------------------

    def find(self, c: int) -> int:
        parent = self._parent
        if not 0 <= c < len(parent):
            raise EGraphError(f"unknown e-class id {c}")
        root = c
        while parent[root] != root:
            root = parent[root]
        while parent[c] != root:
            parent[c], c = root, parent[c]
        return root

    def canonicalize(self, n: ENode) -> ENode:
        if not n.children:
            return n
        kids = tuple(self.find(c) for c in n.children)
        if n.op in ir.NARY_OPS:
            kids = tuple(sorted(kids))
        return ENode(n.op, n.data, kids)

    def __getitem__(self, c: int) -> EClass:
        return self.classes[self.find(c)]

    def meta(self, c: int) -> ClassMeta:
        return self.classes[self.find(c)].meta

    # -- insertion ------------------------------------------------------------

    def node_meta(self, n: ENode) -> ClassMeta:
        kids = [self.classes[self.find(c)].meta for c in n.children]
        schema = ir.node_schema(n.op, n.data, [k.schema for k in kids], self.catalog)
        sparsity = node_sparsity(n.op, n.data, kids, schema, self.catalog)
        const = node_constant(n.op, n.data, kids, schema)
        if const is None and schema.is_scalar and sparsity == 0.0:
            const = Fraction(0)
        if const == 0:
            sparsity = 0.0
        return ClassMeta(schema, sparsity, const)

    def add_node(self, n: ENode) -> int:
        n = self.canonicalize(n)
        hit = self.memo.get(n)
        if hit is not None:
            return self.find(hit)
        meta = self.node_meta(n)
        cid = len(self._parent)
        self._parent.append(cid)
        self.classes[cid] = EClass(cid, [n], [], meta)
        self.memo[n] = cid
        for c in set(n.children):
            self.classes[self.find(c)].parents.append((n, cid))
        self.version += 1
        if meta.constant is not None and n.op != "lit":
            self._fold(cid)
        return self.find(cid)

    def add(self, e: Expr) -> int:
        """Insert an expression tree bottom-up; returns its class."""
        memo: dict[int, int] = {}

        def go(x: Expr) -> int:
            key = id(x)
            if key not in memo:
                kids = tuple(go(c) for c in x.children)
                memo[key] = self.add_node(ENode(x.op, x.data, kids))
            return memo[key]

        return go(e)

    def add_term(self, t: Term) -> int:
        if isinstance(t, int):
            return self.find(t)
        return self.add_node(ENode(t.op, t.data, tuple(self.add_term(c) for c in t.children)))

    def lookup(self, e: Expr) -> Optional[int]:
        """Class of ``e`` if the graph already represents it, without adding."""
        kids = []
        for c in e.children:
            k = self.lookup(c)
            if k is None:
                return None
            kids.append(k)
        hit = self.memo.get(self.canonicalize(ENode(e.op, e.data, tuple(kids))))
        return None if hit is None else self.find(hit)

    def lookup_term(self, t: Term) -> Optional[int]:
        if isinstance(t, int):
            return self.find(t)
        kids = []
        for c in t.children:
            k = self.lookup_term(c)
            if k is None:
                return None
            kids.append(k)
        hit = self.memo.get(self.canonicalize(ENode(t.op, t.data, tuple(kids))))
        return None if hit is None else self.find(hit)

    def _fold(self, cid: int) -> None:
        node = lit_for(self.classes[self.find(cid)].meta.constant)
        if node is not None:
            self.merge(cid, self.add_node(node))

    # -- merging --------------------------------------------------------------

    def merge(self, a: int, b: int) -> int:
        a, b = self.find(a), self.find(b)
        if a == b:
            return a
        ca, cb = self.classes[a], self.classes[b]
        if ca.meta.schema != cb.meta.schema:
            raise SchemaMismatch(f"merge of {ca.meta.schema!r} with {cb.meta.schema!r}")
        ka, kb = ca.meta.constant, cb.meta.constant
        if ka is not None and kb is not None and ka != kb and not _close(ka, kb):
            raise ConstantConflict(f"merge of constants {ka} and {kb}")
        if len(ca.parents) < len(cb.parents):
            a, b, ca, cb = b, a, cb, ca
        self._parent[b] = a
        ca.nodes.extend(cb.nodes)
        ca.parents.extend(cb.parents)
        learned = ca.meta.constant is None and cb.meta.constant is not None
        ca.meta = ClassMeta(
            ca.meta.schema,
            min(ca.meta.sparsity, cb.meta.sparsity),
            ca.meta.constant if ca.meta.constant is not None else cb.meta.constant,
        )
        del self.classes[b]
        self._pending.append(a)
        self.version += 1
        self.merges += 1
        if learned or (cb.meta.constant is None and ca.meta.constant is not None):
            if not any(n.op == "lit" for n in ca.nodes):
                self._fold(a)
        return self.find(a)

    def rebuild(self) -> None:
        """Restore hashcons canonicity, congruence and the analysis."""
        while self._pending:
            todo = sorted({self.find(c) for c in self._pending})
            self._pending = []
            for c in todo:
                self._repair(self.find(c))
        for cls in self.classes.values():
            seen = {}
            for n in cls.nodes:
                seen.setdefault(self.canonicalize(n), None)
            cls.nodes = list(seen)

    def _repair(self, cid: int) -> None:
        cls = self.classes[cid]
        for pnode, _ in cls.parents:
            self.memo.pop(pnode, None)
        fresh: dict[ENode, int] = {}
        for pnode, pid in cls.parents:
            pnode = self.canonicalize(pnode)
            if pnode in fresh:
                self.merge(pid, fresh[pnode])
            fresh[pnode] = self.find(pid)
            self.memo[pnode] = self.find(pid)
        cls = self.classes[self.find(cid)]
        cls.parents = list(fresh.items())
        for pnode, pid in cls.parents:
            self._update_meta(pid, pnode)

    def _update_meta(self, pid: int, pnode: ENode) -> None:
        pid = self.find(pid)
        cls = self.classes[pid]
        m = self.node_meta(self.canonicalize(pnode))
        old = cls.meta
        sparsity = min(old.sparsity, m.sparsity)
        const = old.constant
        learned = False
        if m.constant is not None:
            if const is None:
                const, learned = m.constant, True
            elif const != m.constant and not _close(const, m.constant):
                raise ConstantConflict(f"class {pid}: constants {const} and {m.constant}")
        if const == 0:
            sparsity = 0.0
        if sparsity < old.sparsity or learned:
            cls.meta = ClassMeta(old.schema, sparsity, const)
            self._pending.append(pid)
            if learned:
                self._fold(pid)

    # -- inspection -----------------------------------------------------------

    def class_ids(self) -> list[int]:
        return sorted(self.classes)

    def class_count(self) -> int:
        return len(self.classes)

    def node_count(self) -> int:
        return len(self.memo)

    def nodes_by_op(self) -> dict[str, list]:
        """``op -> [(class id, node)]`` in class order; valid after rebuild."""
        out: dict[str, list] = {}
        for cid in sorted(self.classes):
            for n in self.classes[cid].nodes:
                out.setdefault(n.op, []).append((cid, n))
        return out

    def min_sizes(self) -> tuple[dict, dict]:
        """Node count of the smallest term of each class and the member
        node achieving it (fixpoint; the chosen nodes form a DAG)."""
        size: dict[int, int] = {}
        best: dict[int, ENode] = {}
        changed = True
        while changed:
            changed = False
            for cid in sorted(self.classes):
                for n in self.classes[cid].nodes:
                    kids = [size.get(self.find(c)) for c in n.children]
                    if None in kids:
                        continue
                    v = 1 + sum(kids)
                    if v < size.get(cid, math.inf):
                        size[cid], best[cid] = v, n
                        changed = True
        return size, best

    def smallest_terms(self) -> dict[int, Expr]:
        """A fewest-node expression of every class."""
        _, best = self.min_sizes()
        out: dict[int, Expr] = {}

        def build(cid: int) -> Expr:
            cid = self.find(cid)
            if cid not in out:
                n = best[cid]
                out[cid] = Expr(n.op, tuple(build(c) for c in n.children), n.data)
            return out[cid]

        for cid in best:
            build(cid)
        return out

    def sample_term(self, cid: int, rng, budget: int = 40, sizes=None) -> Expr:
        """A random member of a class with at most ``max(budget, smallest)``
        nodes."""
        size = sizes if sizes is not None else self.min_sizes()[0]
        return self._sample(self.find(cid), rng, max(budget, size[self.find(cid)]), size)[0]

    def _sample(self, cid: int, rng, budget: int, size: dict):
        options = []
        for n in self.classes[cid].nodes:
            kids = [size.get(self.find(c)) for c in n.children]
            if None in kids or 1 + sum(kids) > budget:
                continue
            options.append(n)
        n = options[rng.randrange(len(options))]
        spare = budget - 1 - sum(size[self.find(c)] for c in n.children)
        kids, used = [], 1
        for c in n.children:
            c = self.find(c)
            e, k = self._sample(c, rng, size[c] + spare, size)
            spare -= k - size[c]
            kids.append(e)
            used += k
        return Expr(n.op, tuple(kids), n.data), used

    def to_json(self) -> str:
        def attr_text(a):
            return f"{a.name}:{a.dim}"

        def data_text(op, d):
            if d is None:
                return None
            if op in ("bind", "unbind"):
                return [None if a is None else attr_text(a) for a in d]
            if op == "ragg":
                return sorted(attr_text(a) for a in d)
            if op == "rename":
                return [[attr_text(a), attr_text(b)] for a, b in d]
            if op == "dim":
                return attr_text(d)
            return d

        classes = []
        for cid in self.class_ids():
            cls = self.classes[cid]
            classes.append(
                {
                    "id": cid,
                    "schema": repr(cls.meta.schema),
                    "sparsity": cls.meta.sparsity,
                    "constant": None if cls.meta.constant is None else str(cls.meta.constant),
                    "nodes": [
                        {"op": n.op, "data": data_text(n.op, n.data), "children": list(n.children)}
                        for n in cls.nodes
                    ],
                }
            )
        return json.dumps({"classes": classes, "node_count": self.node_count()}, indent=1)
