"""Canonical forms of RA expressions and the isomorphism test on them.

A canonical form (``Polyterm``) is a sum of coefficient-weighted terms plus
a constant.  Each term aggregates a monomial, a bag of atoms, over its
bound indices.  Two expressions are equal for all inputs exactly when
their canonical forms pair up term-by-term under index isomorphism with
equal coefficients.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import ir
from .ir import Attribute, Catalog, Expr
from .translate import Translator, strip_unbind


class IndeterminateError(Exception):
    """Raised when the isomorphism search exceeds its step budget."""


@dataclass(frozen=True, order=True)
class Atom:
    """An indexed tensor.  ``index`` is the (row, col) layout; ``None`` marks
    a dimension of size one."""

    name: str
    index: tuple
    source: Expr = field(compare=False, hash=False, repr=False, default=None)

    def indices(self) -> tuple:
        return tuple(a for a in self.index if a is not None)

    def renamed(self, f: dict) -> "Atom":
        return Atom(self.name, tuple(f.get(a, a) if a is not None else None for a in self.index), self.source)

    def __str__(self):
        return f"{self.name}({','.join(a.name for a in self.indices())})"


def _sort_key(a: Atom):
    return (a.name, tuple((x.name, x.dim) if x is not None else ("", 0) for x in a.index))


@dataclass(frozen=True)
class Term:
    """``sum over bound`` of the product of ``bag`` (a sorted tuple of atoms)."""

    bound: frozenset
    bag: tuple

    @property
    def vars(self) -> frozenset:
        return frozenset(a for atom in self.bag for a in atom.indices())

    @property
    def free(self) -> frozenset:
        return self.vars - self.bound

    def renamed(self, f: dict) -> "Term":
        return Term(
            frozenset(f.get(a, a) for a in self.bound),
            tuple(sorted((atom.renamed(f) for atom in self.bag), key=_sort_key)),
        )

    def shape_key(self):
        """Isomorphism invariant used to bucket terms before searching."""
        free = self.free
        sig = sorted(
            (atom.name, tuple(("=", x.name) if x in free else ("*", x.dim) for x in atom.indices()))
            for atom in self.bag
        )
        return (len(self.bag), len(self.bound), tuple(sorted(free)), tuple(map(repr, sig)))

    def __str__(self):
        body = "*".join(_power_str(self.bag)) or "1"
        if not self.bound:
            return body
        return f"sum[{','.join(a.name for a in sorted(self.bound))}]({body})"


def _power_str(bag) -> list:
    out = []
    for atom, k in Counter(bag).items():
        out.append(str(atom) if k == 1 else f"{atom}^{k}")
    return out


@dataclass
class Polyterm:
    terms: list = field(default_factory=list)  # [(Fraction, Term)]
    constant: Fraction = Fraction(0)

    @property
    def free(self) -> frozenset:
        out = frozenset()
        for _, t in self.terms:
            out |= t.free
        return out

    def __str__(self):
        parts = [f"{_fmt(c)}*{t}" for c, t in self.terms]
        if self.constant or not parts:
            parts.append(_fmt(self.constant))
        return " + ".join(parts)


def _fmt(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    return f"({c.numerator}/{c.denominator})"


def _frac(v) -> Fraction:
    return Fraction(v)


# -- construction -------------------------------------------------------------


class Canonicalizer:
    def __init__(self, catalog: Catalog, budget: int = 200_000):
        self.catalog = catalog
        self.translator = Translator(catalog, ir.AttrNamer("c"))
        self._fresh = itertools.count()
        self.budget = budget

    def fresh_like(self, a: Attribute) -> Attribute:
        return Attribute(f"_k{next(self._fresh)}", a.dim)

    def standardize_apart(self, t: Term) -> Term:
        return t.renamed({a: self.fresh_like(a) for a in t.bound})

    def run(self, e: Expr) -> Polyterm:
        if e.op == "unbind":
            e = strip_unbind(e)
        elif e.op in ir.LA_OPS and e.op != "lit":
            e = self.translator.to_ra(e, self.translator.output_layout(e))
        return self.normalize(self.build(e))

    def build(self, e: Expr) -> Polyterm:
        op = e.op
        if op == "lit":
            return Polyterm([], _frac(e.data))
        if op == "dim":
            return Polyterm([], Fraction(e.data.dim))
        if op in ir.LA_OPS:
            shape = ir.la_shape(e, self.catalog)
            if op in ("mat", "call") and shape == (1, 1):
                return self.atom(e, (None, None))
            if op == "unbind":
                raise ir.IRError("unbind inside an RA expression; canonicalize needs binds at leaves")
            layout = tuple(self.translator.namer.slot(s) for s in shape)
            if layout != (None, None):
                raise ir.IRError("a non-scalar matrix cannot appear as a relation")
            return self.build(self.translator.to_ra(e, layout))
        if op == "bind":
            child = e.children[0]
            if child.op in ("mat", "call"):
                return self.atom(child, e.data)
            if child.op == "unbind":
                mapping = {a: b for a, b in zip(child.data, e.data) if a is not None and a != b}
                return self.rename(self.build(child.children[0]), mapping)
            return self.build(self.translator.to_ra(child, e.data))
        if op == "join":
            acc = self.build(e.children[0])
            for c in e.children[1:]:
                acc = self.product(acc, self.build(c))
            return acc
        if op == "union":
            out = Polyterm()
            for c in e.children:
                p = self.build(c)
                out.terms.extend(p.terms)
                out.constant += p.constant
            return out
        if op == "ragg":
            return self.aggregate(self.build(e.children[0]), e.data)
        if op == "rename":
            return self.rename(self.build(e.children[0]), dict(e.data))
        raise ir.IRError(f"cannot canonicalize operator {op!r}")

    def atom(self, src: Expr, index: tuple) -> Polyterm:
        name = src.data if src.op == "mat" else _call_name(src)
        return Polyterm([(Fraction(1), Term(frozenset(), (Atom(name, tuple(index), src),)))])

    def product(self, p: Polyterm, q: Polyterm) -> Polyterm:
        out = Polyterm(constant=p.constant * q.constant)
        for c, t in p.terms:
            for d, s in q.terms:
                t2, s2 = self.standardize_apart(t), self.standardize_apart(s)
                bag = tuple(sorted(t2.bag + s2.bag, key=_sort_key))
                out.terms.append((c * d, Term(t2.bound | s2.bound, bag)))
        if q.constant:
            out.terms.extend((c * q.constant, t) for c, t in p.terms)
        if p.constant:
            out.terms.extend((p.constant * d, s) for d, s in q.terms)
        return out

    def aggregate(self, p: Polyterm, attrs) -> Polyterm:
        const_factor = 1
        for a in attrs:
            const_factor *= a.dim
        out = Polyterm(constant=p.constant * const_factor)
        for c, t in p.terms:
            free = t.free
            t = self.standardize_apart(t)
            bound = set(t.bound)
            for a in attrs:
                if a in free:
                    bound.add(a)
                else:
                    c = c * a.dim
            out.terms.append((c, Term(frozenset(bound), t.bag)))
        return out

    def rename(self, p: Polyterm, mapping: dict) -> Polyterm:
        out = Polyterm(constant=p.constant)
        for c, t in p.terms:
            t = self.standardize_apart(t)
            out.terms.append((c, t.renamed(mapping)))
        return out

    def normalize(self, p: Polyterm) -> Polyterm:
        buckets: dict = {}
        merged: list = []  # [coef, term]
        for c, t in p.terms:
            t = canonical_labels(t)
            bucket = buckets.setdefault(t.shape_key(), [])
            for entry in bucket:
                if iso_terms(entry[1], t, self.budget):
                    entry[0] += c
                    break
            else:
                entry = [c, t]
                bucket.append(entry)
                merged.append(entry)
        terms = [(c, t) for c, t in merged if c != 0]
        terms.sort(key=lambda ct: (len(ct[1].bag), [a.name for a in ct[1].bag], str(ct[1]), ct[0]))
        return Polyterm(terms, p.constant)


def _call_name(src: Expr) -> str:
    from .syntax import to_la_text

    return to_la_text(src)


def canonical_labels(t: Term) -> Term:
    """Rename bound indices to ``b0, b1, ...`` by first appearance after a
    stable ordering of atoms; only cosmetic, equality uses isomorphism."""
    free = t.free
    sig = lambda atom: (atom.name, tuple(x.name if x in free else "*" for x in atom.indices()))
    order = sorted(t.bag, key=sig)
    f = {}
    for atom in order:
        for x in atom.indices():
            if x in t.bound and x not in f:
                f[x] = Attribute(f"b{len(f)}", x.dim)
    return t.renamed(f)


def canonicalize(e: Expr, catalog: Catalog) -> Polyterm:
    """Canonical form of an RA (or LA) expression."""
    return Canonicalizer(catalog).run(e)


# -- homomorphism and isomorphism --------------------------------------------


def find_homomorphism(t1: Term, t2: Term, budget: int = 200_000, injective: bool = False) -> Optional[dict]:
    """A map of t1's bound indices onto t2's bound indices carrying bag(t1)
    onto bag(t2) as multisets, free indices fixed; ``None`` if none exists."""
    if len(t1.bag) != len(t2.bag) or t1.free != t2.free:
        return None
    if Counter(a.name for a in t1.bag) != Counter(a.name for a in t2.bag):
        return None
    if injective and len(t1.bound) != len(t2.bound):
        return None
    targets = Counter(t2.bag)
    by_name: dict = {}
    for atom in targets:
        by_name.setdefault(atom.name, []).append(atom)
    # most constrained atoms first: rarest names, then most free indices
    name_count = Counter(a.name for a in t1.bag)
    atoms = sorted(
        t1.bag,
        key=lambda a: (name_count[a.name], -sum(x not in t1.bound for x in a.indices()), _sort_key(a)),
    )
    f: dict = {}
    used_targets: set = set()
    steps = 0

    def unify(src: Atom, dst: Atom, assigned: list) -> bool:
        if len(src.index) != len(dst.index):
            return False
        for x, y in zip(src.index, dst.index):
            if (x is None) != (y is None):
                return False
            if x is None:
                continue
            if x in t1.bound:
                if y not in t2.bound:
                    return False
                if x in f:
                    if f[x] != y:
                        return False
                else:
                    if injective and y in used_targets:
                        return False
                    f[x] = y
                    used_targets.add(y)
                    assigned.append(x)
            elif x != y:
                return False
        return True

    def search(k: int) -> bool:
        nonlocal steps
        steps += 1
        if steps > budget:
            raise IndeterminateError("homomorphism search budget exceeded")
        if k == len(atoms):
            return True
        src = atoms[k]
        for dst in by_name.get(src.name, ()):
            if targets[dst] == 0:
                continue
            assigned: list = []
            if unify(src, dst, assigned):
                targets[dst] -= 1
                if search(k + 1):
                    return True
                targets[dst] += 1
            for x in assigned:
                used_targets.discard(f.pop(x))
        return False

    if search(0):
        return dict(f)
    return None


def iso_terms(t1: Term, t2: Term, budget: int = 200_000) -> bool:
    """Homomorphisms exist in both directions."""
    if len(t1.bag) != len(t2.bag) or len(t1.bound) != len(t2.bound):
        return False
    return (
        find_homomorphism(t1, t2, budget) is not None
        and find_homomorphism(t2, t1, budget) is not None
    )


def find_isomorphism(t1: Term, t2: Term, budget: int = 200_000) -> Optional[dict]:
    return find_homomorphism(t1, t2, budget, injective=True)


def isomorphic(p: Polyterm, q: Polyterm, budget: int = 200_000) -> bool:
    """Bijection between terms with equal coefficients and isomorphic terms,
    and equal constants."""
    if p.constant != q.constant or len(p.terms) != len(q.terms):
        return False
    remaining = list(q.terms)
    for c, t in p.terms:
        for k, (d, s) in enumerate(remaining):
            if c == d and iso_terms(t, s, budget):
                del remaining[k]
                break
        else:
            return False
    return True


def equiv(e1: Expr, e2: Expr, catalog: Catalog) -> bool:
    """Semantic equality of two LA or RA expressions for all inputs of the
    catalog's shapes (away from the degenerate tiny-dimension regime)."""
    p1, p2 = comparable_forms(e1, e2, catalog)
    if p1 is None:
        return False
    return isomorphic(p1, p2)


def comparable_forms(e1: Expr, e2: Expr, catalog: Catalog):
    """Canonical forms of both sides with shared output attribute names, or
    ``(None, None)`` when their output types already differ."""
    s1, s2 = ir.schema_of(e1, catalog), ir.schema_of(e2, catalog)
    if s1.is_matrix != s2.is_matrix:
        return None, None
    c = Canonicalizer(catalog)
    if s1.is_matrix and not (s1.is_scalar and s2.is_scalar):
        if s1.matrix_shape != s2.matrix_shape:
            return None, None
        layout = c.translator.output_layout(e1)
        r1 = c.translator.to_ra(e1, layout)
        r2 = c.translator.to_ra(e2, layout)
        return c.run(r1), c.run(r2)
    if s1.attrs != s2.attrs:
        return None, None
    return c.run(e1), c.run(e2)


def as_ra(p: Polyterm) -> Expr:
    """Rebuild an RA expression from a canonical form."""
    parts = []
    for c, t in p.terms:
        factors = [
            ir.bind(a.source if a.source is not None else ir.mat(a.name), *a.index)
            if a.index != (None, None)
            else (a.source if a.source is not None else ir.mat(a.name))
            for a in t.bag
        ]
        body = factors[0] if len(factors) == 1 else ir.join(*factors)
        if t.bound:
            body = ir.ragg(t.bound, body)
        if c != 1:
            body = ir.join(ir.lit(_lit_value(c)), body)
        parts.append(body)
    if p.constant or not parts:
        parts.append(ir.lit(_lit_value(p.constant)))
    return parts[0] if len(parts) == 1 else ir.union(*parts)


def _lit_value(c: Fraction):
    if c.denominator == 1:
        return int(c)
    return float(c)
