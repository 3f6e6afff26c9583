"""Direct LA -> RA translation.

``to_ra(e, layout)`` produces the relation ``bind[layout](e)`` with binds
pushed down to the leaves, so no unbind/bind pairs or renames are ever
created for the standard operators.
"""

from __future__ import annotations

from typing import Optional

from . import ir
from .ir import AttrNamer, Catalog, Expr


def restrict(layout: tuple, shape: tuple) -> tuple:
    """Drop the slots of ``layout`` along which ``shape`` is broadcast."""
    return tuple(slot if size > 1 else None for slot, size in zip(layout, shape))


def bind_or_scalar(child: Expr, layout: tuple) -> Expr:
    if layout == (None, None):
        return child
    return ir.bind(child, *layout)


class Translator:
    def __init__(self, catalog: Catalog, namer: Optional[AttrNamer] = None):
        self.catalog = catalog
        self.namer = namer or AttrNamer()
        self._shapes: dict = {}

    def shape(self, e: Expr) -> tuple:
        return ir.schema_of(e, self.catalog, self._shapes).matrix_shape

    def to_ra(self, e: Expr, layout: tuple) -> Expr:
        op = e.op
        shape = self.shape(e)
        if op == "lit":
            return e
        if op in ("mat", "call"):
            return bind_or_scalar(e, layout)
        kids = e.children
        if op in ("elemmult", "elemplus"):
            a, b = (self.to_ra(k, restrict(layout, self.shape(k))) for k in kids)
            return ir.join(a, b) if op == "elemmult" else ir.union(a, b)
        if op == "elemminus":
            a, b = (self.to_ra(k, restrict(layout, self.shape(k))) for k in kids)
            return ir.union(a, ir.join(ir.lit(-1), b))
        if op == "transpose":
            return self.to_ra(kids[0], (layout[1], layout[0]))
        if op == "elempow":
            base = self.to_ra(kids[0], layout)
            return base if e.data == 1 else ir.join(*([base] * e.data))
        if op in ("rowagg", "colagg", "agg"):
            m, n = self.shape(kids[0])
            row = layout[0] if op == "rowagg" else self.namer.slot(m)
            col = layout[1] if op == "colagg" else self.namer.slot(n)
            if op == "rowagg":
                summed = [col]
            elif op == "colagg":
                summed = [row]
            else:
                summed = [row, col]
            inner = self.to_ra(kids[0], (row, col))
            summed = [a for a in summed if a is not None]
            return ir.ragg(summed, inner) if summed else inner
        if op == "mmult":
            k = self.shape(kids[0])[1]
            j = self.namer.slot(k)
            inner = ir.join(
                self.to_ra(kids[0], (layout[0], j)),
                self.to_ra(kids[1], (j, layout[1])),
            )
            return ir.ragg([j], inner) if j is not None else inner
        if op == "unbind":
            src = tuple(e.data)
            mapping = {a: b for a, b in zip(src, layout) if a is not None and a != b}
            return ir.rename(mapping, kids[0]) if mapping else kids[0]
        raise ir.IRError(f"cannot translate operator {op!r}")

    def output_layout(self, e: Expr, names=("o0", "o1")) -> tuple:
        shape = self.shape(e)
        return tuple(
            None if size == 1 else ir.Attribute(name, size) for name, size in zip(names, shape)
        )


def translate_la_to_ra(
    e: Expr,
    catalog: Catalog,
    namer: Optional[AttrNamer] = None,
    layout: Optional[tuple] = None,
) -> Expr:
    """RA form of an LA expression: an unbind over an RPlan with binds at the
    leaves (scalars need no unbind)."""
    tr = Translator(catalog, namer)
    if layout is None:
        layout = tuple(tr.namer.slot(size) for size in tr.shape(e))
    body = tr.to_ra(e, layout)
    if layout == (None, None):
        return body
    return ir.unbind(body, *layout)


def strip_unbind(e: Expr) -> Expr:
    return e.children[0] if e.op == "unbind" else e
