"""Expression trees for linear algebra (LA) and relational algebra (RA).

Both languages share one node type, :class:`Expr`.  LA operators work on
matrices (scalars are 1x1 matrices); RA operators work on relations whose
attributes carry their own dimension sizes.  Scalars are zero-arity
relations, so one ``lit`` node serves both languages.

Attributes of size 1 are never materialised in a schema: binding a column
vector gives a relation over a single attribute, and the unused position
of a ``bind``/``unbind`` is ``None`` (printed ``_``).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

LA_OPS = frozenset(
    {
        "mat",
        "lit",
        "mmult",
        "elemmult",
        "elemplus",
        "elemminus",
        "rowagg",
        "colagg",
        "agg",
        "transpose",
        "elempow",
        "call",
        "unbind",
    }
)
RA_OPS = frozenset({"join", "union", "ragg", "bind", "rename", "dim", "lit"})
NARY_OPS = frozenset({"join", "union"})


class IRError(Exception):
    """Base class for malformed expressions."""


class UnknownMatrix(IRError):
    pass


class DimensionError(IRError):
    pass


class SchemaError(IRError):
    pass


@dataclass(frozen=True, order=True)
class Attribute:
    name: str
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise SchemaError(f"attribute {self.name} has non-positive size {self.dim}")

    def __repr__(self):
        return f"{self.name}:{self.dim}"


@dataclass(frozen=True)
class MatrixInfo:
    name: str
    rows: int
    cols: int
    nnz: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionError(f"{self.name}: dimensions must be positive")
        if not 0 <= self.nnz <= self.rows * self.cols:
            raise DimensionError(f"{self.name}: nnz {self.nnz} outside [0, rows*cols]")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def sparsity(self) -> float:
        return self.nnz / (self.rows * self.cols)


@dataclass
class Catalog:
    """Matrix dimensions and nonzero counts, plus declared opaque functions."""

    entries: dict[str, MatrixInfo] = field(default_factory=dict)
    functions: dict[str, int] = field(default_factory=dict)

    def add(self, name: str, rows: int, cols: int, nnz: Optional[int] = None) -> MatrixInfo:
        if name in self.entries:
            raise IRError(f"duplicate catalog entry {name}")
        info = MatrixInfo(name, rows, cols, rows * cols if nnz is None else nnz)
        self.entries[name] = info
        return info

    def __getitem__(self, name: str) -> MatrixInfo:
        try:
            return self.entries[name]
        except KeyError:
            raise UnknownMatrix(f"unknown matrix {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    @classmethod
    def from_dict(cls, shapes: dict) -> "Catalog":
        """Build from ``{"X": (rows, cols)}`` or ``{"X": (rows, cols, nnz)}``."""
        cat = cls()
        for name, spec in shapes.items():
            cat.add(name, *spec)
        return cat

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Catalog":
        cat = cls()
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            obj = json.loads(line)
            if obj.get("function"):
                cat.functions[obj["name"]] = int(obj.get("arity", 1))
                continue
            try:
                cat.add(obj["name"], int(obj["rows"]), int(obj["cols"]), obj.get("nnz"))
            except KeyError as exc:
                raise IRError(f"catalog line {lineno}: missing field {exc}") from None
        return cat

    @classmethod
    def load(cls, path: str) -> "Catalog":
        with open(path) as fh:
            return cls.from_lines(fh)

    def to_lines(self) -> list[str]:
        out = [
            json.dumps({"name": m.name, "rows": m.rows, "cols": m.cols, "nnz": m.nnz})
            for m in self.entries.values()
        ]
        out += [
            json.dumps({"name": f, "function": True, "arity": a})
            for f, a in self.functions.items()
        ]
        return out


@dataclass(frozen=True)
class Schema:
    """Output type of an expression.

    ``attrs`` holds the free attributes of a relation; ``shape`` is set for
    non-scalar matrices.  A scalar has neither, which makes a 1x1 matrix
    and a zero-arity relation the same type.
    """

    attrs: frozenset = frozenset()
    shape: Optional[tuple[int, int]] = None

    @staticmethod
    def matrix(rows: int, cols: int) -> "Schema":
        if (rows, cols) == (1, 1):
            return SCALAR
        return Schema(frozenset(), (rows, cols))

    @staticmethod
    def relation(attrs: Iterable[Attribute]) -> "Schema":
        attrs = frozenset(attrs)
        names = [a.name for a in attrs]
        if len(names) != len(set(names)):
            raise SchemaError(f"attribute name used with two sizes: {sorted(attrs)}")
        return Schema(attrs, None)

    @property
    def is_scalar(self) -> bool:
        return not self.attrs and self.shape is None

    @property
    def is_matrix(self) -> bool:
        return self.shape is not None or self.is_scalar

    @property
    def matrix_shape(self) -> Optional[tuple[int, int]]:
        if self.shape is not None:
            return self.shape
        return (1, 1) if self.is_scalar else None

    @property
    def la_expressible(self) -> bool:
        return len(self.attrs) <= 2

    @property
    def size(self) -> int:
        if self.shape is not None:
            return self.shape[0] * self.shape[1]
        n = 1
        for a in self.attrs:
            n *= a.dim
        return n

    def __repr__(self):
        if self.shape is not None:
            return f"Matrix{self.shape}"
        return "{" + ", ".join(map(repr, sorted(self.attrs))) + "}"


SCALAR = Schema()

Slot = Optional[Attribute]
Layout = tuple  # (row attribute or None, column attribute or None)


@dataclass(frozen=True)
class Expr:
    """One node of an LA or RA expression tree.

    ``data`` carries the operator payload: matrix/function name, literal
    value, exponent, attribute layout of bind/unbind, the frozenset of
    aggregated attributes, the rename pairs, or the attribute of ``dim``.
    """

    op: str
    children: tuple = ()
    data: object = None

    def __repr__(self):
        from .syntax import to_sexpr

        return to_sexpr(self)

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


# -- constructors -------------------------------------------------------------


def mat(name: str) -> Expr:
    return Expr("mat", (), name)


def lit(value) -> Expr:
    if isinstance(value, float) and value.is_integer() and abs(value) < 2**53:
        value = int(value)
    return Expr("lit", (), value)


def mmult(a: Expr, b: Expr) -> Expr:
    return Expr("mmult", (a, b))


def elemmult(a: Expr, b: Expr) -> Expr:
    return Expr("elemmult", (a, b))


def elemplus(a: Expr, b: Expr) -> Expr:
    return Expr("elemplus", (a, b))


def elemminus(a: Expr, b: Expr) -> Expr:
    return Expr("elemminus", (a, b))


def rowagg(a: Expr) -> Expr:
    return Expr("rowagg", (a,))


def colagg(a: Expr) -> Expr:
    return Expr("colagg", (a,))


def agg(a: Expr) -> Expr:
    return Expr("agg", (a,))


def transpose(a: Expr) -> Expr:
    return Expr("transpose", (a,))


def elempow(a: Expr, k: int) -> Expr:
    return Expr("elempow", (a,), int(k))


def call(fname: str, *args: Expr) -> Expr:
    return Expr("call", tuple(args), fname)


def join(*cs: Expr) -> Expr:
    return Expr("join", tuple(cs))


def union(*cs: Expr) -> Expr:
    return Expr("union", tuple(cs))


def ragg(attrs: Iterable[Attribute], child: Expr) -> Expr:
    return Expr("ragg", (child,), frozenset(attrs))


def bind(child: Expr, row: Slot, col: Slot) -> Expr:
    return Expr("bind", (child,), (row, col))


def unbind(child: Expr, row: Slot, col: Slot) -> Expr:
    return Expr("unbind", (child,), (row, col))


def rename(mapping: dict, child: Expr) -> Expr:
    return Expr("rename", (child,), tuple(sorted(mapping.items())))


def dim(attr: Attribute) -> Expr:
    return Expr("dim", (), attr)


def is_la(e: Expr) -> bool:
    return e.op in LA_OPS


# -- typing -------------------------------------------------------------------


def broadcast_shape(op: str, a: tuple, b: tuple) -> tuple[int, int]:
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(f"{op}: incompatible dimensions {a} and {b}")
    return tuple(out)


def layout_for_shape(shape: tuple, row: Slot, col: Slot) -> None:
    for size, slot, which in ((shape[0], row, "row"), (shape[1], col, "col")):
        if size == 1 and slot is not None:
            raise SchemaError(f"{which} of size 1 cannot be bound to {slot!r}")
        if size != 1 and (slot is None or slot.dim != size):
            raise SchemaError(f"{which} of size {size} bound to {slot!r}")
    if row is not None and row == col:
        raise SchemaError(f"bind uses attribute {row!r} twice")


def node_schema(op: str, data, child_schemas: list, catalog: Catalog) -> Schema:
    """Schema of one operator given its children's schemas."""
    if op == "mat":
        info = catalog[data]
        return Schema.matrix(info.rows, info.cols)
    if op in ("lit", "dim"):
        return SCALAR
    if op == "call":
        if data in catalog.functions and catalog.functions[data] != len(child_schemas):
            raise DimensionError(f"{data}: expects {catalog.functions[data]} arguments")
        if not child_schemas:
            return SCALAR
        shape = (1, 1)
        for s in child_schemas:
            if not s.is_matrix:
                raise SchemaError(f"{data}: argument is a relation")
            shape = broadcast_shape(data, shape, s.matrix_shape)
        return Schema.matrix(*shape)
    if op in ("join", "union"):
        if len(child_schemas) < 2:
            raise SchemaError(f"{op} needs at least two children")
        attrs = set()
        for s in child_schemas:
            if s.shape is not None:
                raise SchemaError(f"{op} over a matrix; bind it first")
            attrs |= s.attrs
        return Schema.relation(attrs)
    if op == "ragg":
        (s,) = child_schemas
        if s.shape is not None:
            raise SchemaError("agg over a matrix; bind it first")
        return Schema.relation(s.attrs - data)
    if op == "rename":
        (s,) = child_schemas
        if s.shape is not None:
            raise SchemaError("rename over a matrix")
        mapping = dict(data)
        missing = set(mapping) - s.attrs
        if missing:
            raise SchemaError(f"rename of absent attributes {sorted(missing)}")
        for old, new in mapping.items():
            if old.dim != new.dim:
                raise SchemaError(f"rename {old!r} -> {new!r} changes size")
        return Schema.relation(mapping.get(a, a) for a in s.attrs)
    if op == "bind":
        (s,) = child_schemas
        if not s.is_matrix:
            raise SchemaError("bind over a relation")
        layout_for_shape(s.matrix_shape, *data)
        return Schema.relation(a for a in data if a is not None)
    if op == "unbind":
        (s,) = child_schemas
        want = {a for a in data if a is not None}
        if s.shape is not None or s.attrs != want:
            raise SchemaError(f"unbind {data} over schema {s!r}")
        return Schema.matrix(*(1 if a is None else a.dim for a in data))

    shapes = []
    for s in child_schemas:
        if not s.is_matrix:
            raise SchemaError(f"{op} over a relation; unbind it first")
        shapes.append(s.matrix_shape)
    if op == "mmult":
        (m, k1), (k2, n) = shapes
        if k1 != k2:
            raise DimensionError(f"mmult: inner dimensions {shapes[0]} x {shapes[1]}")
        return Schema.matrix(m, n)
    if op in ("elemmult", "elemplus", "elemminus"):
        return Schema.matrix(*broadcast_shape(op, shapes[0], shapes[1]))
    (shape,) = shapes
    if op == "rowagg":
        return Schema.matrix(shape[0], 1)
    if op == "colagg":
        return Schema.matrix(1, shape[1])
    if op == "agg":
        return SCALAR
    if op == "transpose":
        return Schema.matrix(shape[1], shape[0])
    if op == "elempow":
        if data < 1:
            raise DimensionError("elempow needs a positive integer exponent")
        return Schema.matrix(*shape)
    raise IRError(f"unknown operator {op!r}")


def schema_of(e: Expr, catalog: Catalog, _memo: Optional[dict] = None) -> Schema:
    """Schema of ``e``; raises on ill-typed subexpressions."""
    memo = {} if _memo is None else _memo
    key = id(e)
    if key in memo:
        return memo[key][1]
    s = node_schema(e.op, e.data, [schema_of(c, catalog, memo) for c in e.children], catalog)
    memo[key] = (e, s)
    return s


def la_shape(e: Expr, catalog: Catalog) -> tuple[int, int]:
    s = schema_of(e, catalog)
    if not s.is_matrix:
        raise SchemaError(f"expression is a relation with schema {s!r}")
    return s.matrix_shape


def matrices(e: Expr) -> set[str]:
    return {n.data for n in e.walk() if n.op == "mat"}


def free_attrs(e: Expr, catalog: Catalog) -> frozenset:
    return schema_of(e, catalog).attrs


class AttrNamer:
    """Session counter producing fresh attribute names ``i0``, ``i1``, ..."""

    def __init__(self, prefix: str = "i", start: int = 0):
        self.prefix = prefix
        self._counter = itertools.count(start)

    def fresh(self, dim: int) -> Attribute:
        return Attribute(f"{self.prefix}{next(self._counter)}", dim)

    def slot(self, size: int) -> Slot:
        return None if size == 1 else self.fresh(size)
