"""Text forms: R-style infix for LA and prefix s-expressions for everything.

LA grammar::

    expr   := expr ('+'|'-') term | term
    term   := term ('*'|'%*%') factor | factor
    factor := atom '^' INT | atom
    atom   := IDENT | NUMBER | '(' expr ')' | FUNC '(' expr ')' | '-' atom

``FUNC`` is one of ``sum rowSums colSums t`` or an opaque function declared
in the catalog.  A leading ``-`` on a number is a negative literal; on any
other atom it means ``(-1) * atom``.
"""

from __future__ import annotations

import re
from typing import Optional

from . import ir
from .ir import Attribute, Catalog, Expr

BUILTIN_FUNCS = {"sum": "agg", "rowSums": "rowagg", "colSums": "colagg", "t": "transpose"}
FUNC_NAMES = {v: k for k, v in BUILTIN_FUNCS.items()}


class ParseError(ir.IRError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_.]*)"
    r"|(?P<op>%\*%|[-+*^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos:].lstrip()[:1]!r}", pos)
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


def _number(s: str):
    if re.fullmatch(r"\d+", s):
        return int(s)
    return float(s)


class _LAParser:
    def __init__(self, text: str, catalog: Catalog):
        self.toks = _tokenize(text)
        self.i = 0
        self.catalog = catalog

    def peek(self):
        return self.toks[self.i]

    def take(self, value: Optional[str] = None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2])
        self.i += 1
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "eof":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def checked(self, e: Expr, pos: int) -> Expr:
        try:
            ir.schema_of(e, self.catalog)
        except ir.UnknownMatrix:
            raise
        except ir.IRError as exc:
            raise ir.DimensionError(f"{exc} (operator at position {pos})") from None
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            _, op, pos = self.take()
            rhs = self.term()
            e = self.checked(Expr("elemplus" if op == "+" else "elemminus", (e, rhs)), pos)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[1] in ("*", "%*%"):
            _, op, pos = self.take()
            rhs = self.factor()
            e = self.checked(Expr("elemmult" if op == "*" else "mmult", (e, rhs)), pos)
        return e

    def factor(self) -> Expr:
        e = self.atom()
        if self.peek()[1] == "^":
            pos = self.take()[2]
            kind, val, vpos = self.take()
            if kind != "num" or not val.isdigit():
                raise ParseError("exponent must be a non-negative integer", vpos)
            e = self.checked(ir.elempow(e, int(val)), pos)
        return e

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return ir.lit(_number(val))
        if val == "-":
            if self.peek()[0] == "num":
                return ir.lit(-_number(self.take()[1]))
            inner = self.atom()
            return self.checked(ir.elemmult(ir.lit(-1), inner), pos)
        if val == "(":
            e = self.expr()
            self.take(")")
            return e
        if kind == "ident":
            if self.peek()[1] == "(":
                return self.func(val, pos)
            if val not in self.catalog:
                raise ir.UnknownMatrix(f"unknown matrix {val!r} at position {pos}")
            return ir.mat(val)
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)

    def func(self, name: str, pos: int) -> Expr:
        self.take("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.take(")")
        if name in BUILTIN_FUNCS:
            if len(args) != 1:
                raise ParseError(f"{name} takes one argument", pos)
            return self.checked(Expr(BUILTIN_FUNCS[name], (args[0],)), pos)
        if name in self.catalog.functions:
            return self.checked(ir.call(name, *args), pos)
        raise ParseError(f"unknown function {name!r}", pos)


def parse_la(text: str, catalog: Catalog) -> Expr:
    """Parse R-style LA text into a dimension-checked expression."""
    return _LAParser(text, catalog).parse()


# -- LA printer ---------------------------------------------------------------

_PREC = {"elemplus": 1, "elemminus": 1, "elemmult": 2, "mmult": 2, "elempow": 3}
_INFIX = {"elemplus": "+", "elemminus": "-", "elemmult": "*", "mmult": "%*%"}


def _prec(e: Expr) -> int:
    if e.op == "lit" and e.data < 0:
        return 0
    return _PREC.get(e.op, 4)


def _fmt_number(v) -> str:
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def to_la_text(e: Expr) -> str:
    if e.op == "mat":
        return e.data
    if e.op == "lit":
        return _fmt_number(e.data)
    if e.op in _INFIX:
        p = _PREC[e.op]
        a, b = e.children
        left = to_la_text(a)
        right = to_la_text(b)
        if _prec(a) < p:
            left = f"({left})"
        if _prec(b) <= p:
            right = f"({right})"
        return f"{left} {_INFIX[e.op]} {right}"
    if e.op == "elempow":
        (a,) = e.children
        base = to_la_text(a)
        if _prec(a) < 4:
            base = f"({base})"
        return f"{base}^{e.data}"
    if e.op in FUNC_NAMES:
        return f"{FUNC_NAMES[e.op]}({to_la_text(e.children[0])})"
    if e.op == "call":
        return f"{e.data}({', '.join(to_la_text(c) for c in e.children)})"
    raise ValueError(f"{e.op} has no LA infix form")


def print_expr(e: Expr) -> str:
    """Infix text for pure LA trees, s-expression text otherwise."""
    if all(n.op in ir.LA_OPS and n.op != "unbind" for n in e.walk()):
        return to_la_text(e)
    return to_sexpr(e)


# -- s-expressions ------------------------------------------------------------

_SEXPR_NAMES = {
    "agg": "sum",
    "ragg": "agg",
    "transpose": "t",
    "elempow": "pow",
}
_SEXPR_OPS = {v: k for k, v in _SEXPR_NAMES.items()}


def _bound_names(e: Expr) -> set:
    out = set()
    for n in e.walk():
        if n.op == "bind":
            out.update(a for a in n.data if a is not None)
    return out


def to_sexpr(e: Expr) -> str:
    inferable = _bound_names(e)

    def attr(a) -> str:
        if a is None:
            return "_"
        return a.name if a in inferable else f"{a.name}:{a.dim}"

    def go(n: Expr) -> str:
        op = n.op
        if op == "mat":
            return n.data
        if op == "lit":
            return f"(lit {_fmt_number(n.data)})"
        if op == "dim":
            return f"(dim {attr(n.data)})"
        if op == "ragg":
            names = " ".join(attr(a) for a in sorted(n.data))
            return f"(agg ({names}) {go(n.children[0])})"
        if op in ("bind", "unbind"):
            return f"({op} {go(n.children[0])} {attr(n.data[0])} {attr(n.data[1])})"
        if op == "rename":
            pairs = " ".join(f"({attr(a)} {attr(b)})" for a, b in n.data)
            return f"(rename ({pairs}) {go(n.children[0])})"
        if op == "elempow":
            return f"(pow {go(n.children[0])} {n.data})"
        if op == "call":
            return "(call " + " ".join([n.data] + [go(c) for c in n.children]) + ")"
        name = _SEXPR_NAMES.get(op, op)
        return "(" + " ".join([name] + [go(c) for c in n.children]) + ")"

    return go(e)


def _read_sexpr(text: str):
    toks = [(m.group(), m.start()) for m in re.finditer(r"\(|\)|[^\s()]+", text)]
    pos = 0

    def read():
        nonlocal pos
        if pos >= len(toks):
            raise ParseError("unexpected end of input", len(text))
        tok, at = toks[pos]
        pos += 1
        if tok == "(":
            items = []
            while True:
                if pos >= len(toks):
                    raise ParseError("unbalanced parenthesis", at)
                if toks[pos][0] == ")":
                    pos += 1
                    return (items, at)
                items.append(read())
        if tok == ")":
            raise ParseError("unexpected ')'", at)
        return (tok, at)

    tree = read()
    if pos != len(toks):
        raise ParseError("trailing input", toks[pos][1])
    return tree


class _SexprBuilder:
    def __init__(self, catalog: Catalog, attr_dims: Optional[dict]):
        self.catalog = catalog
        self.dims = dict(attr_dims or {})

    def attr(self, tok, at, size: Optional[int] = None):
        if tok == "_":
            if size not in (None, 1):
                raise ParseError(f"'_' used for a dimension of size {size}", at)
            return None
        name, _, d = tok.partition(":")
        if d:
            self.register(name, int(d), at)
        if size is not None:
            if size == 1:
                raise ParseError(f"attribute {name} bound to a dimension of size 1; use '_'", at)
            self.register(name, size, at)
        if name not in self.dims:
            raise ParseError(f"cannot infer the size of attribute {name!r}", at)
        return Attribute(name, self.dims[name])

    def register(self, name, size, at):
        if self.dims.get(name, size) != size:
            raise ParseError(f"attribute {name} used with sizes {self.dims[name]} and {size}", at)
        self.dims[name] = size

    def prescan(self, node):
        items, at = node
        if not isinstance(items, list):
            if ":" in items:
                name, _, d = items.partition(":")
                self.register(name, int(d), at)
            return
        for sub in items:
            self.prescan(sub)
        if items and items[0][0] == "bind" and len(items) == 4:
            try:
                child = self.build(items[1])
                shape = ir.la_shape(child, self.catalog)
            except ir.IRError:
                return
            for tok_at, size in zip(items[2:], shape):
                tok, tat = tok_at
                if tok != "_" and size != 1:
                    self.register(tok.partition(":")[0], size, tat)

    def build(self, node) -> Expr:
        items, at = node
        if not isinstance(items, list):
            if re.fullmatch(r"-?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?", items):
                return ir.lit(_number(items.lstrip("-")) * (-1 if items.startswith("-") else 1))
            if items not in self.catalog:
                raise ir.UnknownMatrix(f"unknown matrix {items!r} at position {at}")
            return ir.mat(items)
        if not items:
            raise ParseError("empty form", at)
        head, hat = items[0]
        if not isinstance(head, str):
            raise ParseError("form must start with an operator name", hat)
        args = items[1:]
        op = _SEXPR_OPS.get(head, head)
        if op == "lit":
            (tok, tat), = args
            neg = tok.startswith("-")
            v = _number(tok.lstrip("-"))
            return ir.lit(-v if neg else v)
        if op == "dim":
            (tok, tat), = args
            return ir.dim(self.attr(tok, tat))
        if op == "ragg":
            names, child = args
            return ir.ragg([self.attr(t, a) for t, a in names[0]], self.build(child))
        if op in ("bind", "unbind"):
            if len(args) != 3:
                raise ParseError(f"{head} takes an expression and two attributes", hat)
            child = self.build(args[0])
            if op == "bind":
                shape = ir.la_shape(child, self.catalog)
                slots = [self.attr(t, a, size) for (t, a), size in zip(args[1:], shape)]
            else:
                slots = [self.attr(t, a) for t, a in args[1:]]
            return Expr(op, (child,), tuple(slots))
        if op == "rename":
            pairs, child = args
            mapping = {}
            for pair, pat in pairs[0]:
                (a, aat), (b, bat) = pair
                mapping[self.attr(a, aat)] = self.attr(b, bat)
            return ir.rename(mapping, self.build(child))
        if op == "elempow":
            base, (k, kat) = args
            return ir.elempow(self.build(base), int(k))
        if op == "call":
            (fname, _), *rest = args
            return ir.call(fname, *(self.build(a) for a in rest))
        if op not in ir.LA_OPS | ir.RA_OPS:
            raise ParseError(f"unknown operator {head!r}", hat)
        return Expr(op, tuple(self.build(a) for a in args))


def parse_sexpr(text: str, catalog: Catalog, attr_dims: Optional[dict] = None) -> Expr:
    """Parse prefix notation.  Attribute sizes come from enclosing binds,
    explicit ``name:size`` annotations, or ``attr_dims``."""
    tree = _read_sexpr(text)
    builder = _SexprBuilder(catalog, attr_dims)
    try:
        builder.prescan(tree)
        e = builder.build(tree)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"malformed form ({exc})", tree[1]) from None
    ir.schema_of(e, catalog)
    return e


def parse(text: str, catalog: Catalog, attr_dims: Optional[dict] = None) -> Expr:
    """Accept either notation; a leading '(' followed by an operator name means s-expr."""
    m = re.match(r"\s*\(\s*([A-Za-z_]+)\s", text)
    if m and m.group(1) not in catalog and (
        m.group(1) in _SEXPR_OPS or m.group(1) in ir.LA_OPS | ir.RA_OPS
    ):
        return parse_sexpr(text, catalog, attr_dims)
    return parse_la(text, catalog)
