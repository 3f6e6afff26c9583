"""Dense reference evaluator; the ground truth for every equivalence test."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .ir import Attribute, Catalog, Expr, IRError

RTOL = 1e-9
ATOL = 1e-12

OPAQUE_FUNCTIONS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sign": np.sign,
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
}


class EvalError(IRError):
    pass


@dataclass(frozen=True)
class Tensor:
    """A matrix (``attrs is None``, 2-d ``data``) or a relation whose axes
    follow ``attrs``."""

    attrs: Optional[tuple]
    data: np.ndarray

    def as_matrix(self) -> np.ndarray:
        if self.attrs is None:
            return self.data
        if not self.attrs:
            return np.asarray(self.data, dtype=float).reshape(1, 1)
        raise EvalError(f"relation over {self.attrs} used as a matrix")

    def aligned(self, attrs: tuple) -> np.ndarray:
        """Data with axes permuted to ``attrs``; absent attributes become
        broadcastable axes of size 1."""
        mine = self.relation()
        perm = [mine.attrs.index(a) for a in attrs if a in mine.attrs]
        arr = np.transpose(mine.data, perm) if perm else np.asarray(mine.data)
        shape = [a.dim if a in mine.attrs else 1 for a in attrs]
        return arr.reshape(shape)

    def relation(self) -> "Tensor":
        if self.attrs is not None:
            return self
        if self.data.shape == (1, 1):
            return Tensor((), self.data.reshape(()))
        raise EvalError(f"matrix of shape {self.data.shape} used as a relation")

    def canonical(self) -> "Tensor":
        """Axes sorted by attribute, for comparison."""
        if self.attrs is None:
            if self.data.shape == (1, 1):
                return self.relation()
            return self
        order = tuple(sorted(self.attrs))
        return Tensor(order, self.aligned(order))


Binding = Mapping[str, np.ndarray]


def _scalar(x: float) -> Tensor:
    return Tensor((), np.asarray(float(x)))


def evaluate(e: Expr, b: Binding, functions: Optional[dict] = None) -> Tensor:
    fns = OPAQUE_FUNCTIONS if functions is None else functions
    memo: dict[int, Tensor] = {}

    def go(n: Expr) -> Tensor:
        key = id(n)
        if key not in memo:
            memo[key] = _eval_node(n, [go(c) for c in n.children], b, fns)
        return memo[key]

    return go(e)


def _eval_node(n: Expr, kids: list, b: Binding, fns: dict) -> Tensor:
    op = n.op
    if op == "mat":
        if n.data not in b:
            raise EvalError(f"no binding for matrix {n.data!r}")
        arr = np.asarray(b[n.data], dtype=float)
        if arr.ndim != 2:
            raise EvalError(f"binding for {n.data!r} is not 2-d")
        return Tensor(None, arr)
    if op == "lit":
        return _scalar(n.data)
    if op == "dim":
        return _scalar(n.data.dim)
    if op == "join":
        attrs = tuple(sorted(set().union(*(k.relation().attrs for k in kids))))
        out = np.ones([a.dim for a in attrs])
        for k in kids:
            out = out * k.aligned(attrs)
        return Tensor(attrs, out)
    if op == "union":
        attrs = tuple(sorted(set().union(*(k.relation().attrs for k in kids))))
        out = np.zeros([a.dim for a in attrs])
        for k in kids:
            out = out + k.aligned(attrs)
        return Tensor(attrs, out)
    if op == "ragg":
        (k,) = kids
        k = k.relation()
        present = [a for a in n.data if a in k.attrs]
        factor = 1
        for a in n.data:
            if a not in k.attrs:
                factor *= a.dim
        axes = tuple(k.attrs.index(a) for a in present)
        data = np.sum(k.data, axis=axes) if axes else k.data
        keep = tuple(a for a in k.attrs if a not in present)
        return Tensor(keep, np.asarray(data * factor))
    if op == "bind":
        m = kids[0].as_matrix()
        row, col = n.data
        data = m
        if row is None:
            data = data[0:1, :]
        if col is None:
            data = data[:, 0:1]
        attrs = tuple(a for a in (row, col) if a is not None)
        return Tensor(attrs, data.reshape([a.dim for a in attrs]))
    if op == "unbind":
        row, col = n.data
        order = tuple(a for a in (row, col) if a is not None)
        data = kids[0].aligned(order)
        return Tensor(None, data.reshape(1 if row is None else row.dim, 1 if col is None else col.dim))
    if op == "rename":
        k = kids[0].relation()
        mapping = dict(n.data)
        return Tensor(tuple(mapping.get(a, a) for a in k.attrs), k.data)

    ms = [k.as_matrix() for k in kids]
    if op == "mmult":
        return Tensor(None, ms[0] @ ms[1])
    if op == "elemmult":
        return Tensor(None, ms[0] * ms[1])
    if op == "elemplus":
        return Tensor(None, ms[0] + ms[1])
    if op == "elemminus":
        return Tensor(None, ms[0] - ms[1])
    if op == "rowagg":
        return Tensor(None, ms[0].sum(axis=1, keepdims=True))
    if op == "colagg":
        return Tensor(None, ms[0].sum(axis=0, keepdims=True))
    if op == "agg":
        return Tensor(None, ms[0].sum().reshape(1, 1))
    if op == "transpose":
        return Tensor(None, ms[0].T.copy())
    if op == "elempow":
        return Tensor(None, ms[0] ** n.data)
    if op == "call":
        if n.data not in fns:
            raise EvalError(f"no implementation for opaque function {n.data!r}")
        out = np.asarray(fns[n.data](*ms), dtype=float)
        return Tensor(None, out.reshape(out.shape if out.ndim == 2 else (1, 1)))
    raise EvalError(f"cannot evaluate operator {op!r}")


def eval_la(e: Expr, b: Binding, catalog: Optional[Catalog] = None) -> np.ndarray:
    if catalog is not None:
        check_binding(b, catalog, {n.data for n in e.walk() if n.op == "mat"})
    return evaluate(e, b).as_matrix()


def eval_ra(e: Expr, b: Binding, catalog: Optional[Catalog] = None) -> Tensor:
    if catalog is not None:
        check_binding(b, catalog, {n.data for n in e.walk() if n.op == "mat"})
    return evaluate(e, b).relation()


def check_binding(b: Binding, catalog: Catalog, names) -> None:
    for name in names:
        if name not in b:
            raise EvalError(f"no binding for matrix {name!r}")
        if np.shape(b[name]) != catalog[name].shape:
            raise EvalError(
                f"binding for {name!r} has shape {np.shape(b[name])}, "
                f"catalog says {catalog[name].shape}"
            )


def same_value(x: Tensor, y: Tensor, rtol: float = RTOL, atol: float = ATOL) -> bool:
    """Entrywise comparison; a 1x1 matrix equals the matching scalar relation."""
    x, y = x.canonical(), y.canonical()
    if x.attrs != y.attrs or x.data.shape != y.data.shape:
        return False
    return bool(np.allclose(x.data, y.data, rtol=rtol, atol=atol))


def random_binding(catalog: Catalog, rng: np.random.Generator, names=None) -> dict:
    """Random dense data honouring each matrix's nonzero count exactly."""
    out = {}
    for name in sorted(catalog.entries if names is None else names):
        info = catalog[name]
        size = info.rows * info.cols
        flat = np.zeros(size)
        pos = rng.choice(size, size=info.nnz, replace=False)
        flat[pos] = rng.uniform(-2.0, 2.0, size=info.nnz)
        out[name] = flat.reshape(info.rows, info.cols)
    return out


def load_tensors(lines) -> dict:
    """Read ``{"name","rows","cols","data"}`` objects, one per line."""
    out = {}
    for line in lines:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        out[obj["name"]] = np.asarray(obj["data"], dtype=float).reshape(obj["rows"], obj["cols"])
    return out


__all__ = [
    "Attribute",
    "Tensor",
    "eval_la",
    "eval_ra",
    "evaluate",
    "same_value",
    "random_binding",
    "load_tensors",
]
