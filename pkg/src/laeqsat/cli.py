"""Command-line driver.

    laeqsat optimize "sum((X-U%*%t(V))^2)" --catalog cat.jsonl
    laeqsat equiv "t(t(X))" "X" -m X=3x4
    laeqsat canon "sum(X*Y)" -m X=3x4 -m Y=3x4
    laeqsat derive
    laeqsat list-rules

Reports go to stdout as JSON (optimize) or plain text; summaries to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import canon, ir, syntax
from .extract import NoLAPlan
from .pipeline import VerifyError, default_suite_path, derive_case, load_suite, optimize
from .rules import builtin_ruleset
from .saturate import SaturationConfig

EXIT_OK = 0
EXIT_FALSE = 1
EXIT_INPUT = 2
EXIT_NO_PLAN = 3
EXIT_VERIFY = 4


def _matrix_arg(text: str) -> tuple:
    try:
        name, spec = text.split("=", 1)
        shape, _, nnz = spec.partition(":")
        r, c = shape.lower().split("x")
        return name.strip(), (int(r), int(c)) + ((int(nnz),) if nnz else ())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NAME=ROWSxCOLS[:NNZ], got {text!r}") from None


def load_catalog(args) -> ir.Catalog:
    cat = ir.Catalog.load(args.catalog) if args.catalog else ir.Catalog()
    for name, spec in args.matrix or ():
        cat.add(name, *spec)
    return cat


def _add_catalog_flags(p):
    p.add_argument("--catalog", help="JSON-lines catalog file")
    p.add_argument("-m", "--matrix", action="append", type=_matrix_arg, metavar="NAME=RxC[:NNZ]", help="add a matrix to the catalog")


def _add_saturation_flags(p):
    d = SaturationConfig()
    seed = int(os.environ.get("SPORES_SEED", d.rng_seed))
    p.add_argument("--strategy", choices=["sample", "depth-first"], default=d.strategy)
    p.add_argument("--limit", type=int, default=d.sample_limit, help="matches kept per rule per iteration")
    p.add_argument("--iters", type=int, default=d.max_iters)
    p.add_argument("--node-budget", type=int, default=d.node_budget)
    p.add_argument("--timeout-ms", type=int, default=d.time_budget_ms)
    p.add_argument("--seed", type=int, default=seed)


def _config(args) -> SaturationConfig:
    return SaturationConfig(
        strategy=args.strategy,
        sample_limit=args.limit,
        max_iters=args.iters,
        node_budget=args.node_budget,
        time_budget_ms=args.timeout_ms,
        rng_seed=args.seed,
    )


def cmd_optimize(args) -> int:
    cat = load_catalog(args)
    e = syntax.parse_la(args.expr, cat)
    try:
        res = optimize(e, cat, _config(args), method=args.extract, check=args.verify)
    except VerifyError as exc:
        print(f"verify failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    if args.dump_egraph:
        with open(args.dump_egraph, "w") as fh:
            fh.write(res.session.g.to_json())
    print(json.dumps(res.to_dict(), indent=2, sort_keys=True))
    rep = res.saturation
    print(
        f"{syntax.to_la_text(res.input)}  =>  {syntax.to_la_text(res.output)}\n"
        f"cost {res.cost_before:g} -> {res.cost_after:g}; saturation {rep.stop_reason} after "
        f"{rep.iterations_run} iterations, {rep.nodes_after} nodes",
        file=sys.stderr,
    )
    if res.plan.fallback:
        print("warning: exact extraction ran out of budget; best plan found so far kept", file=sys.stderr)
    return EXIT_OK


def cmd_equiv(args) -> int:
    cat = load_catalog(args)
    a, b = syntax.parse(args.expr1, cat), syntax.parse(args.expr2, cat)
    p, q = canon.comparable_forms(a, b, cat)
    same = p is not None and canon.isomorphic(p, q)
    print("true" if same else "false")
    print(f"  {p if p is not None else '(output types differ)'}")
    print(f"  {q if q is not None else ''}".rstrip())
    return EXIT_OK if same else EXIT_FALSE


def cmd_canon(args) -> int:
    cat = load_catalog(args)
    print(canon.canonicalize(syntax.parse(args.expr, cat), cat))
    return EXIT_OK


def cmd_derive(args) -> int:
    cases = load_suite(args.suite or default_suite_path())
    cfg = _config(args)
    t0 = time.perf_counter()
    failed = 0
    for case in cases:
        res = derive_case(case, cfg, stop_early=not args.full)
        failed += not res.passed
        print(res.line())
    print(f"{len(cases) - failed}/{len(cases)} passed in {time.perf_counter() - t0:.2f}s")
    return EXIT_OK if failed == 0 else EXIT_FALSE


def cmd_list_rules(args) -> int:
    for r in builtin_ruleset():
        print(f"{r.name:22s} {r.family:6s} {r.lhs}  =>  {r.rhs}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="laeqsat", description="Cost-based LA optimizer by equality saturation")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("optimize", help="optimize one LA expression")
    p.add_argument("expr")
    _add_catalog_flags(p)
    _add_saturation_flags(p)
    p.add_argument("--extract", choices=["greedy", "ilp", "both"], default="ilp")
    p.add_argument("--verify", action="store_true", help="check the plan on random bindings")
    p.add_argument("--dump-egraph", metavar="PATH")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("equiv", help="decide equivalence via canonical forms")
    p.add_argument("expr1")
    p.add_argument("expr2")
    _add_catalog_flags(p)
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("canon", help="print the canonical form")
    p.add_argument("expr")
    _add_catalog_flags(p)
    p.set_defaults(func=cmd_canon)

    p = sub.add_parser("derive", help="run the rewrite-derivation suite")
    p.add_argument("suite", nargs="?")
    p.add_argument("--full", action="store_true", help="saturate fully instead of stopping once the rhs appears")
    _add_saturation_flags(p)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("list-rules", help="list the built-in rewrite rules")
    p.set_defaults(func=cmd_list_rules)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (syntax.ParseError, ir.IRError, json.JSONDecodeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoLAPlan as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_PLAN


if __name__ == "__main__":
    sys.exit(main())
