"""Cost-based optimizer for linear-algebra expressions.

LA expressions are translated to a relational form, saturated in an e-graph
with sound and complete sum-product identities, and the cheapest plan under a
sparsity-aware cost model is extracted and printed back as LA.
"""

from .canon import canonicalize, equiv
from .extract import CostModel, extract_greedy, extract_ilp
from .ir import Catalog, Expr
from .pipeline import optimize
from .saturate import SaturationConfig, saturate
from .syntax import parse, parse_la, to_la_text

__version__ = "0.1.0"

__all__ = [
    "Catalog",
    "CostModel",
    "Expr",
    "SaturationConfig",
    "canonicalize",
    "equiv",
    "extract_greedy",
    "extract_ilp",
    "optimize",
    "parse",
    "parse_la",
    "saturate",
    "to_la_text",
]
