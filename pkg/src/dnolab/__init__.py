"""Two-term DNO symbols of the dbar-Neumann Laplacian, with independent numeric oracles."""

__version__ = "0.1.0"

from .forms import MultiIndex, epsilon, indices_of_degree  # noqa: E402
from .geometry import BoundaryChart, Domain, build_chart, builtin_domain, polynomial_domain  # noqa: E402
from .dno import DnoSymbol, dno_symbol, dno_symbol_phi  # noqa: E402
from .operator_assembly import LocalOperator, assemble_square  # noqa: E402

__all__ = [
    "__version__",
    "MultiIndex",
    "epsilon",
    "indices_of_degree",
    "BoundaryChart",
    "Domain",
    "build_chart",
    "builtin_domain",
    "polynomial_domain",
    "DnoSymbol",
    "dno_symbol",
    "dno_symbol_phi",
    "LocalOperator",
    "assemble_square",
]
