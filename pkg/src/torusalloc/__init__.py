"""Balancing factor allocations between discrete random measures on a flat torus.

Pipeline: generate measure pairs, build a concave transport cost adapted to
their coupling tails, solve exact partial-transport (semicoupling) problems,
assemble balancing allocation maps, and verify balance, equivariance and Palm
statistics against independent oracles.
"""

from .costs import (
    ConcaveCost,
    TailMassSequence,
    build_dlvp_cost,
    estimate_tail_masses,
    eval_cost,
    linear_cost,
    mean_cost,
    power_cost,
)
from .domain import (
    DiscreteMeasure,
    PeriodicDomain,
    SignedDecomposition,
    intensity,
    jordan_decompose,
    lebesgue_decompose,
    mutually_singular,
    shift,
)
from .plans import AllocationMap, SplitReport, TransportPlan

__version__ = "0.1.0"

__all__ = [
    "ConcaveCost",
    "TailMassSequence",
    "build_dlvp_cost",
    "estimate_tail_masses",
    "eval_cost",
    "linear_cost",
    "mean_cost",
    "power_cost",
    "DiscreteMeasure",
    "PeriodicDomain",
    "SignedDecomposition",
    "intensity",
    "jordan_decompose",
    "lebesgue_decompose",
    "mutually_singular",
    "shift",
    "AllocationMap",
    "SplitReport",
    "TransportPlan",
    "__version__",
]
