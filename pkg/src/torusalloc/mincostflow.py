"""Transportation-problem front end over the network simplex backends.

At import time the compiled kernel (torusalloc._netsimplex) is preferred; the
pure-Python twin is used when the extension is unavailable.  Both produce
bitwise-identical results; `use_backend` switches explicitly (benchmarks,
tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _netsimplex_py

try:
    from . import _netsimplex  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _netsimplex = None
    HAVE_COMPILED = False

__all__ = [
    "TransportSolution",
    "InfeasibleTransportError",
    "solve_transportation",
    "active_backend",
    "use_backend",
    "available_backends",
    "HAVE_COMPILED",
]

_active = _netsimplex if HAVE_COMPILED else _netsimplex_py


class InfeasibleTransportError(ValueError):
    """The transportation instance admits no feasible flow."""


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if HAVE_COMPILED else ("python",)


def active_backend() -> str:
    return _active.BACKEND


def use_backend(name: str) -> None:
    """Select 'compiled' or 'python'; raises if the extension is missing."""
    global _active
    if name == "python":
        _active = _netsimplex_py
    elif name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled backend not available")
        _active = _netsimplex
    else:
        raise ValueError(f"unknown backend {name!r}")


@dataclass(frozen=True)
class TransportSolution:
    """Optimal flows of a transportation instance plus dual certificates."""

    flow: np.ndarray  # per arc
    potentials: np.ndarray  # per node; cost - pi[src] + pi[dst] >= -eps at optimum
    objective: float
    residual: float  # flow stranded on artificial arcs (feasibility slack)
    pivots: int

    def reduced_costs(self, arc_src, arc_dst, arc_cost) -> np.ndarray:
        return (np.asarray(arc_cost) - self.potentials[np.asarray(arc_src)]) + self.potentials[
            np.asarray(arc_dst)
        ]


def solve_transportation(
    supply: np.ndarray,
    demand: np.ndarray,
    arc_src: np.ndarray,
    arc_dst: np.ndarray,
    arc_cost: np.ndarray,
    eps: float | None = None,
    feasibility_tol: float | None = None,
    backend=None,
) -> TransportSolution:
    """Solve min sum(cost * flow) with row sums = supply and column sums = demand.

    Nodes are indexed 0..m-1 for supplies and m..m+k-1 for demands; arc_dst
    must already use the offset indexing.  Supplies and demands must balance;
    tiny float imbalance is absorbed by the artificial root and reported via
    `residual` (checked against feasibility_tol).
    """
    supply = np.ascontiguousarray(supply, dtype=float)
    demand = np.ascontiguousarray(demand, dtype=float)
    arc_src = np.ascontiguousarray(arc_src, dtype=np.int64)
    arc_dst = np.ascontiguousarray(arc_dst, dtype=np.int64)
    arc_cost = np.ascontiguousarray(arc_cost, dtype=float)
    m, k = len(supply), len(demand)
    n = m + k
    if np.any(supply < 0) or np.any(demand < 0):
        raise ValueError("supplies and demands must be nonnegative")
    if len(arc_src) != len(arc_dst) or len(arc_src) != len(arc_cost):
        raise ValueError("arc arrays must have equal length")

    total = float(supply.sum())
    imbalance = abs(total - float(demand.sum()))
    if feasibility_tol is None:
        feasibility_tol = 1e-9 * max(1.0, total)
    if imbalance > feasibility_tol:
        raise InfeasibleTransportError(
            f"supply/demand imbalance {imbalance:.3e} exceeds tolerance {feasibility_tol:.3e}"
        )
    if eps is None:
        max_cost = float(np.abs(arc_cost).max()) if len(arc_cost) else 0.0
        eps = 1e-11 * (1.0 + max_cost)

    node_demand = np.concatenate([-supply, demand])
    impl = _active if backend is None else _resolve(backend)
    flow, potentials, residual, pivots = impl.solve(
        n, node_demand, arc_src, arc_dst, arc_cost, eps
    )
    if residual > feasibility_tol:
        raise InfeasibleTransportError(
            f"no feasible flow: artificial residual {residual:.3e}"
        )
    objective = float(np.dot(flow, arc_cost))
    return TransportSolution(flow, potentials, objective, residual, pivots)


def _resolve(backend):
    if backend in (None, "active"):
        return _active
    if backend == "python":
        return _netsimplex_py
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled backend not available")
        return _netsimplex
    return backend
