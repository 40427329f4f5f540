"""Concave transport costs and the de la Vallee Poussin threshold construction.

Given an integrable tail-mass sequence a_n (mass transported over distances in
[n*w, (n+1)*w)), `build_dlvp_cost` produces a piecewise-linear cost that is
strictly increasing, concave, zero at zero and diverging, such that
sum_n a_n * theta((n+1)*w) is finite with an explicit certificate.  The
thresholds N_1 < N_2 < ... are chosen so the tail beyond N_k is at most 2^-k
and the gaps N_{k+1} - N_k never shrink, which makes the slope sequence
1/gap_k nonincreasing (concavity) while theta(N_k) = k marches to infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .domain import PeriodicDomain

__all__ = [
    "ConcaveCost",
    "TailMassSequence",
    "DlvpCertificate",
    "estimate_tail_masses",
    "build_dlvp_cost",
    "eval_cost",
    "mean_cost",
    "dlvp_certificate",
    "linear_cost",
    "power_cost",
    "write_cost",
    "read_cost",
    "cost_to_text",
    "cost_from_text",
]

_SLOPE_TOL = 1e-12


@dataclass(frozen=True)
class ConcaveCost:
    """Piecewise-linear strictly increasing concave function with theta(0) = 0.

    Defined by values at breakpoints (starting at 0 with value 0) and a
    final_slope used beyond the last breakpoint, so the function diverges.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    final_slope: float
    degenerate: bool = False  # set when built from an all-zero tail sequence

    def __post_init__(self) -> None:
        bp = np.asarray(self.breakpoints, dtype=float)
        va = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", va)
        if len(bp) != len(va) or len(bp) == 0:
            raise ValueError("breakpoints and values must be nonempty, equal length")
        if bp[0] != 0.0 or va[0] != 0.0:
            raise ValueError("cost must start at (0, 0)")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        slopes = self.slopes
        if np.any(slopes <= 0):
            raise ValueError("cost must be strictly increasing")
        if np.any(np.diff(slopes) > _SLOPE_TOL):
            raise ValueError("slopes must be nonincreasing (concavity)")
        if not self.final_slope > 0:
            raise ValueError("final_slope must be positive (divergence)")

    @property
    def slopes(self) -> np.ndarray:
        """Segment slopes including final_slope as the last entry."""
        bp, va = self.breakpoints, self.values
        if len(bp) == 1:
            return np.array([self.final_slope])
        seg = np.diff(va) / np.diff(bp)
        return np.append(seg, self.final_slope)

    def __call__(self, r):
        return eval_cost(self, r)


def eval_cost(theta: ConcaveCost, r) -> np.ndarray | float:
    """Evaluate the cost at r >= 0 (scalar or array); exact at breakpoints."""
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise ValueError("cost argument must be nonnegative")
    bp, va = theta.breakpoints, theta.values
    out = np.interp(arr, bp, va)
    beyond = arr > bp[-1]
    if np.any(beyond):
        out = np.where(beyond, va[-1] + theta.final_slope * (arr - bp[-1]), out)
    return float(out) if np.isscalar(r) else out


@dataclass(frozen=True)
class TailMassSequence:
    """Nonnegative masses a_n binned by transported distance, per unit volume."""

    a: np.ndarray
    bin_width: float = 1.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.a, dtype=float)
        object.__setattr__(self, "a", arr)
        if arr.ndim != 1:
            raise ValueError("tail sequence must be one-dimensional")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("tail masses must be finite and nonnegative")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")

    @property
    def n_max(self) -> int:
        return len(self.a)

    @property
    def total(self) -> float:
        return float(self.a.sum())


def estimate_tail_masses(plans, domain: PeriodicDomain, bin_width: float) -> TailMassSequence:
    """Average per-unit-volume mass transported over distance bins of width w.

    a_n = mean over plans of (mass moved over periodic distance in
    [n*w, (n+1)*w)) / L^d.
    """
    plans = list(plans)
    if not plans:
        raise ValueError("need at least one transport plan")
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    n_bins = max(int(np.floor(domain.max_distance / bin_width)) + 1, 1)
    acc = np.zeros(n_bins)
    for plan in plans:
        if len(plan.mass) == 0:
            continue
        dist = plan.distances()
        bins = np.minimum((dist / bin_width).astype(np.int64), n_bins - 1)
        np.add.at(acc, bins, plan.mass)
    acc /= len(plans) * domain.volume
    last = int(np.max(np.flatnonzero(acc))) if np.any(acc > 0) else 0
    return TailMassSequence(acc[: last + 1], bin_width)


def build_dlvp_cost(a: TailMassSequence, max_levels: int = 60) -> ConcaveCost:
    """Threshold construction of a concave cost adapted to a tail sequence.

    Picks integer thresholds N_1 < N_2 < ... with suffix sums
    sum_{n >= N_k} a_n <= 2^-k and nondecreasing gaps, and returns the
    piecewise-linear cost with theta(N_k * w) = k.  An all-zero sequence has
    no information to adapt to; the identity cost is returned, flagged.
    """
    seq = a.a
    w = a.bin_width
    if a.total <= 0:
        return ConcaveCost(np.array([0.0, w]), np.array([0.0, 1.0]), 1.0 / w, degenerate=True)

    # suffix[N] = sum_{n >= N} a_n, length len(seq) + 1 with suffix[len] = 0
    suffix = np.concatenate([np.cumsum(seq[::-1])[::-1], [0.0]])
    last_nonzero = int(np.max(np.flatnonzero(seq)))

    thresholds: list[int] = []
    prev_n = 0
    prev_gap = 1
    for k in range(1, max_levels + 1):
        needed = int(np.searchsorted(-suffix, -(2.0**-k), side="left"))
        gap = max(prev_gap, needed - prev_n, 1)
        n_k = prev_n + gap
        thresholds.append(n_k)
        prev_n, prev_gap = n_k, gap
        if n_k > last_nonzero:
            break

    breakpoints = np.concatenate([[0.0], np.asarray(thresholds, dtype=float) * w])
    values = np.arange(len(thresholds) + 1, dtype=float)
    final_slope = 1.0 / (prev_gap * w)
    return ConcaveCost(breakpoints, values, final_slope)


@dataclass(frozen=True)
class DlvpCertificate:
    """Finiteness certificate for sum_n a_n * theta((n+1) * w)."""

    truncated_sum: float  # exact sum over the recorded range of the sequence
    tail_bound: float  # analytic bound on any continuation beyond the range
    levels: int

    @property
    def total_bound(self) -> float:
        return self.truncated_sum + self.tail_bound


def dlvp_certificate(a: TailMassSequence, theta: ConcaveCost) -> DlvpCertificate:
    """Certify finiteness of sum_n a_n * theta((n+1) * w).

    The truncated part is summed directly.  Beyond the last threshold level K
    the construction guarantees that mass between consecutive thresholds is at
    most 2^-k while theta there is at most k+1, so any continuation of the
    sequence contributes at most sum_{k >= K} (k+1) 2^-k = 2^{1-K} (K + 2).
    """
    n = np.arange(a.n_max)
    truncated = float(np.sum(a.a * eval_cost(theta, (n + 1) * a.bin_width)))
    levels = len(theta.breakpoints) - 1
    tail = 0.0 if theta.degenerate else float(2.0 ** (1 - levels) * (levels + 2))
    return DlvpCertificate(truncated, tail, levels)


def mean_cost(plan, theta: ConcaveCost, domain: PeriodicDomain) -> float:
    """Per-unit-volume transport cost of a plan: sum mass * theta(dist) / L^d."""
    if len(plan.mass) == 0:
        return 0.0
    return float(np.sum(plan.mass * eval_cost(theta, plan.distances()))) / domain.volume


def linear_cost(r_max: float) -> ConcaveCost:
    """The identity cost theta(r) = r (trivially concave and increasing)."""
    return ConcaveCost(np.array([0.0, r_max]), np.array([0.0, r_max]), 1.0)


def power_cost(p: float, r_max: float, knots: int = 64) -> ConcaveCost:
    """Piecewise-linear interpolant of r^p (0 < p < 1) on a geometric grid."""
    if not 0 < p < 1:
        raise ValueError("exponent must be in (0, 1)")
    grid = r_max * np.geomspace(1e-6, 1.0, knots)
    breakpoints = np.concatenate([[0.0], grid])
    values = breakpoints**p
    final_slope = p * r_max ** (p - 1.0)
    return ConcaveCost(breakpoints, values, final_slope)


# ---------------------------------------------------------------------------
# text serialization: `breakpoint value` lines plus trailing `final_slope s`
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def cost_to_text(theta: ConcaveCost) -> str:
    lines = [f"{_fmt(b)} {_fmt(v)}" for b, v in zip(theta.breakpoints, theta.values)]
    lines.append(f"final_slope {_fmt(theta.final_slope)}")
    if theta.degenerate:
        lines.append("degenerate 1")
    return "\n".join(lines) + "\n"


def cost_from_text(text: str) -> ConcaveCost:
    bps, vals = [], []
    final_slope = None
    degenerate = False
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if parts[0] == "final_slope":
            final_slope = float(parts[1])
        elif parts[0] == "degenerate":
            degenerate = bool(int(parts[1]))
        else:
            bps.append(float(parts[0]))
            vals.append(float(parts[1]))
    if final_slope is None:
        raise ValueError("missing final_slope line")
    return ConcaveCost(np.array(bps), np.array(vals), final_slope, degenerate=degenerate)


def write_cost(path_or_file: str | TextIO, theta: ConcaveCost) -> None:
    if isinstance(path_or_file, (str, bytes)):
        with open(path_or_file, "w") as fh:
            fh.write(cost_to_text(theta))
    else:
        path_or_file.write(cost_to_text(theta))


def read_cost(path_or_file: str | TextIO) -> ConcaveCost:
    if isinstance(path_or_file, (str, bytes)):
        with open(path_or_file) as fh:
            return cost_from_text(fh.read())
    return cost_from_text(path_or_file.read())
