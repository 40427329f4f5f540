"""Transport plans and allocation maps between discrete measures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .costs import ConcaveCost, eval_cost
from .domain import DiscreteMeasure, DomainMismatchError, PeriodicDomain

__all__ = [
    "TransportPlan",
    "AllocationMap",
    "SplitReport",
    "MarginalViolationError",
    "write_plan",
    "read_plan",
    "write_allocation",
    "read_allocation",
]

MARGINAL_TOL = 1e-9


class MarginalViolationError(ValueError):
    """A plan's row/column sums are inconsistent with its marginal measures."""


@dataclass(frozen=True)
class TransportPlan:
    """Sparse semicoupling q between mu and nu.

    Entries (src, dst, mass) reference atom indices of the two measures.
    Column sums reproduce nu exactly; row sums never exceed mu.  Entries are
    stored sorted by (src, dst) so equal plans have equal arrays.
    """

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    src: np.ndarray
    dst: np.ndarray
    mass: np.ndarray

    def __post_init__(self) -> None:
        if self.mu.domain != self.nu.domain:
            raise DomainMismatchError("plan marginals live on different domains")
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        mass = np.asarray(self.mass, dtype=float).ravel()
        if not (len(src) == len(dst) == len(mass)):
            raise ValueError("entry arrays must have equal length")
        keep = mass > 0
        src, dst, mass = src[keep], dst[keep], mass[keep]
        order = np.lexsort((dst, src))
        src, dst, mass = src[order], dst[order], mass[order]
        for arr in (src, dst, mass):
            arr.setflags(write=False)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "mass", mass)
        self._validate()

    def _validate(self) -> None:
        if len(self.mass) == 0:
            if self.nu.total_mass > MARGINAL_TOL * max(1.0, self.mu.total_mass):
                raise MarginalViolationError("empty plan cannot have nonempty target")
            return
        if self.src.min() < 0 or self.src.max() >= len(self.mu):
            raise ValueError("source index out of range")
        if self.dst.min() < 0 or self.dst.max() >= len(self.nu):
            raise ValueError("target index out of range")
        scale = max(1.0, self.mu.total_mass)
        col = self.column_sums()
        if np.max(np.abs(col - self.nu.masses)) > MARGINAL_TOL * scale:
            raise MarginalViolationError("column sums do not reproduce the target measure")
        row = self.row_sums()
        if np.max(row - self.mu.masses) > MARGINAL_TOL * scale:
            raise MarginalViolationError("row sums exceed the source measure")

    @property
    def domain(self) -> PeriodicDomain:
        return self.mu.domain

    def row_sums(self) -> np.ndarray:
        out = np.zeros(len(self.mu))
        np.add.at(out, self.src, self.mass)
        return out

    def column_sums(self) -> np.ndarray:
        out = np.zeros(len(self.nu))
        np.add.at(out, self.dst, self.mass)
        return out

    def displacements(self) -> np.ndarray:
        return self.domain.displacement(self.mu.points[self.src], self.nu.points[self.dst])

    def distances(self) -> np.ndarray:
        v = self.displacements()
        return np.sqrt(np.sum(v * v, axis=-1)) if len(v) else np.zeros(0)

    def total_cost(self, theta: ConcaveCost) -> float:
        """Unnormalized transport cost sum(mass * theta(dist))."""
        if len(self.mass) == 0:
            return 0.0
        return float(np.sum(self.mass * eval_cost(theta, self.distances())))


@dataclass(frozen=True)
class AllocationMap:
    """Per-source-atom assignment of a target point with a used fraction.

    Represents the pair (T, f): atom i of `source` sends f_i of its mass to
    the point targets[row].  Unlisted atoms are unused (f = 0).
    """

    source: DiscreteMeasure
    src_indices: np.ndarray
    targets: np.ndarray
    fractions: np.ndarray

    def __post_init__(self) -> None:
        idx = np.asarray(self.src_indices, dtype=np.int64).ravel()
        tgt = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if len(idx) == 0:
            tgt = np.zeros((0, self.source.domain.dim))
        fr = np.asarray(self.fractions, dtype=float).ravel()
        if not (len(idx) == len(tgt) == len(fr)):
            raise ValueError("assignment arrays must have equal length")
        if len(idx) and (idx.min() < 0 or idx.max() >= len(self.source)):
            raise ValueError("source index out of range")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("each source atom may be assigned at most once")
        if np.any(fr <= 0) or np.any(fr > 1 + 1e-9):
            raise ValueError("fractions must lie in (0, 1]")
        order = np.argsort(idx)
        idx, tgt, fr = idx[order], tgt[order], np.minimum(fr[order], 1.0)
        for arr in (idx, tgt, fr):
            arr.setflags(write=False)
        object.__setattr__(self, "src_indices", idx)
        object.__setattr__(self, "targets", tgt)
        object.__setattr__(self, "fractions", fr)

    @classmethod
    def identity(cls, mu: DiscreteMeasure) -> "AllocationMap":
        return cls(mu, np.arange(len(mu)), mu.points.copy(), np.ones(len(mu)))

    def __len__(self) -> int:
        return len(self.src_indices)

    @property
    def domain(self) -> PeriodicDomain:
        return self.source.domain

    def used_masses(self) -> np.ndarray:
        return self.fractions * self.source.masses[self.src_indices]

    @property
    def used_mass(self) -> float:
        return float(self.used_masses().sum()) if len(self) else 0.0

    def displacements(self) -> np.ndarray:
        return self.domain.displacement(self.source.points[self.src_indices], self.targets)

    def distances(self) -> np.ndarray:
        v = self.displacements()
        return np.sqrt(np.sum(v * v, axis=-1)) if len(v) else np.zeros(0)

    def transport_cost(self, theta: ConcaveCost) -> float:
        """Per-unit-volume cost sum(f * mass * theta(dist)) / L^d."""
        if len(self) == 0:
            return 0.0
        cost = float(np.sum(self.used_masses() * eval_cost(theta, self.distances())))
        return cost / self.domain.volume

    def target_of(self, atom_index: int) -> np.ndarray | None:
        pos = np.searchsorted(self.src_indices, atom_index)
        if pos < len(self) and self.src_indices[pos] == atom_index:
            return self.targets[pos]
        return None

    def merged_with(self, other: "AllocationMap") -> "AllocationMap":
        """Union of two maps over the same source measure (disjoint atom sets)."""
        if other.source is not self.source and not other.source.allclose(self.source):
            raise ValueError("maps must share the source measure")
        return AllocationMap(
            self.source,
            np.concatenate([self.src_indices, other.src_indices]),
            np.concatenate([self.targets, other.targets]) if len(self) + len(other) else self.targets,
            np.concatenate([self.fractions, other.fractions]),
        )


@dataclass(frozen=True)
class SplitReport:
    """Sources of a plan that feed more than one target (not map-representable)."""

    split_sources: tuple[int, ...]
    split_target_counts: tuple[int, ...]
    split_mass: float
    n_sources: int

    @property
    def count(self) -> int:
        return len(self.split_sources)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_plan(
    path_or_file: str | TextIO,
    plan: TransportPlan,
    mu_file: str = "mu.txt",
    nu_file: str = "nu.txt",
    cost_file: str = "cost.txt",
) -> None:
    lines = [f"mu_file {mu_file}", f"nu_file {nu_file}", f"cost_file {cost_file}"]
    for s, t, m in zip(plan.src, plan.dst, plan.mass):
        lines.append(f"{s} {t} {_fmt(m)}")
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_file, (str, bytes)):
        with open(path_or_file, "w") as fh:
            fh.write(text)
    else:
        path_or_file.write(text)


def read_plan(
    path_or_file: str | TextIO, mu: DiscreteMeasure, nu: DiscreteMeasure
) -> tuple[TransportPlan, dict[str, str]]:
    """Parse a plan file; measure/cost file references are returned as metadata."""
    if isinstance(path_or_file, (str, bytes)):
        with open(path_or_file) as fh:
            text = fh.read()
    else:
        text = path_or_file.read()
    refs: dict[str, str] = {}
    src, dst, mass = [], [], []
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if parts[0] in ("mu_file", "nu_file", "cost_file"):
            refs[parts[0]] = parts[1]
            continue
        src.append(int(parts[0]))
        dst.append(int(parts[1]))
        mass.append(float(parts[2]))
    plan = TransportPlan(mu, nu, np.array(src, np.int64), np.array(dst, np.int64), np.array(mass))
    return plan, refs


def write_allocation(path_or_file: str | TextIO, amap: AllocationMap) -> None:
    lines = []
    for i, tgt, f in zip(amap.src_indices, amap.targets, amap.fractions):
        lines.append(f"{i} " + " ".join(_fmt(c) for c in tgt) + f" {_fmt(f)}")
    text = "\n".join(lines) + ("\n" if lines else "")
    if isinstance(path_or_file, (str, bytes)):
        with open(path_or_file, "w") as fh:
            fh.write(text)
    else:
        path_or_file.write(text)


def read_allocation(path_or_file: str | TextIO, source: DiscreteMeasure) -> AllocationMap:
    if isinstance(path_or_file, (str, bytes)):
        with open(path_or_file) as fh:
            text = fh.read()
    else:
        text = path_or_file.read()
    idx, tgts, frs = [], [], []
    d = source.domain.dim
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if len(parts) != d + 2:
            raise ValueError(f"allocation line has {len(parts)} fields, expected {d + 2}")
        idx.append(int(parts[0]))
        tgts.append([float(v) for v in parts[1 : 1 + d]])
        frs.append(float(parts[-1]))
    return AllocationMap(
        source,
        np.array(idx, np.int64),
        np.array(tgts) if tgts else np.zeros((0, d)),
        np.array(frs),
    )
