"""Weighted atomic measures on a flat torus.

The ambient space is the torus [0, L)^d with the translation group acting by
coordinate-wise wraparound.  Measures are finite lists of weighted atoms held
in a canonical form (atoms sorted lexicographically by coordinates, duplicate
locations merged), so that every operation downstream is a deterministic
function of the atom configuration alone and never of input ordering.

All mass algebra (Jordan decomposition, Lebesgue decomposition, common part,
mutual singularity) is exact atomwise arithmetic on the merged atom lists.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np

__all__ = [
    "PeriodicDomain",
    "DiscreteMeasure",
    "SignedDecomposition",
    "DomainMismatchError",
    "intensity",
    "shift",
    "jordan_decompose",
    "lebesgue_decompose",
    "mutually_singular",
    "restrict",
    "write_measure",
    "read_measure",
    "measure_to_text",
    "measure_from_text",
]

# Atoms closer than this fraction of a grid cell are merged at construction,
# so `mutually_singular` cannot be defeated by float noise in locations.
MERGE_CELL_FRACTION = 1e-9


class DomainMismatchError(ValueError):
    """Raised when an operation mixes measures living on different domains."""


@dataclass(frozen=True)
class PeriodicDomain:
    """Flat torus [0, side)^dim discretized into resolution cells per side."""

    dim: int
    side: float
    resolution: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if not self.side > 0:
            raise ValueError(f"side must be positive, got {self.side}")
        if self.resolution < 1:
            raise ValueError(f"resolution must be positive, got {self.resolution}")

    @property
    def pitch(self) -> float:
        """Grid pitch L/n."""
        return self.side / self.resolution

    @property
    def volume(self) -> float:
        return float(self.side) ** self.dim

    @property
    def merge_tol(self) -> float:
        return MERGE_CELL_FRACTION * self.pitch

    @property
    def max_distance(self) -> float:
        """Diameter of the torus: (L/2) * sqrt(d)."""
        return 0.5 * self.side * float(np.sqrt(self.dim))

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map coordinates into [0, L) by wraparound."""
        return np.mod(np.asarray(points, dtype=float), self.side)

    def displacement(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        """Signed minimum-image displacement dst - src, per coordinate in [-L/2, L/2)."""
        src = np.asarray(src, dtype=float)
        dst = np.asarray(dst, dtype=float)
        half = 0.5 * self.side
        return np.mod(dst - src + half, self.side) - half

    def distance(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        """Periodic Euclidean distance; broadcasts over leading axes."""
        v = self.displacement(src, dst)
        return np.sqrt(np.sum(v * v, axis=-1))

    def distance_matrix(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        """(m, k) matrix of periodic distances between two point sets."""
        src = np.asarray(src, dtype=float)
        dst = np.asarray(dst, dtype=float)
        return self.distance(src[:, None, :], dst[None, :, :])

    def cell_centers(self) -> np.ndarray:
        """Centers of all resolution^dim grid cells, lexicographically ordered."""
        axis = (np.arange(self.resolution) + 0.5) * self.pitch
        grids = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Flat (C-order) cell index containing each point."""
        pts = self.wrap(points)
        idx = np.minimum((pts / self.pitch).astype(np.int64), self.resolution - 1)
        flat = np.zeros(len(idx), dtype=np.int64)
        for k in range(self.dim):
            flat = flat * self.resolution + idx[:, k]
        return flat

    def location_keys(self, points: np.ndarray) -> np.ndarray:
        """Integer quantization of coordinates at merge_tol, used for atom identity."""
        pts = np.asarray(points, dtype=float)
        return np.round(pts / self.merge_tol).astype(np.int64)


def _canonicalize(
    domain: PeriodicDomain, points: np.ndarray, masses: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Wrap, drop zero atoms, merge duplicates, and sort lexicographically."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    masses = np.asarray(masses, dtype=float).ravel()
    if points.size == 0:
        return np.zeros((0, domain.dim)), np.zeros(0)
    if points.shape[1] != domain.dim:
        raise ValueError(f"points have dim {points.shape[1]}, domain has {domain.dim}")
    if len(points) != len(masses):
        raise ValueError("points and masses length mismatch")
    if np.any(masses < 0):
        raise ValueError("atom masses must be nonnegative")
    if not np.all(np.isfinite(points)) or not np.all(np.isfinite(masses)):
        raise ValueError("non-finite atom data")

    keep = masses > 0
    points = domain.wrap(points[keep])
    masses = masses[keep]
    if len(points) == 0:
        return np.zeros((0, domain.dim)), np.zeros(0)

    keys = domain.location_keys(points)
    # lex sort rows (last key = least significant in np.lexsort, so reverse)
    order = np.lexsort(tuple(keys[:, k] for k in range(domain.dim - 1, -1, -1)))
    keys = keys[order]
    points = points[order]
    masses = masses[order]

    new_group = np.ones(len(points), dtype=bool)
    new_group[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    group_id = np.cumsum(new_group) - 1
    n_groups = group_id[-1] + 1
    merged_mass = np.zeros(n_groups)
    np.add.at(merged_mass, group_id, masses)
    first_rows = np.flatnonzero(new_group)
    merged_points = points[first_rows]
    merged_points.setflags(write=False)
    merged_mass.setflags(write=False)
    return merged_points, merged_mass


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite nonnegative atomic measure on a periodic domain.

    Atoms are stored sorted lexicographically by coordinates with duplicate
    locations merged, so equality of configurations implies equality of the
    stored arrays.  Instances are immutable and safe to share across threads.
    """

    domain: PeriodicDomain
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        pts, ms = _canonicalize(self.domain, self.points, self.masses)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", ms)

    @classmethod
    def from_atoms(
        cls, domain: PeriodicDomain, atoms: Iterable[tuple[Sequence[float], float]]
    ) -> "DiscreteMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls.empty(domain)
        pts = np.array([np.atleast_1d(a[0]) for a in atoms], dtype=float)
        ms = np.array([a[1] for a in atoms], dtype=float)
        return cls(domain, pts, ms)

    @classmethod
    def empty(cls, domain: PeriodicDomain) -> "DiscreteMeasure":
        return cls(domain, np.zeros((0, domain.dim)), np.zeros(0))

    def __len__(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def max_atom_mass(self) -> float:
        return float(self.masses.max()) if len(self) else 0.0

    @cached_property
    def location_keys(self) -> np.ndarray:
        return self.domain.location_keys(self.points)

    @cached_property
    def _key_index(self) -> dict[tuple[int, ...], int]:
        return {tuple(row): i for i, row in enumerate(self.location_keys)}

    @cached_property
    def is_cell_aligned(self) -> bool:
        """True when every atom sits at a grid cell center (within merge_tol)."""
        if len(self) == 0:
            return True
        centers = (np.floor(self.points / self.domain.pitch) + 0.5) * self.domain.pitch
        return bool(np.all(np.abs(self.points - centers) <= self.domain.merge_tol))

    def index_of(self, point: np.ndarray) -> int | None:
        """Index of the atom at a location, or None."""
        key = tuple(self.domain.location_keys(np.atleast_2d(point))[0])
        return self._key_index.get(key)

    def mass_at(self, point: np.ndarray) -> float:
        i = self.index_of(point)
        return float(self.masses[i]) if i is not None else 0.0

    def scaled(self, factor: float) -> "DiscreteMeasure":
        if factor < 0:
            raise ValueError("scale factor must be nonnegative")
        return DiscreteMeasure(self.domain, self.points, self.masses * factor)

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        _require_same_domain(self, other)
        return DiscreteMeasure(
            self.domain,
            np.concatenate([self.points, other.points]),
            np.concatenate([self.masses, other.masses]),
        )

    def allclose(self, other: "DiscreteMeasure", tol: float = 1e-12) -> bool:
        """Atomwise equality up to `tol` scaled by total mass."""
        if len(self) != len(other):
            return False
        if len(self) == 0:
            return True
        scale = max(self.total_mass, other.total_mass, 1.0)
        return bool(
            np.array_equal(self.location_keys, other.location_keys)
            and np.all(np.abs(self.masses - other.masses) <= tol * scale)
        )


@dataclass(frozen=True)
class SignedDecomposition:
    """Jordan-style decomposition of a pair (xi, eta) of measures.

    xi = common + positive and eta = common + negative hold atomwise exactly,
    and positive/negative have disjoint atom locations.
    """

    positive_part: DiscreteMeasure
    negative_part: DiscreteMeasure
    common_part: DiscreteMeasure

    def __post_init__(self) -> None:
        if not mutually_singular(self.positive_part, self.negative_part):
            raise ValueError("positive and negative parts share atom locations")


def _require_same_domain(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if mu.domain != nu.domain:
        raise DomainMismatchError(f"domains differ: {mu.domain} vs {nu.domain}")


def intensity(mu: DiscreteMeasure) -> float:
    """Mass per unit volume."""
    return mu.total_mass / mu.domain.volume


def shift(mu: DiscreteMeasure, x: Sequence[float]) -> DiscreteMeasure:
    """Translate every atom by x, wrapping around the torus."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (mu.domain.dim,):
        raise ValueError(f"shift vector must have dim {mu.domain.dim}")
    if len(mu) == 0:
        return mu
    return DiscreteMeasure(mu.domain, mu.domain.wrap(mu.points + x), mu.masses)


def jordan_decompose(xi: DiscreteMeasure, eta: DiscreteMeasure) -> SignedDecomposition:
    """Atomwise Jordan decomposition of xi - eta plus the common part xi ^ eta."""
    _require_same_domain(xi, eta)
    dom = xi.domain
    eta_index = eta._key_index
    pos_pts, pos_ms = [], []
    com_pts, com_ms = [], []
    neg_pts, neg_ms = [], []
    matched = np.zeros(len(eta), dtype=bool)
    for i, key in enumerate(map(tuple, xi.location_keys)):
        mx = xi.masses[i]
        j = eta_index.get(key)
        me = eta.masses[j] if j is not None else 0.0
        if j is not None:
            matched[j] = True
            c = min(mx, me)
            if c > 0:
                com_pts.append(xi.points[i])
                com_ms.append(c)
        if mx > me:
            pos_pts.append(xi.points[i])
            pos_ms.append(mx - me)
        elif me > mx:
            neg_pts.append(eta.points[j])
            neg_ms.append(me - mx)
    for j in np.flatnonzero(~matched):
        neg_pts.append(eta.points[j])
        neg_ms.append(eta.masses[j])
    build = lambda p, m: (
        DiscreteMeasure(dom, np.array(p), np.array(m)) if p else DiscreteMeasure.empty(dom)
    )
    return SignedDecomposition(build(pos_pts, pos_ms), build(neg_pts, neg_ms), build(com_pts, com_ms))


def lebesgue_decompose(
    eta: DiscreteMeasure, xi: DiscreteMeasure
) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Split eta into the part carried by xi's support and the singular rest."""
    _require_same_domain(eta, xi)
    if len(eta) == 0:
        return eta, eta
    xi_keys = set(map(tuple, xi.location_keys))
    on_xi = np.array([tuple(k) in xi_keys for k in eta.location_keys], dtype=bool)
    return restrict(eta, on_xi), restrict(eta, ~on_xi)


def mutually_singular(mu: DiscreteMeasure, nu: DiscreteMeasure) -> bool:
    """True iff the atom location sets are disjoint."""
    _require_same_domain(mu, nu)
    if len(mu) == 0 or len(nu) == 0:
        return True
    small, large = (mu, nu) if len(mu) <= len(nu) else (nu, mu)
    index = large._key_index
    return not any(tuple(k) in index for k in small.location_keys)


def restrict(mu: DiscreteMeasure, mask: np.ndarray) -> DiscreteMeasure:
    """Sub-measure carried by the atoms selected by a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(mu),):
        raise ValueError("mask length mismatch")
    if mask.all():
        return mu
    return DiscreteMeasure(mu.domain, mu.points[mask], mu.masses[mask])


# ---------------------------------------------------------------------------
# text serialization: header `domain d L n`, one `x1 ... xd mass` line per atom
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def measure_to_text(mu: DiscreteMeasure) -> str:
    dom = mu.domain
    lines = [f"domain {dom.dim} {_fmt(dom.side)} {dom.resolution}"]
    for p, m in zip(mu.points, mu.masses):
        lines.append(" ".join(_fmt(c) for c in p) + " " + _fmt(m))
    return "\n".join(lines) + "\n"


def measure_from_text(text: str) -> DiscreteMeasure:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("domain"):
        raise ValueError("missing `domain d L n` header")
    _, d, side, n = lines[0].split()
    dom = PeriodicDomain(int(d), float(side), int(n))
    pts, ms = [], []
    for ln in lines[1:]:
        vals = [float(v) for v in ln.split()]
        if len(vals) != dom.dim + 1:
            raise ValueError(f"atom line has {len(vals)} fields, expected {dom.dim + 1}")
        pts.append(vals[: dom.dim])
        ms.append(vals[dom.dim])
    if not pts:
        return DiscreteMeasure.empty(dom)
    return DiscreteMeasure(dom, np.array(pts), np.array(ms))


def write_measure(path_or_file: str | TextIO, mu: DiscreteMeasure) -> None:
    if isinstance(path_or_file, (str, bytes)):
        with open(path_or_file, "w") as fh:
            fh.write(measure_to_text(mu))
    else:
        path_or_file.write(measure_to_text(mu))


def read_measure(path_or_file: str | TextIO) -> DiscreteMeasure:
    if isinstance(path_or_file, (str, bytes)):
        with open(path_or_file) as fh:
            return measure_from_text(fh.read())
    return measure_from_text(path_or_file.read())
