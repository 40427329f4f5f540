"""Exact semicoupling (partial optimal transport) solver on the torus.

Solves  min sum theta(dist(x_i, y_j)) q_ij  over plans q with row sums <= mu
and column sums = nu, by routing the surplus source mass to a zero-cost
overflow sink and running the network simplex on the balanced instance.

Determinism contract: measures are canonically sorted, and among optimal
plans a second simplex pass restricted to the optimal face minimizes a
tie-break objective that depends only on the displacement geometry, so the
output is a function of the unordered atom configuration and commutes with
torus translations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .costs import ConcaveCost, eval_cost
from .domain import DiscreteMeasure, DomainMismatchError
from .mincostflow import solve_transportation
from .plans import AllocationMap, SplitReport, TransportPlan

__all__ = [
    "SolverOptions",
    "InfeasibleSemicouplingError",
    "OracleSizeError",
    "solve_semicoupling",
    "brute_force_oracle",
    "indicator_fraction",
    "extract_map",
    "collapse_to_map",
    "check_cyclical_monotonicity",
]

log = logging.getLogger(__name__)

# fixed-point quantum (fraction of L) for displacement tie keys
_TIE_QUANTUM = 1e-6


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-9
    tie_break: str = "lexicographic_displacement"  # or "none"
    oracle_limit: int = 8
    dense_limit: int = 2000  # per-side atom count above which arcs are pruned
    prune_supply_factor: float = 8.0  # candidate supply per target, x demand

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.tie_break not in ("lexicographic_displacement", "none"):
            raise ValueError(f"unknown tie_break rule {self.tie_break!r}")


DEFAULT_OPTIONS = SolverOptions()


class InfeasibleSemicouplingError(ValueError):
    """Source mass is insufficient to cover the target measure."""


class OracleSizeError(ValueError):
    """Instance too large for exhaustive vertex enumeration."""


def _tie_keys(domain, src_pts: np.ndarray, dst_pts: np.ndarray) -> np.ndarray:
    """Scalar tie-break key per arc, a lexicographic scalarization in [0, 1).

    Keys depend only on the quantized minimum-image displacement, so they are
    invariant under torus translations and under relabeling of the atoms.
    """
    v = domain.displacement(src_pts, dst_pts)
    quantum = _TIE_QUANTUM * domain.side
    u = np.round(v / quantum)
    half_range = int(np.ceil(0.5 / _TIE_QUANTUM)) + 2
    base = float(2 * half_range + 1)
    key = np.zeros(len(u))
    for k in range(domain.dim):
        key = key * base + (u[:, k] + half_range)
    return key / base**domain.dim


def _arc_candidates(mu, nu, opts: SolverOptions):
    """Arc list (src, dst) for the bipartite problem, dense or distance-pruned."""
    m, k = len(mu), len(nu)
    if max(m, k) <= opts.dense_limit:
        src, dst = np.divmod(np.arange(m * k, dtype=np.int64), k)
        return src, dst
    # prune: per target, nearest sources whose cumulative supply covers a
    # multiple of its demand; the reduced-cost audit below repairs any miss
    from scipy.spatial import cKDTree

    tree = cKDTree(mu.points, boxsize=mu.domain.side)
    src_list, dst_list = [], []
    budget = opts.prune_supply_factor
    guess = min(m, max(16, int(budget * m * nu.max_atom_mass / max(mu.total_mass, 1e-300)) + 8))
    for j in range(k):
        need = budget * nu.masses[j]
        n_query = guess
        while True:
            dists, idx = tree.query(nu.points[j], k=min(n_query, m))
            idx = np.atleast_1d(idx)
            cum = np.cumsum(mu.masses[idx])
            enough = np.searchsorted(cum, need)
            if enough < len(idx) or n_query >= m:
                take = idx[: min(enough + 1, len(idx))]
                break
            n_query *= 2
        src_list.append(take.astype(np.int64))
        dst_list.append(np.full(len(take), j, dtype=np.int64))
    src = np.concatenate(src_list)
    dst = np.concatenate(dst_list)
    order = np.lexsort((dst, src))
    return src[order], dst[order]


def _audit_and_extend(domain, mu, nu, theta, src, dst, sol, opts):
    """Check dual feasibility over all source-target pairs; return violated arcs."""
    m, k = len(mu), len(nu)
    tol = opts.tolerance
    pot_src = sol.potentials[:m]
    pot_dst = sol.potentials[m : m + k]
    present = set(zip(src.tolist(), dst.tolist()))
    viol_src, viol_dst = [], []
    block = max(1, int(2e6 // max(k, 1)))
    for lo in range(0, m, block):
        hi = min(lo + block, m)
        dmat = domain.distance_matrix(mu.points[lo:hi], nu.points)
        red = eval_cost(theta, dmat) - pot_src[lo:hi, None] + pot_dst[None, :]
        bad = np.argwhere(red < -tol)
        for bi, bj in bad:
            pair = (int(bi) + lo, int(bj))
            if pair not in present:
                viol_src.append(pair[0])
                viol_dst.append(pair[1])
    return np.array(viol_src, dtype=np.int64), np.array(viol_dst, dtype=np.int64)


def solve_semicoupling(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    theta: ConcaveCost,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> TransportPlan:
    """Optimal semicoupling: second marginal nu exactly, first marginal <= mu.

    Raises InfeasibleSemicouplingError when nu outweighs mu beyond tolerance.
    """
    if mu.domain != nu.domain:
        raise DomainMismatchError("semicoupling marginals live on different domains")
    domain = mu.domain
    mass_scale = max(1.0, mu.total_mass)
    surplus = mu.total_mass - nu.total_mass
    if surplus < -opts.tolerance * mass_scale:
        raise InfeasibleSemicouplingError(
            f"source mass {mu.total_mass} < target mass {nu.total_mass}"
        )
    if len(nu) == 0:
        return TransportPlan(mu, nu, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    m, k = len(mu), len(nu)
    src, dst = _arc_candidates(mu, nu, opts)
    dists = domain.distance(mu.points[src], nu.points[dst])
    cost = np.asarray(eval_cost(theta, dists), dtype=float)

    use_sink = surplus > opts.tolerance * mass_scale
    n_cols = k + 1 if use_sink else k
    demand = np.append(nu.masses, max(surplus, 0.0)) if use_sink else nu.masses
    if use_sink:
        sink_src = np.arange(m, dtype=np.int64)
        arc_src = np.concatenate([src, sink_src])
        arc_dst = np.concatenate([dst + m, np.full(m, m + k, dtype=np.int64)])
        arc_cost = np.concatenate([cost, np.zeros(m)])
    else:
        arc_src, arc_dst, arc_cost = src, dst + m, cost

    sol = solve_transportation(mu.masses, demand, arc_src, arc_dst, arc_cost)

    # audit: dual feasibility must hold over the full dense arc set
    for _ in range(8):
        viol_s, viol_d = _audit_and_extend(domain, mu, nu, theta, src, dst, sol, opts)
        if len(viol_s) == 0:
            break
        log.debug("arc pruning audit: adding %d violated arcs", len(viol_s))
        src = np.concatenate([src, viol_s])
        dst = np.concatenate([dst, viol_d])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        dists = domain.distance(mu.points[src], nu.points[dst])
        cost = np.asarray(eval_cost(theta, dists), dtype=float)
        if use_sink:
            arc_src = np.concatenate([src, sink_src])
            arc_dst = np.concatenate([dst + m, np.full(m, m + k, dtype=np.int64)])
            arc_cost = np.concatenate([cost, np.zeros(m)])
        else:
            arc_src, arc_dst, arc_cost = src, dst + m, cost
        sol = solve_transportation(mu.masses, demand, arc_src, arc_dst, arc_cost)
    else:
        raise RuntimeError("arc pruning audit failed to converge")

    flow = sol.flow
    primary_cost = float(np.dot(flow[: len(src)], cost))

    if opts.tie_break != "none":
        flow = _tie_break_pass(
            domain, mu, nu, src, dst, cost, arc_src, arc_dst, arc_cost, demand, sol,
            opts, primary_cost,
        )

    real = flow[: len(src)]
    keep = real > 1e-14 * mass_scale
    plan = TransportPlan(mu, nu, src[keep], dst[keep], real[keep])
    return plan


def _tie_break_pass(
    domain, mu, nu, src, dst, cost, arc_src, arc_dst, arc_cost, demand, sol, opts,
    primary_cost,
):
    """Re-optimize a displacement tie-break objective over the optimal face.

    Arcs with positive reduced cost cannot carry optimal flow; they get a
    prohibitive secondary cost.  The remaining face is re-solved with the
    lexicographic displacement keys so exact cost ties resolve identically
    regardless of atom labeling or torus translation.
    """
    face_tol = 1e-12 * (1.0 + float(np.max(cost)))
    red = sol.reduced_costs(arc_src, arc_dst, arc_cost)
    on_face = red <= face_tol
    keys = _tie_keys(domain, mu.points[src], nu.points[dst])
    BIG = 1e6
    n_real = len(src)
    sec_full = np.zeros(len(arc_cost))
    sec_full[:n_real] = keys
    sec_full[~on_face] = BIG
    sol2 = solve_transportation(mu.masses, demand, arc_src, arc_dst, sec_full)
    new_primary = float(np.dot(sol2.flow[:n_real], cost))
    if abs(new_primary - primary_cost) > opts.tolerance * max(1.0, abs(primary_cost), mu.total_mass):
        log.warning(
            "tie-break pass drifted primary cost by %.3e; keeping first-pass plan",
            new_primary - primary_cost,
        )
        return sol.flow
    return sol2.flow


# ---------------------------------------------------------------------------
# exhaustive oracle: enumerate transportation-polytope vertices
# ---------------------------------------------------------------------------


def brute_force_oracle(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    theta: ConcaveCost,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> tuple[float, list[TransportPlan]]:
    """Exact optimum by enumerating basic feasible solutions.

    Every vertex of the transportation polytope (with the overflow sink) is
    the unique flow on some spanning tree of the bipartite supply-demand
    graph; all spanning trees are enumerated, infeasible ones discarded, and
    the minimum cost with all distinct minimizing vertices returned.
    """
    if mu.domain != nu.domain:
        raise DomainMismatchError("oracle marginals live on different domains")
    if len(mu) + len(nu) > opts.oracle_limit:
        raise OracleSizeError(
            f"{len(mu)} + {len(nu)} atoms exceeds oracle_limit {opts.oracle_limit}"
        )
    mass_scale = max(1.0, mu.total_mass)
    surplus = mu.total_mass - nu.total_mass
    if surplus < -opts.tolerance * mass_scale:
        raise InfeasibleSemicouplingError("source mass below target mass")
    if len(nu) == 0:
        return 0.0, [TransportPlan(mu, nu, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))]

    m = len(mu)
    use_sink = surplus > opts.tolerance * mass_scale
    k = len(nu) + 1 if use_sink else len(nu)
    supplies = mu.masses
    demands = np.append(nu.masses, surplus) if use_sink else nu.masses
    dmat = mu.domain.distance_matrix(mu.points, nu.points)
    cost = np.zeros((m, k))
    cost[:, : len(nu)] = eval_cost(theta, dmat)

    tol = opts.tolerance
    edge_ids, flow_maps = _vertex_basis(m, k)
    signed = np.concatenate([supplies, -demands])
    # flow of every tree edge is a fixed signed sum of node balances
    flows_all = flow_maps.astype(float) @ signed
    feasible = np.all(flows_all >= -1e-12 * mass_scale, axis=1)
    if not np.any(feasible):
        raise InfeasibleSemicouplingError("no feasible vertex found")
    costs_all = np.sum(np.maximum(flows_all, 0.0) * cost.ravel()[edge_ids], axis=1)
    costs_all[~feasible] = np.inf
    best_cost = float(np.min(costs_all))
    optimal = np.flatnonzero(costs_all <= best_cost + tol)

    seen: dict[tuple, TransportPlan] = {}
    for t in optimal:
        fl = np.maximum(flows_all[t], 0.0)
        eids = edge_ids[t]
        keep = (fl > 1e-12 * mass_scale) & (eids % k < len(nu))
        i_idx = (eids[keep] // k).astype(np.int64)
        j_idx = (eids[keep] % k).astype(np.int64)
        order = np.lexsort((j_idx, i_idx))
        i_idx, j_idx, fv = i_idx[order], j_idx[order], fl[keep][order]
        sig = tuple(
            (int(a), int(b), round(float(v), 9)) for a, b, v in zip(i_idx, j_idx, fv)
        )
        if sig not in seen:
            seen[sig] = TransportPlan(mu, nu, i_idx, j_idx, fv)
    return best_cost, list(seen.values())


_VERTEX_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _vertex_basis(m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Spanning trees of K_{m,k} with their flow maps, cached per shape.

    Returns (edge_ids, flow_maps): edge_ids[t] lists the m+k-1 edges of tree
    t (edge (i, j) has id i*k + j); flow_maps[t, e, v] in {-1, 0, +1} gives
    the coefficient of node balance v ([supplies, -demands] order) in the
    flow on edge e, via the tree cut property.
    """
    shape = (m, k)
    if shape in _VERTEX_CACHE:
        return _VERTEX_CACHE[shape]
    n_nodes = m + k
    need = n_nodes - 1
    edges = [(i, m + j) for i in range(m) for j in range(k)]
    n_edges = len(edges)
    trees: list[tuple[int, ...]] = []
    chosen: list[int] = []
    chosen_deg = [0] * n_nodes

    def find(uf: list[int], v: int) -> int:
        while uf[v] != v:
            uf[v] = uf[uf[v]]
            v = uf[v]
        return v

    def backtrack(pos: int, uf: list[int], count: int) -> None:
        if count == need:
            trees.append(tuple(chosen))
            return
        if n_edges - pos < need - count:
            return
        u, v = edges[pos]
        ru, rv = find(uf, u), find(uf, v)
        if ru != rv:
            uf2 = list(uf)
            uf2[ru] = rv
            chosen.append(pos)
            chosen_deg[u] += 1
            chosen_deg[v] += 1
            backtrack(pos + 1, uf2, count + 1)
            chosen.pop()
            chosen_deg[u] -= 1
            chosen_deg[v] -= 1
        # excluding pos: a node whose last incident edge this was must
        # already be attached, otherwise no spanning tree can follow
        if pos == (u + 1) * k - 1 and chosen_deg[u] == 0:
            return
        if pos == (m - 1) * k + (v - m) and chosen_deg[v] == 0:
            return
        backtrack(pos + 1, uf, count)

    backtrack(0, list(range(n_nodes)), 0)

    n_trees = len(trees)
    edge_ids = np.array(trees, dtype=np.int64).reshape(n_trees, need)
    flow_maps = np.zeros((n_trees, need, n_nodes), dtype=np.int8)
    for t, tree in enumerate(trees):
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n_nodes)]
        for local, eid in enumerate(tree):
            u, v = edges[eid]
            adj[u].append((v, local))
            adj[v].append((u, local))
        # root at node 0; subtree membership gives the cut for each edge
        parent = [-1] * n_nodes
        parent_edge = [-1] * n_nodes
        order = [0]
        seen_nodes = [False] * n_nodes
        seen_nodes[0] = True
        for node in order:
            for nb, local in adj[node]:
                if not seen_nodes[nb]:
                    seen_nodes[nb] = True
                    parent[nb] = node
                    parent_edge[nb] = local
                    order.append(nb)
        # member[e, v] = 1 iff v lies in the subtree hanging below edge e:
        # each node contributes to every edge on its path to the root
        member = np.zeros((need, n_nodes), dtype=np.int8)
        for node in range(n_nodes):
            v = node
            while parent[v] >= 0:
                member[parent_edge[v], node] = 1
                v = parent[v]
        for local in range(need):
            u, v = edges[tree[local]]
            child_end = v if member[local, v] else u
            # flow = +sum(balance over subtree) if child end is a source,
            # -sum otherwise (balance vector is [supplies, -demands])
            sign = 1 if child_end < m else -1
            flow_maps[t, local] = sign * member[local]
    _VERTEX_CACHE[shape] = (edge_ids, flow_maps)
    return edge_ids, flow_maps


def indicator_fraction(plan: TransportPlan) -> float:
    """Fraction of source mass at partially used atoms (0 < used < full, banded)."""
    if plan.mu.total_mass == 0:
        return 0.0
    used = plan.row_sums()
    frac = used / plan.mu.masses
    partial = (frac > 1e-9) & (frac < 1 - 1e-9)
    return float(plan.mu.masses[partial].sum() / plan.mu.total_mass)


def extract_map(plan: TransportPlan) -> AllocationMap | SplitReport:
    """Read the plan as a map: each used source must feed a single target.

    Returns the AllocationMap (with f_i = used/mass) when the plan is
    map-representable, otherwise a SplitReport listing the split sources.
    """
    src, dst, mass = plan.src, plan.dst, plan.mass
    if len(src) == 0:
        return AllocationMap(plan.mu, np.zeros(0, np.int64), np.zeros((0, plan.domain.dim)), np.zeros(0))
    uniq, start = np.unique(src, return_index=True)
    counts = np.diff(np.append(start, len(src)))
    if np.all(counts == 1):
        used = mass
        fractions = used / plan.mu.masses[src]
        return AllocationMap(plan.mu, src, plan.nu.points[dst], fractions)
    split = counts > 1
    split_sources = tuple(int(s) for s in uniq[split])
    split_counts = tuple(int(c) for c in counts[split])
    split_mass = 0.0
    for s in split_sources:
        rows = src == s
        split_mass += float(mass[rows].sum() - mass[rows].max())
    return SplitReport(split_sources, split_counts, split_mass, len(plan.mu))


def collapse_to_map(plan: TransportPlan) -> tuple[AllocationMap, SplitReport | None]:
    """Force a plan into a map by sending each split source to its major target.

    The rerouted minor-share mass is the reported error budget; ties on the
    major share resolve to the smaller displacement tie key (deterministic
    and translation-covariant).
    """
    result = extract_map(plan)
    if isinstance(result, AllocationMap):
        return result, None
    report = result
    src, dst, mass = plan.src, plan.dst, plan.mass
    keys = _tie_keys(plan.domain, plan.mu.points[src], plan.nu.points[dst])
    idx_list, tgt_list, frac_list = [], [], []
    for s in np.unique(src):
        rows = np.flatnonzero(src == s)
        best = rows[0]
        for r in rows[1:]:
            if mass[r] > mass[best] + 1e-15 or (
                abs(mass[r] - mass[best]) <= 1e-15 and keys[r] < keys[best]
            ):
                best = r
        used = mass[rows].sum()
        idx_list.append(s)
        tgt_list.append(plan.nu.points[dst[best]])
        frac_list.append(min(used / plan.mu.masses[s], 1.0))
    amap = AllocationMap(
        plan.mu, np.array(idx_list, np.int64), np.array(tgt_list), np.array(frac_list)
    )
    return amap, report


def check_cyclical_monotonicity(
    plan: TransportPlan,
    theta: ConcaveCost,
    tol: float = 1e-9,
    exhaustive_limit: int = 1000,
    n_samples: int = 10000,
    seed: int = 0,
) -> tuple[bool, float]:
    """Pairwise swap test: theta(d11) + theta(d22) <= theta(d12) + theta(d21) + tol.

    Exhaustive over all entry pairs up to `exhaustive_limit` entries, sampled
    above that.  Returns (ok, worst violation).
    """
    n = len(plan.src)
    if n < 2:
        return True, 0.0
    pts_s = plan.mu.points[plan.src]
    pts_t = plan.nu.points[plan.dst]
    d_own = np.asarray(eval_cost(theta, plan.distances()))
    dom = plan.domain

    def gain(i_arr, j_arr):
        d12 = eval_cost(theta, dom.distance(pts_s[i_arr], pts_t[j_arr]))
        d21 = eval_cost(theta, dom.distance(pts_s[j_arr], pts_t[i_arr]))
        return (d_own[i_arr] + d_own[j_arr]) - (d12 + d21)

    worst = 0.0
    if n <= exhaustive_limit:
        ii, jj = np.triu_indices(n, k=1)
        worst = float(np.max(gain(ii, jj), initial=0.0))
    else:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, n, n_samples)
        jj = rng.integers(0, n, n_samples)
        mask = ii != jj
        worst = float(np.max(gain(ii[mask], jj[mask]), initial=0.0))
    return worst <= tol, worst
