"""Pure-Python primal network simplex for uncapacitated transportation problems.

Reference implementation of the kernel also provided as a compiled extension
(_netsimplex.pyx).  Both backends perform the identical pivot sequence with
identical floating-point operation order, so their outputs agree bitwise; the
compiled twin is simply faster.  Block-Dantzig entering-arc search plus the
leaving-arc rule on a strongly feasible initial tree (all nodes rooted at an
artificial node) prevent cycling under degeneracy.

Node convention: indices 0..n-1 are problem nodes, n is the artificial root.
``demand[v] > 0`` means node v receives flow, ``< 0`` means it sends.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["solve", "BACKEND"]

BACKEND = "python"


def solve(
    n_nodes: int,
    demand: np.ndarray,
    arc_src: np.ndarray,
    arc_dst: np.ndarray,
    arc_cost: np.ndarray,
    eps: float,
    max_pivots: int = 0,
) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Minimize sum(cost * flow) subject to node balance, flow >= 0.

    Returns (flow over real arcs, node potentials, residual flow left on
    artificial arcs, pivot count).  Potentials satisfy
    cost - pi[src] + pi[dst] >= -eps on every real arc at termination.
    """
    n = int(n_nodes)
    e = len(arc_src)
    root = n
    demand = np.asarray(demand, dtype=float)

    S = np.empty(e + n, dtype=np.int64)
    T = np.empty(e + n, dtype=np.int64)
    S[:e] = arc_src
    T[:e] = arc_dst
    recv = demand > 0
    S[e:] = np.where(recv, root, np.arange(n))
    T[e:] = np.where(recv, np.arange(n), root)

    # big-M cost for artificial arcs: must exceed any simple-path cost, and
    # stay small enough that ulp(faux) is far below the pivot tolerance
    # (potentials carry faux-sized terms; their rounding noise must not look
    # like a negative reduced cost, which would cycle forever)
    max_abs_cost = float(np.abs(arc_cost).max()) if e else 0.0
    max_abs_dem = float(np.abs(demand).max()) if n else 0.0
    faux = 3.0 * max(max_abs_cost * (n + 1), max_abs_dem, 1.0)
    eps = max(eps, 128.0 * 2.220446049250313e-16 * faux)

    C = np.empty(e + n)
    C[:e] = arc_cost
    C[e:] = faux
    x = np.zeros(e + n)
    x[e:] = np.abs(demand)

    pi = np.empty(n + 1)
    pi[:n] = np.where(demand <= 0, faux, -faux)
    pi[root] = 0.0

    parent = np.full(n + 1, root, dtype=np.int64)
    parent[root] = -1
    edge = np.arange(e, e + n + 1, dtype=np.int64)
    edge[root] = -1
    size = np.ones(n + 1, dtype=np.int64)
    size[root] = n + 1
    nxt = np.empty(n + 1, dtype=np.int64)
    nxt[: n - 1] = np.arange(1, n)
    nxt[n - 1] = root
    nxt[root] = 0
    prv = np.empty(n + 1, dtype=np.int64)
    prv[0] = root
    prv[1:n] = np.arange(n - 1)
    prv[root] = n - 1
    last = np.arange(n + 1, dtype=np.int64)
    last[root] = n - 1

    if max_pivots <= 0:
        max_pivots = 500 * (n + 1) + 100 * int(math.isqrt(e + 1)) + 10000

    block = int(math.ceil(math.sqrt(e))) if e else 0
    n_blocks = (e + block - 1) // block if e else 0
    block_start = 0
    pivots = 0

    def find_cycle(i, p, q):
        # lowest common ancestor of p and q via subtree sizes
        a, b = p, q
        sa, sb = size[a], size[b]
        while True:
            while sa < sb:
                a = parent[a]
                sa = size[a]
            while sa > sb:
                b = parent[b]
                sb = size[b]
            if sa == sb:
                if a != b:
                    a = parent[a]
                    sa = size[a]
                    b = parent[b]
                    sb = size[b]
                else:
                    w = a
                    break
        # path p -> w, reversed, then entering arc, then path q -> w
        Wn = [p]
        We = []
        v = p
        while v != w:
            We.append(edge[v])
            v = parent[v]
            Wn.append(v)
        Wn.reverse()
        We.reverse()
        We.append(i)
        v = q
        WnR = [q]
        WeR = []
        while v != w:
            WeR.append(edge[v])
            v = parent[v]
            WnR.append(v)
        del WnR[-1]
        Wn += WnR
        We += WeR
        return Wn, We

    def residual(j, p):
        # residual capacity of arc j in the direction away from node p
        return math.inf if S[j] == p else x[j]

    def remove_edge(s, t):
        size_t = size[t]
        prev_t = prv[t]
        last_t = last[t]
        next_last_t = nxt[last_t]
        parent[t] = -1
        edge[t] = -1
        nxt[prev_t] = next_last_t
        prv[next_last_t] = prev_t
        nxt[last_t] = t
        prv[t] = last_t
        while s != -1:
            size[s] -= size_t
            if last[s] == last_t:
                last[s] = prev_t
            s = parent[s]

    def make_root(q):
        ancestors = []
        v = q
        while v != -1:
            ancestors.append(v)
            v = parent[v]
        ancestors.reverse()
        for p, q2 in zip(ancestors, ancestors[1:]):
            size_p = size[p]
            last_p = last[p]
            prev_q = prv[q2]
            last_q = last[q2]
            next_last_q = nxt[last_q]
            parent[p] = q2
            parent[q2] = -1
            edge[p] = edge[q2]
            edge[q2] = -1
            size[p] = size_p - size[q2]
            size[q2] = size_p
            nxt[prev_q] = next_last_q
            prv[next_last_q] = prev_q
            nxt[last_q] = q2
            prv[q2] = last_q
            if last_p == last_q:
                last[p] = prev_q
                last_p = prev_q
            prv[p] = last_q
            nxt[last_q] = p
            nxt[last_p] = q2
            prv[q2] = last_p
            last[q2] = last_p

    def add_edge(i, p, q):
        last_p = last[p]
        next_last_p = nxt[last_p]
        size_q = size[q]
        last_q = last[q]
        parent[q] = p
        edge[q] = i
        nxt[last_p] = q
        prv[q] = last_p
        prv[next_last_p] = last_q
        nxt[last_q] = next_last_p
        while p != -1:
            size[p] += size_q
            if last[p] == last_p:
                last[p] = last_q
            p = parent[p]

    def update_potentials(i, p, q):
        if q == T[i]:
            d = (pi[p] - C[i]) - pi[q]
        else:
            d = (pi[p] + C[i]) - pi[q]
        v = q
        stop = last[q]
        while True:
            pi[v] += d
            if v == stop:
                break
            v = nxt[v]

    # pivot loop: Dantzig rule within cyclic blocks, Bland rule across blocks
    misses = 0
    while e and misses < n_blocks:
        stop_at = block_start + block
        if stop_at <= e:
            idx = np.arange(block_start, stop_at)
        else:
            stop_at -= e
            idx = np.concatenate([np.arange(block_start, e), np.arange(stop_at)])
        block_start = stop_at
        red = (C[idx] - pi[S[idx]]) + pi[T[idx]]
        rel = int(np.argmin(red))
        if red[rel] >= -eps:
            misses += 1
            continue
        misses = 0
        i = int(idx[rel])
        p, q = int(S[i]), int(T[i])

        Wn, We = find_cycle(i, p, q)
        # leaving arc: first minimal residual scanning the cycle backwards
        j = We[-1]
        s_node = Wn[-1]
        best = residual(j, s_node)
        for t_pos in range(len(We) - 2, -1, -1):
            r = residual(We[t_pos], Wn[t_pos])
            if r < best:
                best = r
                j = We[t_pos]
                s_node = Wn[t_pos]
        t_node = int(T[j]) if S[j] == s_node else int(S[j])
        # augment along the cycle
        if best > 0:
            for e_id, v in zip(We, Wn):
                if S[e_id] == v:
                    x[e_id] += best
                else:
                    x[e_id] -= best
        if i != j:
            if parent[t_node] != s_node:
                s_node, t_node = t_node, s_node
            if We.index(i) > We.index(j):
                p, q = q, p
            remove_edge(s_node, t_node)
            make_root(q)
            add_edge(i, p, q)
            update_potentials(i, p, q)
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("network simplex exceeded pivot limit (cycling?)")

    residual_art = float(np.abs(x[e:]).sum())
    return x[:e].copy(), pi[:n].copy(), residual_art, pivots
