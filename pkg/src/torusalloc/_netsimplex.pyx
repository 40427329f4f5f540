# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled primal network simplex for uncapacitated transportation problems.

Twin of _netsimplex_py.solve: identical pivot sequence and floating-point
operation order, so flows and potentials agree bitwise with the pure-Python
backend.  See that module for the algorithm description.
"""

import math

import numpy as np

BACKEND = "compiled"

DEF SENTINEL = -1


def solve(
    n_nodes,
    demand,
    arc_src,
    arc_dst,
    arc_cost,
    double eps,
    max_pivots=0,
):
    cdef Py_ssize_t n = int(n_nodes)
    cdef Py_ssize_t e = len(arc_src)
    cdef Py_ssize_t root = n

    demand_arr = np.ascontiguousarray(demand, dtype=np.float64)
    src_arr = np.ascontiguousarray(arc_src, dtype=np.int64)
    dst_arr = np.ascontiguousarray(arc_dst, dtype=np.int64)
    cost_arr = np.ascontiguousarray(arc_cost, dtype=np.float64)

    cdef double[::1] dem = demand_arr

    S_arr = np.empty(e + n, dtype=np.int64)
    T_arr = np.empty(e + n, dtype=np.int64)
    S_arr[:e] = src_arr
    T_arr[:e] = dst_arr
    cdef long long[::1] S = S_arr
    cdef long long[::1] T = T_arr

    cdef Py_ssize_t v
    for v in range(n):
        if dem[v] > 0:
            S[e + v] = root
            T[e + v] = v
        else:
            S[e + v] = v
            T[e + v] = root

    cdef double abs_cost_sum = float(np.abs(cost_arr).sum()) if e else 0.0
    cdef double max_abs_dem = float(np.abs(demand_arr).max()) if n else 0.0
    cdef double faux = 3.0 * max(abs_cost_sum, max_abs_dem, 1.0)

    C_arr = np.empty(e + n, dtype=np.float64)
    C_arr[:e] = cost_arr
    C_arr[e:] = faux
    x_arr = np.zeros(e + n, dtype=np.float64)
    x_arr[e:] = np.abs(demand_arr)
    pi_arr = np.empty(n + 1, dtype=np.float64)
    pi_arr[:n] = np.where(demand_arr <= 0, faux, -faux)
    pi_arr[n] = 0.0
    cdef double[::1] C = C_arr
    cdef double[::1] x = x_arr
    cdef double[::1] pi = pi_arr

    parent_arr = np.full(n + 1, root, dtype=np.int64)
    parent_arr[root] = SENTINEL
    edge_arr = np.arange(e, e + n + 1, dtype=np.int64)
    edge_arr[root] = SENTINEL
    size_arr = np.ones(n + 1, dtype=np.int64)
    size_arr[root] = n + 1
    nxt_arr = np.empty(n + 1, dtype=np.int64)
    nxt_arr[: n - 1] = np.arange(1, n)
    nxt_arr[n - 1] = root
    nxt_arr[root] = 0
    prv_arr = np.empty(n + 1, dtype=np.int64)
    prv_arr[0] = root
    prv_arr[1:n] = np.arange(n - 1)
    prv_arr[root] = n - 1
    last_arr = np.arange(n + 1, dtype=np.int64)
    last_arr[root] = n - 1

    cdef long long[::1] parent = parent_arr
    cdef long long[::1] edge = edge_arr
    cdef long long[::1] size = size_arr
    cdef long long[::1] nxt = nxt_arr
    cdef long long[::1] prv = prv_arr
    cdef long long[::1] last = last_arr

    cdef long long pivot_cap
    if max_pivots and int(max_pivots) > 0:
        pivot_cap = int(max_pivots)
    else:
        pivot_cap = 200 * (e + n) + 10000

    cdef Py_ssize_t block = <Py_ssize_t>math.ceil(math.sqrt(e)) if e else 0
    cdef Py_ssize_t n_blocks = (e + block - 1) // block if e else 0
    cdef Py_ssize_t block_start = 0
    cdef long long pivots = 0
    cdef Py_ssize_t misses = 0

    # cycle buffers: a tree path has at most n + 1 nodes per side
    Wn_arr = np.empty(2 * n + 4, dtype=np.int64)
    We_arr = np.empty(2 * n + 4, dtype=np.int64)
    tmp_arr = np.empty(2 * n + 4, dtype=np.int64)
    cdef long long[::1] Wn = Wn_arr
    cdef long long[::1] We = We_arr
    cdef long long[::1] tmp = tmp_arr

    cdef Py_ssize_t stop_at, count, ii, rel, k, t_pos, cyc_len
    cdef long long i, j, p, q, a, b, w, sa, sb, s_node, t_node, e_id
    cdef long long size_t_, prev_t, last_t, next_last_t
    cdef long long size_p, last_p, prev_q, last_q, next_last_q, next_last_p, size_q
    cdef long long anc, child, stop, pos_i, pos_j
    cdef double red, best_red, r, best, d
    cdef double INF = math.inf

    while e and misses < n_blocks:
        # ---- entering arc: Dantzig rule within the cyclic block ----
        stop_at = block_start + block
        i = SENTINEL
        best_red = 0.0
        if stop_at <= e:
            for ii in range(block_start, stop_at):
                red = (C[ii] - pi[S[ii]]) + pi[T[ii]]
                if i == SENTINEL or red < best_red:
                    best_red = red
                    i = ii
        else:
            stop_at -= e
            for ii in range(block_start, e):
                red = (C[ii] - pi[S[ii]]) + pi[T[ii]]
                if i == SENTINEL or red < best_red:
                    best_red = red
                    i = ii
            for ii in range(stop_at):
                red = (C[ii] - pi[S[ii]]) + pi[T[ii]]
                if i == SENTINEL or red < best_red:
                    best_red = red
                    i = ii
        block_start = stop_at
        if best_red >= -eps:
            misses += 1
            continue
        misses = 0
        p = S[i]
        q = T[i]

        # ---- cycle through the tree: apex = lowest common ancestor ----
        a = p
        b = q
        sa = size[a]
        sb = size[b]
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

        # path p -> w (reversed into Wn/We), entering arc, path q -> w
        count = 0
        a = p
        tmp[count] = a
        count += 1
        while a != w:
            a = parent[a]
            tmp[count] = a
            count += 1
        for k in range(count):
            Wn[k] = tmp[count - 1 - k]
        cyc_len = count
        count = 0
        a = p
        while a != w:
            tmp[count] = edge[a]
            count += 1
            a = parent[a]
        for k in range(count):
            We[k] = tmp[count - 1 - k]
        We[count] = i
        count += 1
        a = q
        while a != w:
            Wn[cyc_len] = a
            cyc_len += 1
            We[count] = edge[a]
            count += 1
            a = parent[a]
        # count == cyc_len == number of cycle arcs == number of cycle nodes

        # ---- leaving arc: first minimal residual scanning backwards ----
        j = We[cyc_len - 1]
        s_node = Wn[cyc_len - 1]
        best = INF if S[j] == s_node else x[j]
        for t_pos in range(cyc_len - 2, -1, -1):
            e_id = We[t_pos]
            r = INF if S[e_id] == Wn[t_pos] else x[e_id]
            if r < best:
                best = r
                j = e_id
                s_node = Wn[t_pos]
        t_node = T[j] if S[j] == s_node else S[j]

        if best > 0:
            for t_pos in range(cyc_len):
                e_id = We[t_pos]
                if S[e_id] == Wn[t_pos]:
                    x[e_id] += best
                else:
                    x[e_id] -= best

        if i != j:
            if parent[t_node] != s_node:
                a = s_node
                s_node = t_node
                t_node = a
            pos_i = 0
            while We[pos_i] != i:
                pos_i += 1
            pos_j = 0
            while We[pos_j] != j:
                pos_j += 1
            if pos_i > pos_j:
                a = p
                p = q
                q = a

            # remove (s_node, t_node) from the tree
            size_t_ = size[t_node]
            prev_t = prv[t_node]
            last_t = last[t_node]
            next_last_t = nxt[last_t]
            parent[t_node] = SENTINEL
            edge[t_node] = SENTINEL
            nxt[prev_t] = next_last_t
            prv[next_last_t] = prev_t
            nxt[last_t] = t_node
            prv[t_node] = last_t
            a = s_node
            while a != SENTINEL:
                size[a] -= size_t_
                if last[a] == last_t:
                    last[a] = prev_t
                a = parent[a]

            # make q the root of its subtree: reverse the ancestor chain
            count = 0
            a = q
            while a != SENTINEL:
                tmp[count] = a
                count += 1
                a = parent[a]
            for k in range(count - 1):
                # rotate edge between tmp[count-1-k] (p) and tmp[count-2-k] (q2)
                anc = tmp[count - 1 - k]
                child = tmp[count - 2 - k]
                size_p = size[anc]
                last_p = last[anc]
                prev_q = prv[child]
                last_q = last[child]
                next_last_q = nxt[last_q]
                parent[anc] = child
                parent[child] = SENTINEL
                edge[anc] = edge[child]
                edge[child] = SENTINEL
                size[anc] = size_p - size[child]
                size[child] = size_p
                nxt[prev_q] = next_last_q
                prv[next_last_q] = prev_q
                nxt[last_q] = child
                prv[child] = last_q
                if last_p == last_q:
                    last[anc] = prev_q
                    last_p = prev_q
                prv[anc] = last_q
                nxt[last_q] = anc
                nxt[last_p] = child
                prv[child] = last_p
                last[child] = last_p

            # add entering arc (p, q) with q the root of its subtree
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
            a = p
            while a != SENTINEL:
                size[a] += size_q
                if last[a] == last_p:
                    last[a] = last_q
                a = parent[a]

            # shift potentials across the reattached subtree
            if q == T[i]:
                d = (pi[p] - C[i]) - pi[q]
            else:
                d = (pi[p] + C[i]) - pi[q]
            a = q
            stop = last[q]
            while True:
                pi[a] += d
                if a == stop:
                    break
                a = nxt[a]

        pivots += 1
        if pivots > pivot_cap:
            raise RuntimeError("network simplex exceeded pivot limit (cycling?)")

    residual_art = float(np.abs(x_arr[e:]).sum())
    return x_arr[:e].copy(), pi_arr[:n].copy(), residual_art, int(pivots)
