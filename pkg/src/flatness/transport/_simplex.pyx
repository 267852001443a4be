# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled transportation simplex.

Same algorithm and pivoting order as ``_simplex_py``; see that module for
the description of the basis layout.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline i64 _find(i64[::1] parent, i64 a) noexcept nogil:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


cdef void _initial_basis(double[::1] a, double[::1] b, i64 m, i64 k,
                         i64[::1] order, double tol,
                         double[::1] s, double[::1] t,
                         char[::1] row_on, char[::1] col_on, i64[::1] parent,
                         i64[::1] bi, i64[::1] bj, double[::1] bx) noexcept nogil:
    cdef i64 N = m + k, nb = N - 1, mk = m * k
    cdef i64 n_row = m, n_col = k, cnt = 0, q, idx, i, j, ra, rb
    cdef double x
    for q in range(m):
        s[q] = a[q]
        row_on[q] = 1
    for q in range(k):
        t[q] = b[q]
        col_on[q] = 1
    for q in range(N):
        parent[q] = q
    for q in range(mk):
        if n_row == 0 or n_col == 0:
            break
        idx = order[q]
        i = idx // k
        j = idx - i * k
        if not (row_on[i] and col_on[j]):
            continue
        x = s[i] if s[i] < t[j] else t[j]
        s[i] -= x
        t[j] -= x
        bi[cnt] = i
        bj[cnt] = j
        bx[cnt] = x
        cnt += 1
        ra = _find(parent, i)
        rb = _find(parent, m + j)
        parent[ra] = rb
        if s[i] <= tol:
            row_on[i] = 0
            n_row -= 1
        if t[j] <= tol:
            col_on[j] = 0
            n_col -= 1
    if cnt < nb:
        for q in range(mk):
            idx = order[q]
            i = idx // k
            j = idx - i * k
            ra = _find(parent, i)
            rb = _find(parent, m + j)
            if ra != rb:
                parent[ra] = rb
                bi[cnt] = i
                bj[cnt] = j
                bx[cnt] = 0.0
                cnt += 1
                if cnt == nb:
                    break


cdef void _tree(i64 m, i64 k, i64 nb, i64[::1] bi, i64[::1] bj, double[:, ::1] C,
                i64[::1] start, i64[::1] fill, i64[::1] adj_node, i64[::1] adj_edge,
                i64[::1] par, i64[::1] pedge, i64[::1] depth, double[::1] pot,
                char[::1] seen, i64[::1] queue) noexcept nogil:
    cdef i64 N = m + k, e, u, v, q, head, tail
    for q in range(N + 1):
        start[q] = 0
    for e in range(nb):
        start[bi[e] + 1] += 1
        start[m + bj[e] + 1] += 1
    for q in range(N):
        start[q + 1] += start[q]
    for q in range(N):
        fill[q] = start[q]
        seen[q] = 0
        par[q] = -1
        pedge[q] = -1
    for e in range(nb):
        u = bi[e]
        v = m + bj[e]
        adj_node[fill[u]] = v
        adj_edge[fill[u]] = e
        fill[u] += 1
        adj_node[fill[v]] = u
        adj_edge[fill[v]] = e
        fill[v] += 1
    seen[0] = 1
    depth[0] = 0
    pot[0] = 0.0
    queue[0] = 0
    head = 0
    tail = 1
    while head < tail:
        u = queue[head]
        head += 1
        for q in range(start[u], start[u + 1]):
            v = adj_node[q]
            if seen[v]:
                continue
            seen[v] = 1
            e = adj_edge[q]
            par[v] = u
            pedge[v] = e
            depth[v] = depth[u] + 1
            pot[v] = C[bi[e], bj[e]] - pot[u]
            queue[tail] = v
            tail += 1


def solve(double[::1] a, double[::1] b, double[:, ::1] C, i64[::1] order,
          bint dantzig=False, i64 max_iter=-1):
    """Run the simplex.  Returns ``(bi, bj, bx, u, v, iterations)``."""
    cdef i64 m = C.shape[0], k = C.shape[1]
    cdef i64 N = m + k, nb = N - 1, mk = m * k
    cdef double cmax = 0.0, asum = 0.0, bsum = 0.0
    cdef i64 q, r, c
    for r in range(m):
        asum += a[r]
        for c in range(k):
            if fabs(C[r, c]) > cmax:
                cmax = fabs(C[r, c])
    for c in range(k):
        bsum += b[c]
    cdef double tol = 1e-14 * (asum if asum > bsum else bsum)
    cdef double eps = 1e-13 * cmax

    bi_arr = np.zeros(nb, dtype=np.int64)
    bj_arr = np.zeros(nb, dtype=np.int64)
    bx_arr = np.zeros(nb, dtype=np.float64)
    cdef i64[::1] bi = bi_arr, bj = bj_arr
    cdef double[::1] bx = bx_arr
    cdef double[::1] s = np.empty(m), t = np.empty(k)
    cdef char[::1] row_on = np.empty(m, dtype=np.int8), col_on = np.empty(k, dtype=np.int8)
    cdef i64[::1] parent = np.empty(N, dtype=np.int64)
    cdef i64[::1] start = np.empty(N + 1, dtype=np.int64), fill = np.empty(N, dtype=np.int64)
    cdef i64[::1] adj_node = np.empty(2 * nb + 1, dtype=np.int64)
    cdef i64[::1] adj_edge = np.empty(2 * nb + 1, dtype=np.int64)
    cdef i64[::1] par = np.empty(N, dtype=np.int64), pedge = np.empty(N, dtype=np.int64)
    cdef i64[::1] depth = np.empty(N, dtype=np.int64), queue = np.empty(N, dtype=np.int64)
    pot_arr = np.zeros(N)
    cdef double[::1] pot = pot_arr
    cdef char[::1] seen = np.empty(N, dtype=np.int8)
    cdef i64[::1] side_a = np.empty(N, dtype=np.int64), side_b = np.empty(N, dtype=np.int64)

    if max_iter < 0:
        max_iter = 50 * N * N + 1000
    cdef i64 block = mk
    if not dantzig:
        block = <i64> sqrt(<double> mk)
        if block < 64:
            block = 64 if mk > 64 else mk
    cdef i64 bland_after = 2 * N
    cdef i64 pos = 0, degenerate = 0, it = 0, enter, scanned, end, best, nxt
    cdef i64 i, j, p, pp, na, nbb, e, leave, leave_key, key
    cdef double rc, best_rc, theta, x
    cdef bint capped = False

    with nogil:
        _initial_basis(a, b, m, k, order, tol, s, t, row_on, col_on, parent, bi, bj, bx)
        while True:
            _tree(m, k, nb, bi, bj, C, start, fill, adj_node, adj_edge,
                  par, pedge, depth, pot, seen, queue)
            enter = -1
            if degenerate > bland_after:
                for q in range(mk):
                    i = q // k
                    j = q - i * k
                    rc = C[i, j] - pot[i] - pot[m + j]
                    if rc < -eps:
                        enter = q
                        break
            else:
                scanned = 0
                while scanned < mk:
                    end = pos + block
                    if end > mk:
                        end = mk
                    best = -1
                    best_rc = INFINITY
                    for q in range(pos, end):
                        i = q // k
                        j = q - i * k
                        rc = C[i, j] - pot[i] - pot[m + j]
                        if rc < best_rc:
                            best_rc = rc
                            best = q
                    scanned += end - pos
                    nxt = 0 if end == mk else end
                    if best_rc < -eps:
                        enter = best
                        pos = nxt
                        break
                    pos = nxt
            if enter < 0:
                break
            it += 1
            if it > max_iter:
                capped = True
                break
            i = enter // k
            j = enter - i * k
            p = i
            pp = m + j
            na = 0
            nbb = 0
            while depth[p] > depth[pp]:
                side_a[na] = pedge[p]
                na += 1
                p = par[p]
            while depth[pp] > depth[p]:
                side_b[nbb] = pedge[pp]
                nbb += 1
                pp = par[pp]
            while p != pp:
                side_a[na] = pedge[p]
                na += 1
                p = par[p]
                side_b[nbb] = pedge[pp]
                nbb += 1
                pp = par[pp]
            theta = INFINITY
            leave = -1
            leave_key = -1
            for q in range(0, na, 2):
                e = side_a[q]
                x = bx[e]
                key = bi[e] * k + bj[e]
                if x < theta or (x == theta and key < leave_key):
                    theta = x
                    leave = e
                    leave_key = key
            for q in range(0, nbb, 2):
                e = side_b[q]
                x = bx[e]
                key = bi[e] * k + bj[e]
                if x < theta or (x == theta and key < leave_key):
                    theta = x
                    leave = e
                    leave_key = key
            for q in range(na):
                e = side_a[q]
                if q % 2 == 0:
                    bx[e] -= theta
                else:
                    bx[e] += theta
            for q in range(nbb):
                e = side_b[q]
                if q % 2 == 0:
                    bx[e] -= theta
                else:
                    bx[e] += theta
            bi[leave] = i
            bj[leave] = j
            bx[leave] = theta
            if theta > 0:
                degenerate = 0
            else:
                degenerate += 1
    if capped:
        raise RuntimeError("transport simplex exceeded its iteration cap")
    return bi_arr, bj_arr, bx_arr, pot_arr[:m].copy(), pot_arr[m:].copy(), it
