"""Pure-Python transportation simplex.

This is the reference implementation of the kernel in ``_simplex.pyx``.
Both follow the same pivoting sequence step for step, so they return the
same basis on the same input.

The basis is stored as ``m + k - 1`` cells ``(bi[e], bj[e])`` with flows
``bx[e]``.  Row i is graph node i and column j is graph node ``m + j``.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def initial_basis(a, b, C, order):
    """Greedy matrix-minimum start, completed to a spanning tree."""
    m, k = C.shape
    N = m + k
    s = a.copy()
    t = b.copy()
    tol = 1e-14 * max(float(a.sum()), float(b.sum()))
    row_on = np.ones(m, dtype=bool)
    col_on = np.ones(k, dtype=bool)
    n_row, n_col = m, k
    parent = list(range(N))
    bi, bj, bx = [], [], []
    for idx in order:
        if n_row == 0 or n_col == 0:
            break
        i, j = divmod(int(idx), k)
        if not (row_on[i] and col_on[j]):
            continue
        x = min(s[i], t[j])
        s[i] -= x
        t[j] -= x
        bi.append(i)
        bj.append(j)
        bx.append(x)
        ra, rb = _find(parent, i), _find(parent, m + j)
        parent[ra] = rb
        if s[i] <= tol:
            row_on[i] = False
            n_row -= 1
        if t[j] <= tol:
            col_on[j] = False
            n_col -= 1
    nb = N - 1
    if len(bi) < nb:
        for idx in order:
            i, j = divmod(int(idx), k)
            ra, rb = _find(parent, i), _find(parent, m + j)
            if ra != rb:
                parent[ra] = rb
                bi.append(i)
                bj.append(j)
                bx.append(0.0)
                if len(bi) == nb:
                    break
    return np.array(bi, dtype=np.int64), np.array(bj, dtype=np.int64), np.array(bx, dtype=np.float64)


def _tree(m, k, bi, bj, Cl):
    """BFS parents, parent edges, depths and potentials of the basis tree.

    Works on plain lists; ``Cl`` is the cost matrix as nested lists.
    """
    N = m + k
    adj = [[] for _ in range(N)]
    for e in range(len(bi)):
        u, v = bi[e], m + bj[e]
        adj[u].append((v, e))
        adj[v].append((u, e))
    par = [-1] * N
    pedge = [-1] * N
    depth = [0] * N
    pot = [0.0] * N
    seen = [False] * N
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        du, pu = depth[u] + 1, pot[u]
        for v, e in adj[u]:
            if seen[v]:
                continue
            seen[v] = True
            par[v] = u
            pedge[v] = e
            depth[v] = du
            # u_i + v_j = C_ij along basic cells
            pot[v] = Cl[bi[e]][bj[e]] - pu
            queue.append(v)
    return par, pedge, depth, pot


def solve(a, b, C, order, dantzig=False, max_iter=-1):
    """Run the simplex.  Returns ``(bi, bj, bx, u, v, iterations)``."""
    m, k = C.shape
    N = m + k
    mk = m * k
    Cf = C.reshape(-1)
    cmax = float(np.max(np.abs(Cf))) if mk else 0.0
    eps = 1e-13 * cmax
    bi, bj, bx = initial_basis(a, b, C, order)
    bi, bj, bx = bi.tolist(), bj.tolist(), bx.tolist()
    Cl = C.tolist()
    if max_iter < 0:
        max_iter = 50 * N * N + 1000
    block = mk if dantzig else max(min(mk, 64), int(np.sqrt(mk)))
    bland_after = 2 * N
    pos = 0
    degenerate = 0
    it = 0
    flat_index = np.arange(mk, dtype=np.int64)
    rows_of = flat_index // k
    cols_of = flat_index % k
    while True:
        par, pedge, depth, pot = _tree(m, k, bi, bj, Cl)
        pot_arr = np.array(pot)
        u = pot_arr[:m]
        v = pot_arr[m:]
        enter = -1
        if degenerate > bland_after:
            rc = Cf - u[rows_of] - v[cols_of]
            hits = np.flatnonzero(rc < -eps)
            if hits.size:
                enter = int(hits[0])
        else:
            scanned = 0
            while scanned < mk:
                end = min(pos + block, mk)
                rc = Cf[pos:end] - u[rows_of[pos:end]] - v[cols_of[pos:end]]
                q = int(np.argmin(rc))
                scanned += end - pos
                nxt = 0 if end == mk else end
                if rc[q] < -eps:
                    enter = pos + q
                    pos = nxt
                    break
                pos = nxt
        if enter < 0:
            break
        it += 1
        if it > max_iter:
            raise RuntimeError("transport simplex exceeded its iteration cap")
        i, j = divmod(enter, k)
        # cycle through the tree path between row i and column j
        p, q = i, m + j
        side_a, side_b = [], []
        while depth[p] > depth[q]:
            side_a.append(pedge[p])
            p = par[p]
        while depth[q] > depth[p]:
            side_b.append(pedge[q])
            q = par[q]
        while p != q:
            side_a.append(pedge[p])
            p = par[p]
            side_b.append(pedge[q])
            q = par[q]
        minus = side_a[0::2] + side_b[0::2]
        plus = side_a[1::2] + side_b[1::2]
        theta = np.inf
        leave = -1
        leave_key = -1
        for e in minus:
            x = bx[e]
            key = bi[e] * k + bj[e]
            if x < theta or (x == theta and key < leave_key):
                theta = x
                leave = e
                leave_key = key
        for e in minus:
            bx[e] -= theta
        for e in plus:
            bx[e] += theta
        bi[leave] = i
        bj[leave] = j
        bx[leave] = theta
        if theta > 0:
            degenerate = 0
        else:
            degenerate += 1
    return (np.array(bi, dtype=np.int64), np.array(bj, dtype=np.int64),
            np.array(bx, dtype=np.float64), u.copy(), v.copy(), it)
