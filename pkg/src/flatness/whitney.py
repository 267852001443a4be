"""Whitney decomposition of a box minus a Lipschitz graph.

Cubes come from the shifted dyadic lattice of R^d with offset
``(e/3, 0, ..., 0)``.  A cube Q is accepted when a certified lower bound
on dist(Q, Gamma) is at least ``c * diam(Q)``; otherwise it is split.
Because the parent of every accepted cube was rejected, dist(Q, Gamma)
is at most about ``(2c + 2) diam(Q)``, which gives property b) for
``K >= 2 (2c + 3) sqrt(d) + 2``.  Cubes still undecided at the floor
level are kept and tagged as truncated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .graph import LipschitzGraph, lattice_index, shift_offset

DEFAULT_RATIO = 5.0
DEFAULT_FLOOR = 10


def default_K(d: int, c: float = DEFAULT_RATIO) -> int:
    return max(40, int(math.ceil(2.0 * (2.0 * c + 3.0) * math.sqrt(d) + 2.0)))


def box_distance(points, lo, side) -> np.ndarray:
    """Euclidean distance from points to closed axis-parallel cubes.

    ``points`` (M, d), ``lo`` (M, d) or (d,), ``side`` scalar or (M,).
    """
    side = np.asarray(side, float)
    if side.ndim:
        side = side[:, None]
    gap = np.maximum(np.maximum(lo - points, points - (lo + side)), 0.0)
    return np.sqrt(np.sum(gap * gap, axis=1))


def certified_box_distances(graph: LipschitzGraph, lo, side, upper, delta=None, chunk: int = 2_000_000):
    """Certified bounds on dist(cube, Gamma) for many closed cubes.

    ``lo`` is (M, d), ``side`` and ``upper`` are scalars or (M,) arrays, and
    ``upper[i]`` must be a known upper bound on the distance of cube i.
    Only base points within ``upper`` of the cube's base can beat it, so
    that window is sampled on a midpoint grid of spacing at most ``delta``
    (default side/8).  A sample s stands for its grid cell; by the
    Lipschitz bound the true minimum over the cell is at most
    ``sqrt(1 + L^2) * step * sqrt(n) / 2`` below the sampled value.

    Returns ``(lower, upper, witness)`` with witness the sampled graph point
    realising the new upper bound.
    """
    n = graph.n
    lo = np.atleast_2d(np.asarray(lo, float))
    M = len(lo)
    side = np.broadcast_to(np.asarray(side, float), (M,))
    upper = np.broadcast_to(np.asarray(upper, float), (M,))
    delta = side / 8.0 if delta is None else np.broadcast_to(np.asarray(delta, float), (M,))
    lip = math.sqrt(1.0 + graph.lipschitz_bound**2)
    width = side + 2.0 * upper
    lower_out = np.empty(M)
    upper_out = np.empty(M)
    witness = np.empty((M, graph.d))
    if M == 0:
        return lower_out, upper_out, witness
    # one grid per power-of-two bucket of width / delta, so a single wide
    # window does not set the resolution for every cube
    ratio = np.maximum(1, np.ceil(width / delta - 1e-9))
    bucket = np.ceil(np.log2(ratio)).astype(np.int64)
    if np.unique(bucket).size > 1:
        for b in np.unique(bucket):
            sel = np.flatnonzero(bucket == b)
            lower_out[sel], upper_out[sel], witness[sel] = certified_box_distances(
                graph, lo[sel], side[sel], upper[sel], delta[sel], chunk)
        return lower_out, upper_out, witness
    m = max(1, int(math.ceil(float(np.max(width / delta)))))
    frac = (np.arange(m) + 0.5) / m
    if n == 1:
        F = frac[:, None]
    else:
        F = np.stack([g.ravel() for g in np.meshgrid(*[frac] * n, indexing="ij")], axis=1)
    per = max(1, chunk // len(F))
    for s in range(0, M, per):
        sl = slice(s, min(M, s + per))
        wlo = lo[sl, :n] - upper[sl, None]
        U = wlo[:, None, :] + width[sl, None, None] * F[None]
        P = graph.lift(U.reshape(-1, n))
        k = len(F)
        dist = box_distance(P, np.repeat(lo[sl], k, axis=0), np.repeat(side[sl], k)).reshape(-1, k)
        q = np.argmin(dist, axis=1)
        rows = np.arange(len(q))
        upper_out[sl] = dist[rows, q]
        witness[sl] = P.reshape(-1, k, graph.d)[rows, q]
        slack = lip * (width[sl] / m) * math.sqrt(n) / 2.0
        lower_out[sl] = np.maximum(0.0, upper_out[sl] - slack)
    return lower_out, upper_out, witness


def certified_box_distance(graph: LipschitzGraph, lo, side: float, upper: float, delta: float | None = None):
    """Single-cube version of :func:`certified_box_distances`."""
    lb, ub, w = certified_box_distances(graph, np.asarray(lo, float)[None], side, upper, delta)
    return float(lb[0]), float(ub[0]), w[0]


def graph_meets_cubes(graph: LipschitzGraph, lo, side, delta, chunk: int = 2_000_000) -> np.ndarray:
    """True where a sampled graph point (base spacing <= delta) lies in the closed cube."""
    n = graph.n
    lo = np.atleast_2d(np.asarray(lo, float))
    M = len(lo)
    side = np.broadcast_to(np.asarray(side, float), (M,))
    delta = np.broadcast_to(np.asarray(delta, float), (M,))
    out = np.zeros(M, dtype=bool)
    if M == 0:
        return out
    m = max(1, int(math.ceil(float(np.max(side / delta)))))
    frac = (np.arange(m) + 0.5) / m
    F = frac[:, None] if n == 1 else np.stack(
        [g.ravel() for g in np.meshgrid(*[frac] * n, indexing="ij")], axis=1)
    per = max(1, chunk // len(F))
    for s in range(0, M, per):
        sl = slice(s, min(M, s + per))
        U = lo[sl, None, :n] + side[sl, None, None] * F[None]
        P = graph.lift(U.reshape(-1, n)).reshape(-1, len(F), graph.d)
        a = lo[sl, None, :]
        b = a + side[sl, None, None]
        out[sl] = np.any(np.all((P >= a) & (P <= b), axis=2), axis=1)
    return out


@dataclass(frozen=True, eq=False)
class WhitneyCube:
    level: int
    index: tuple
    shift: tuple
    corner: np.ndarray
    ell: float
    dist: float  # certified lower bound on dist(Q, Gamma)
    dist_upper: float
    truncated: bool

    @property
    def diam(self) -> float:
        return self.ell * math.sqrt(len(self.corner))

    @property
    def center(self) -> np.ndarray:
        return self.corner + 0.5 * self.ell

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.all((x >= self.corner) & (x < self.corner + self.ell), axis=1)

    def to_dict(self) -> dict:
        return {"corner": self.corner.tolist(), "ell": self.ell, "level": self.level,
                "e": list(self.shift), "dist": self.dist, "truncated": self.truncated}


class WhitneyDecomposition:
    """Array-backed collection of Whitney cubes; iterates as WhitneyCube."""

    def __init__(self, graph, shift, levels, indices, dist_lb, dist_ub, truncated, K, c, box):
        self.graph = graph
        self.shift = tuple(int(s) for s in shift)
        self.offset = np.zeros(graph.d)
        self.offset[: graph.n] = shift_offset(self.shift, graph.n)
        self.levels = np.asarray(levels, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64).reshape(-1, graph.d)
        self.ell = 2.0 ** (-self.levels.astype(float))
        self.corners = self.offset + self.indices * self.ell[:, None]
        self.dist_lb = np.asarray(dist_lb, float)
        self.dist_ub = np.asarray(dist_ub, float)
        self.truncated = np.asarray(truncated, dtype=bool)
        self.K = K
        self.c = c
        self.box = (np.asarray(box[0], float), np.asarray(box[1], float))
        self._lookup = {(int(l), tuple(int(v) for v in idx)): i
                        for i, (l, idx) in enumerate(zip(self.levels, self.indices))}

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i) -> WhitneyCube:
        return WhitneyCube(int(self.levels[i]), tuple(int(v) for v in self.indices[i]), self.shift,
                           self.corners[i].copy(), float(self.ell[i]), float(self.dist_lb[i]),
                           float(self.dist_ub[i]), bool(self.truncated[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def diam(self) -> np.ndarray:
        return self.ell * math.sqrt(self.graph.d)

    @property
    def centers(self) -> np.ndarray:
        return self.corners + 0.5 * self.ell[:, None]

    def subset(self, mask) -> "WhitneyDecomposition":
        mask = np.asarray(mask)
        return WhitneyDecomposition(self.graph, self.shift, self.levels[mask], self.indices[mask],
                                    self.dist_lb[mask], self.dist_ub[mask], self.truncated[mask],
                                    self.K, self.c, self.box)

    def locate(self, points) -> np.ndarray:
        """Index of the cube containing each point, or -1."""
        pts = np.atleast_2d(np.asarray(points, float))
        out = np.full(len(pts), -1, dtype=np.int64)
        if len(self) == 0:
            return out
        for lev in np.unique(self.levels):
            todo = np.flatnonzero(out < 0)
            if todo.size == 0:
                break
            idx = lattice_index(pts[todo], self.offset, 2.0 ** -float(lev))
            for q, row in zip(todo, idx):
                hit = self._lookup.get((int(lev), tuple(int(v) for v in row)))
                if hit is not None:
                    out[q] = hit
        return out

    def to_json(self) -> str:
        return json.dumps([cube.to_dict() for cube in self])


def _children(indices):
    d = indices.shape[1]
    bits = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
    return (2 * indices[:, None, :] + bits[None]).reshape(-1, d)


def build_whitney(graph: LipschitzGraph, box_lo, box_hi, shift=None, c: float = DEFAULT_RATIO,
                  K: int | None = None, floor_level: int = DEFAULT_FLOOR) -> WhitneyDecomposition:
    """Whitney cubes of the half-open box [box_lo, box_hi) minus Gamma."""
    n, d = graph.n, graph.d
    shift = tuple(int(s) for s in np.broadcast_to(0 if shift is None else shift, (n,)))
    K = default_K(d, c) if K is None else K
    lo = np.asarray(box_lo, float)
    hi = np.asarray(box_hi, float)
    off = np.zeros(d)
    off[:n] = shift_offset(shift, n)
    side = float(np.max(hi - lo))
    level = int(math.floor(-math.log2(side)))
    ell = 2.0**-level
    i0 = lattice_index(lo, off, ell)[0]
    i1 = lattice_index(hi, off, ell)[0]
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(i0, i1)], indexing="ij")
    cand = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    lip = math.sqrt(1.0 + graph.lipschitz_bound**2)
    out_lev, out_idx, out_lb, out_ub, out_tr = [], [], [], [], []
    while len(cand):
        ell = 2.0**-level
        corners = off + cand * ell
        inside = np.all((corners < hi) & (corners + ell > lo), axis=1)
        cand, corners = cand[inside], corners[inside]
        if not len(cand):
            break
        diam = ell * math.sqrt(d)
        center = corners + 0.5 * ell
        gap = graph.vertical_gap(center)
        lb = gap / lip - 0.5 * diam
        foot = graph.lift(center[:, :n])
        ub = box_distance(foot, corners, ell)
        target = c * diam
        accept = lb >= target
        reject = ub < target
        # coarse pass first; only cubes it leaves undecided get the fine grid
        for step in (ell, ell / 8.0):
            amb = np.flatnonzero(~accept & ~reject)
            if not amb.size:
                break
            l2, u2, _ = certified_box_distances(graph, corners[amb], ell, ub[amb], step)
            lb[amb] = np.maximum(lb[amb], l2)
            ub[amb] = np.minimum(ub[amb], u2)
            accept[amb] = lb[amb] >= target
            reject[amb] = ub[amb] < target
        lb = np.maximum(lb, 0.0)
        take = np.flatnonzero(accept)
        out_lev.append(np.full(take.size, level))
        out_idx.append(cand[take])
        out_lb.append(lb[take])
        out_ub.append(ub[take])
        out_tr.append(np.zeros(take.size, bool))
        rest = ~accept
        if level >= floor_level:
            r = np.flatnonzero(rest)
            out_lev.append(np.full(r.size, level))
            out_idx.append(cand[r])
            out_lb.append(lb[r])
            out_ub.append(ub[r])
            out_tr.append(np.ones(r.size, bool))
            break
        cand = _children(cand[rest])
        level += 1
    cat = lambda xs, shape=None: np.concatenate(xs) if xs else np.zeros(0)
    return WhitneyDecomposition(
        graph, shift,
        np.concatenate(out_lev) if out_lev else np.zeros(0, np.int64),
        np.concatenate(out_idx) if out_idx else np.zeros((0, d), np.int64),
        cat(out_lb), cat(out_ub),
        np.concatenate(out_tr) if out_tr else np.zeros(0, bool),
        K, c, (lo, hi),
    )


def whitney_filter(W: WhitneyDecomposition, k: float) -> WhitneyDecomposition:
    """Cubes with side at most 2^-k."""
    return W.subset(W.ell <= 2.0**-k)


# validation ----------------------------------------------------------------

def size_ratio_bound(c: float, d: int, n: int = 1, lip: float = 1.0) -> int:
    """Dyadic bound C with ell(Q')/ell(Q) <= C for cubes whose 10-fold
    dilations meet (derived from the acceptance rule)."""
    eta = math.sqrt(1.0 + lip**2) * math.sqrt(n) / 8.0 / math.sqrt(d)
    U = 2.0 * (c + 1.0) + eta
    raw = (U + 5.5) / (c - 4.5)
    return 2 ** int(math.floor(math.log2(raw)))


def neighbor_bound(c: float, d: int, n: int = 1, lip: float = 1.0) -> int:
    """Volume bound D0 on the number of cubes Q' with 10Q' meeting 10Q."""
    C = size_ratio_bound(c, d, n, lip)
    return int((C * (10 + 11 * C)) ** d)


@dataclass
class WhitneyReport:
    cubes: int = 0
    truncated: int = 0
    checked: int = 0
    a_fail: int = 0
    b_fail: int = 0
    neighbor_fail: int = 0
    ratio_fail: int = 0
    separation_fail: int = 0
    property_fail: int = 0
    property_samples: int = 0
    max_neighbors: int = 0
    neighbor_bound: int = 0
    max_size_ratio: float = 1.0
    size_ratio_bound: float = 1.0
    max_dist_over_diam: float = 0.0
    min_dist_over_diam: float = math.inf
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not (self.a_fail or self.b_fail or self.neighbor_fail or self.ratio_fail
                    or self.separation_fail or self.property_fail)

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "failures"}
        out["failures"] = self.failures[:50]
        out["passed"] = self.passed
        if math.isinf(out["min_dist_over_diam"]):
            out["min_dist_over_diam"] = None
        return out


def validate_whitney(W: WhitneyDecomposition, graph: LipschitzGraph | None = None,
                     samples: int = 1000, seed: int = 0) -> WhitneyReport:
    """Audit properties a), b), the neighbour bounds and the ball property.

    Truncated cubes are excluded from the strict checks but still count as
    neighbours.
    """
    graph = graph or W.graph
    d = graph.d
    rep = WhitneyReport(cubes=len(W), truncated=int(W.truncated.sum()))
    rep.neighbor_bound = neighbor_bound(W.c, d, graph.n, graph.lipschitz_bound)
    rep.size_ratio_bound = size_ratio_bound(W.c, d, graph.n, graph.lipschitz_bound)
    ok = np.flatnonzero(~W.truncated)
    rep.checked = int(ok.size)
    diam = W.diam
    centers = W.centers
    ell = W.ell[ok]
    lo = W.corners[ok]
    # a) 10Q misses Gamma: certified positive distance of the dilated cube
    # Only base points under 10Q can put a graph point inside it, so a zero
    # search radius (window = projection of 10Q) already certifies a miss.
    lo10 = lo - 4.5 * ell[:, None]
    lb10, _, _ = certified_box_distances(graph, lo10, 10 * ell, 0.0, ell / 4.0)
    bad_a = lb10 <= 0.0
    # b) KQ meets Gamma
    loK = lo - 0.5 * (W.K - 1) * ell[:, None]
    foot = graph.lift(centers[ok, : graph.n])
    meets = np.all((foot >= loK) & (foot <= loK + W.K * ell[:, None]), axis=1)
    rest = ~meets
    if np.any(rest):
        meets[rest] = graph_meets_cubes(graph, loK[rest], W.K * ell[rest], ell[rest] / 8.0)
    bad_b = ~meets
    # separation 4 diam <= dist <= K diam
    bad_s = (W.dist_lb[ok] < 4.0 * diam[ok]) | (W.dist_ub[ok] > W.K * diam[ok])
    for name, bad in (("a", bad_a), ("b", bad_b), ("separation", bad_s)):
        rep.failures.extend((name, int(i)) for i in ok[bad])
    rep.a_fail, rep.b_fail, rep.separation_fail = int(bad_a.sum()), int(bad_b.sum()), int(bad_s.sum())
    if ok.size:
        rep.max_dist_over_diam = float(np.max(W.dist_ub[ok] / diam[ok]))
        rep.min_dist_over_diam = float(np.min(W.dist_lb[ok] / diam[ok]))
    # c) neighbours: 10Q and 10Q' meet iff sup-distance of centres <= 5(l + l')
    counts = np.zeros(len(W), dtype=np.int64)
    worst_ratio = np.ones(len(W))
    levels = np.unique(W.levels)
    trees = {lev: (np.flatnonzero(W.levels == lev), cKDTree(centers[W.levels == lev])) for lev in levels}
    for la in levels:
        ia = np.flatnonzero((W.levels == la) & ~W.truncated)
        if ia.size == 0:
            continue
        for lb_, (ib, tree) in trees.items():
            radius = 5.0 * (2.0**-la + 2.0**-lb_) * (1 + 1e-12)
            hits = tree.query_ball_point(centers[ia], radius, p=np.inf, return_length=True)
            hits = np.asarray(hits)
            if la == lb_:
                hits = hits - 1
            counts[ia] += hits
            if np.any(hits > 0):
                ratio = 2.0 ** abs(int(la) - int(lb_))
                worst_ratio[ia[hits > 0]] = np.maximum(worst_ratio[ia[hits > 0]], ratio)
    if ok.size:
        rep.max_neighbors = int(counts[ok].max())
        rep.max_size_ratio = float(worst_ratio[ok].max())
    rep.neighbor_fail = int(np.sum(counts[ok] > rep.neighbor_bound))
    rep.ratio_fail = int(np.sum(worst_ratio[ok] > rep.size_ratio_bound))
    # ball property: cubes meeting B(y, r), y on Gamma, have diam <= r and lie in B(y, 3r)
    rng = np.random.default_rng(seed)
    lo_box, hi_box = W.box
    n = graph.n
    side = float(np.max(hi_box - lo_box))
    rmin = float(W.ell.min()) if len(W) else side
    good_lo, good_ell, good_diam = W.corners[ok], W.ell[ok], diam[ok]
    for _ in range(samples):
        u = rng.uniform(lo_box[:n], hi_box[:n])
        y = graph.lift(u[None])[0]
        r = math.exp(rng.uniform(math.log(rmin), math.log(side)))
        dist = box_distance(np.broadcast_to(y, good_lo.shape), good_lo, good_ell)
        hit = np.flatnonzero(dist < r)
        rep.property_samples += 1
        if hit.size == 0:
            continue
        far = good_lo[hit] + np.where(y > good_lo[hit] + 0.5 * good_ell[hit, None], 0.0, good_ell[hit, None])
        far_dist = np.sqrt(np.sum((far - y) ** 2, axis=1))
        bad = (good_diam[hit] > r) | (far_dist >= 3 * r)
        if np.any(bad):
            rep.property_fail += 1
            rep.failures.append(("property", tuple(u.tolist()), r))
    return rep
