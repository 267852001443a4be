"""Martingale differences on Gamma-cubes and stopping-time trees.

Densities against sigma live on a :class:`SigmaGrid`: the midpoints of
the level-J cells of a shifted dyadic lattice of R^n, each of sigma-mass
``2^(-Jn)`` (sigma is the push-forward of Lebesgue measure).  A
Gamma-cube of level l <= J is then exactly a union of grid cells, which
makes averages, Parseval and the tree sums exact at grid resolution.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .graph import LAMBDA, GammaCube, LipschitzGraph, cube_diameters, make_cube, shift_offset
from .measure import DiscreteMeasure
from .approximation import on_gamma_mask


# sigma grid --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SigmaGrid:
    shift: tuple
    level: int
    keys: np.ndarray  # (N, n) integer cell indices at ``level``

    @property
    def n(self) -> int:
        return self.keys.shape[1]

    @property
    def h(self) -> float:
        return 2.0**-self.level

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.keys), self.h**self.n)

    @property
    def offset(self) -> np.ndarray:
        return shift_offset(self.shift, self.n)

    def base_points(self) -> np.ndarray:
        return self.offset + (self.keys + 0.5) * self.h

    def ancestors(self, level: int) -> np.ndarray:
        """Index of the level-``level`` cube containing each cell."""
        if level > self.level:
            raise ValueError("grid is coarser than the requested level")
        return self.keys // (2 ** (self.level - level))

    @classmethod
    def for_cubes(cls, cubes, level: int) -> "SigmaGrid":
        """All level-``level`` cells of the given (same-shift) cubes."""
        cubes = list(cubes)
        shift = cubes[0].shift
        blocks = []
        for Q in cubes:
            if Q.shift != shift:
                raise ValueError("cubes must share a shift")
            f = 2 ** (level - Q.level)
            base = np.asarray(Q.index, np.int64) * f
            rng = [np.arange(b, b + f) for b in base]
            blocks.append(rng[0][:, None] if len(rng) == 1 else np.array(list(product(*rng)), np.int64))
        keys = np.unique(np.vstack(blocks), axis=0)
        return cls(tuple(shift), int(level), keys)


def density_on_grid(nu: DiscreteMeasure, grid: SigmaGrid):
    """Bin the atoms of nu by base cell; returns ``(g, outside_mass)`` with
    g = binned mass / sigma(cell)."""
    n = grid.n
    idx = np.floor((nu.points[:, :n] - grid.offset) / grid.h).astype(np.int64)
    lookup = {tuple(k): i for i, k in enumerate(grid.keys.tolist())}
    g = np.zeros(len(grid.keys))
    outside = 0.0
    for row, w in zip(idx.tolist(), nu.weights):
        i = lookup.get(tuple(row))
        if i is None:
            outside += w
        else:
            g[i] += w
    return g / grid.h**n, outside


# martingale differences --------------------------------------------------------

class EmptyCube(ValueError):
    pass


@dataclass(frozen=True)
class MartingaleCoefficient:
    key: tuple
    children: tuple
    deviations: np.ndarray
    child_sigma: np.ndarray
    parent_average: float
    norm2: float


def martingale_difference(g, grid: SigmaGrid, P: GammaCube) -> MartingaleCoefficient:
    """Delta_P g: child average minus parent average, on the cells of P."""
    if tuple(P.shift) != grid.shift:
        raise ValueError("cube and grid have different shifts")
    if P.level >= grid.level:
        raise ValueError("grid does not resolve the children of P")
    g = np.asarray(g, float)
    inside = np.all(grid.ancestors(P.level) == np.asarray(P.index), axis=1)
    if not np.any(inside):
        raise EmptyCube(f"sigma({P}) = 0 at grid resolution")
    w = grid.weights[inside]
    gv = g[inside]
    parent = float(np.sum(gv * w) / np.sum(w))
    child_idx = grid.ancestors(P.level + 1)[inside]
    kids, inv = np.unique(child_idx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    s = np.bincount(inv, weights=gv * w, minlength=len(kids))
    m = np.bincount(inv, weights=w, minlength=len(kids))
    dev = s / m - parent
    norm2 = float(np.sum(dev * dev * m))
    return MartingaleCoefficient(P.key, tuple(map(tuple, kids.tolist())), dev, m, parent, norm2)


def martingale_energies(g, grid: SigmaGrid, top_level: int) -> dict:
    """||Delta_P g||^2 for every cube P at levels top_level .. grid.level - 1
    meeting the grid, keyed by (level, index)."""
    g = np.asarray(g, float)
    w = grid.weights
    out = {}
    for lev in range(grid.level - 1, top_level - 1, -1):
        uniq, S, m = _group(grid.ancestors(lev), g * w, w)
        cid, cs, cm = _group(grid.ancestors(lev + 1), g * w, w)
        # children sorted by index map onto the sorted parents
        _, inv = np.unique(cid // 2, axis=0, return_inverse=True)
        acc = np.bincount(inv.reshape(-1), weights=cs * cs / cm, minlength=len(uniq))
        energy = np.maximum(acc - S * S / m, 0.0)
        for row, e in zip(uniq.tolist(), energy):
            out[(lev, tuple(row))] = float(e)
    return out


def _group(ids, values, weights):
    uniq, inv = np.unique(ids, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    return (uniq, np.bincount(inv, weights=values, minlength=len(uniq)),
            np.bincount(inv, weights=weights, minlength=len(uniq)))


def l2_norm2(g, grid: SigmaGrid) -> float:
    g = np.asarray(g, float)
    return float(np.sum(g * g * grid.weights))


def l1_norm(g, grid: SigmaGrid) -> float:
    return float(np.sum(np.abs(g) * grid.weights))


# cube trees --------------------------------------------------------------------

class LatticeCache:
    """Memoised Gamma-cubes (diameters computed in batches per level)."""

    def __init__(self, graph: LipschitzGraph, lam: float = LAMBDA):
        self.graph = graph
        self.lam = lam
        self._cubes = {}

    def cubes(self, level: int, indices, shift) -> list:
        shift = tuple(shift)
        keys = [(level, tuple(int(v) for v in idx), shift) for idx in indices]
        todo = [k for k in keys if k not in self._cubes]
        if todo:
            ell = 2.0**-level
            off = shift_offset(shift, self.graph.n)
            corners = off + np.array([k[1] for k in todo], float) * ell
            diams = cube_diameters(self.graph, corners, ell)
            for k, dm in zip(todo, diams):
                self._cubes[k] = make_cube(self.graph, level, k[1], shift, self.lam, diam=float(dm))
        return [self._cubes[k] for k in keys]

    def cube(self, level: int, index, shift) -> GammaCube:
        return self.cubes(level, [index], shift)[0]


def _parent_key(key):
    level, idx, shift = key
    return (level - 1, tuple(i // 2 for i in idx), shift)


def _is_descendant(key, anc):
    if key[2] != anc[2] or key[0] < anc[0]:
        return False
    f = 2 ** (key[0] - anc[0])
    return all(i // f == a for i, a in zip(key[1], anc[1]))


@dataclass(eq=False)
class CubeTree:
    """Members and stopping cubes below one or more roots (same shift)."""

    roots: tuple
    members: dict = field(default_factory=dict)  # key -> GammaCube
    stops: dict = field(default_factory=dict)  # key -> (GammaCube, reasons)
    thresholds: dict = field(default_factory=dict)
    depth: int = 0

    @property
    def shift(self):
        return self.roots[0][2]

    def levels(self) -> dict:
        out = {}
        for key in self.members:
            out.setdefault(key[0], []).append(key)
        return {k: sorted(v) for k, v in sorted(out.items())}

    def check_invariants(self) -> list:
        """Violations of (T1), (T2), (S) and stop disjointness; empty when valid."""
        bad = []
        roots = set(self.roots)
        for key in self.members:
            if not any(_is_descendant(key, r) for r in roots):
                bad.append(("T1", key))
            if key not in roots and _parent_key(key) not in self.members:
                bad.append(("T2", key))
        for key in self.stops:
            if key in self.members:
                bad.append(("S-member", key))
            if key not in roots and _parent_key(key) not in self.members:
                bad.append(("S-parent", key))
        stop_keys = set(self.stops)
        for key in self.stops:
            anc = key
            while anc[0] > min(r[0] for r in self.roots):
                anc = _parent_key(anc)
                if anc in stop_keys:
                    bad.append(("S-disjoint", key))
                    break
        return bad

    def to_dict(self) -> dict:
        members = {}
        for key in sorted(self.members):
            members.setdefault(str(key[0]), []).append(list(key[1]))
        stops = {}
        for key in sorted(self.stops):
            stops.setdefault(str(key[0]), []).append({"index": list(key[1]), "reasons": list(self.stops[key][1])})
        return {"shift": list(self.shift), "roots": [[r[0], list(r[1])] for r in self.roots],
                "thresholds": self.thresholds, "depth": self.depth,
                "members": members, "stops": stops}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def gamma_mass(mu: DiscreteMeasure, graph: LipschitzGraph, cubes) -> np.ndarray:
    """mu(Q) for Gamma-cubes: mass of on-Gamma atoms whose base lies in Q."""
    on = on_gamma_mask(graph, mu.points) if len(mu) else np.zeros(0, bool)
    U = mu.points[on, : graph.n]
    w = mu.weights[on]
    out = np.empty(len(cubes))
    for i, Q in enumerate(cubes):
        out[i] = float(np.sum(w[Q.contains_base(U)])) if len(U) else 0.0
    return out


def ball_masses(mu: DiscreteMeasure, centers, radii, chunk: int = 4_000_000) -> np.ndarray:
    """Sharp masses of the open balls B(centers[i], radii[i])."""
    centers = np.atleast_2d(np.asarray(centers, float))
    radii = np.asarray(radii, float)
    out = np.zeros(len(centers))
    if len(mu) == 0:
        return out
    P, w = mu.points, mu.weights
    per = max(1, chunk // max(1, len(P)))
    for s in range(0, len(centers), per):
        c = centers[s:s + per]
        d2 = np.sum((c[:, None, :] - P[None]) ** 2, axis=2)
        out[s:s + per] = (d2 < (radii[s:s + per, None] ** 2)) @ w
    return out


def shifted_roots(R: GammaCube, shift, cache: LatticeCache) -> list:
    """Cubes of the shifted lattice, same side as R, meeting R."""
    n = R.n
    off = shift_offset(shift, n)
    lo = np.floor((R.corner - off) / R.ell).astype(np.int64)
    hi = np.ceil((R.upper - off) / R.ell).astype(np.int64)
    idxs = [idx for idx in product(*[range(a, b) for a, b in zip(lo, hi)])]
    cubes = cache.cubes(R.level, idxs, shift)
    keep = []
    for Q in cubes:
        if np.all(np.maximum(Q.corner, R.corner) < np.minimum(Q.upper, R.upper)):
            keep.append(Q)
    return keep


def build_shift_tree(mu: DiscreteMeasure, nu: DiscreteMeasure, graph: LipschitzGraph, R: GammaCube,
                     shift, M: float, lam: float, depth: int, cache: LatticeCache,
                     mass_cache: dict | None = None) -> CubeTree:
    """Tree^e: descendants of the roots R^e not inside a maximal stopped cube."""
    n = graph.n
    mass_cache = {} if mass_cache is None else mass_cache
    roots = shifted_roots(R, shift, cache)
    tree = CubeTree(tuple(Q.key for Q in roots), thresholds={"M": M, "lambda": lam}, depth=depth)
    frontier = roots
    for step in range(depth + 1):
        if not frontier:
            break
        todo = [Q for Q in frontier if Q.key not in mass_cache]
        if todo:
            centers = np.array([Q.z for Q in todo])
            radii = np.array([lam * Q.big_ball.radius for Q in todo])
            m_mu = ball_masses(mu, centers, radii)
            m_nu = ball_masses(nu, centers, radii)
            m_q = gamma_mass(mu, graph, todo)
            for Q, a, b, c in zip(todo, m_mu, m_nu, m_q):
                mass_cache[Q.key] = (float(a), float(b), float(c))
        nxt = []
        for Q in frontier:
            a, b, c = mass_cache[Q.key]
            size = Q.ell**n
            reasons = []
            if b > M * size:
                reasons.append("HD_nu")
            if a > M * size:
                reasons.append("HD_mu")
            if c < size / M:
                reasons.append("LD")
            if reasons:
                tree.stops[Q.key] = (Q, tuple(reasons))
            else:
                tree.members[Q.key] = Q
                if step < depth:
                    nxt.append(Q)
        if not nxt:
            break
        level = nxt[0].level + 1
        idxs = [idx for Q in nxt for idx in Q.children_indices()]
        frontier = cache.cubes(level, idxs, shift)
    return tree


def combine_trees(R: GammaCube, trees: dict, cache: LatticeCache, depth: int) -> CubeTree:
    """Cubes Q below R (shift 0) such that every Tree^e has a cube of the same
    side meeting Q.  Stop cubes are the children of members that fail."""
    n = R.n
    shift0 = tuple(R.shift)
    out = CubeTree((R.key,), thresholds=dict(next(iter(trees.values())).thresholds), depth=depth)

    def admitted(Q):
        for e, T in trees.items():
            if tuple(e) == Q.shift:
                if Q.key not in T.members:
                    return False
                continue
            off = shift_offset(e, n)
            lo = np.floor((Q.corner - off) / Q.ell).astype(np.int64)
            hi = np.ceil((Q.upper - off) / Q.ell).astype(np.int64)
            hit = False
            for idx in product(*[range(a, b) for a, b in zip(lo, hi)]):
                if (Q.level, tuple(int(v) for v in idx), tuple(e)) in T.members:
                    hit = True
                    break
            if not hit:
                return False
        return True

    frontier = [R]
    for step in range(depth + 1):
        nxt = []
        for Q in frontier:
            if admitted(Q):
                out.members[Q.key] = Q
                if step < depth:
                    nxt.append(Q)
            else:
                out.stops[Q.key] = (Q, ("combined",))
        if not nxt:
            break
        level = nxt[0].level + 1
        frontier = cache.cubes(level, [idx for Q in nxt for idx in Q.children_indices()], shift0)
    return out


@dataclass(eq=False)
class StoppingResult:
    trees: dict  # shift -> CubeTree
    tree: CubeTree
    M: float
    lam: float


def build_stopping_tree(mu: DiscreteMeasure, nus: dict, graph: LipschitzGraph, R: GammaCube,
                        M: float, lam: float = 4.0, depth: int = 12, cache: LatticeCache | None = None,
                        mass_caches: dict | None = None) -> StoppingResult:
    """Per-shift trees Tree^e and the combined Tree with root R.

    ``nus`` maps each shift e in {0,1}^n to the approximating measure nu^e.
    """
    if lam <= 3:
        raise ValueError("lambda must exceed 3")
    cache = cache or LatticeCache(graph, R.lam)
    mass_caches = {} if mass_caches is None else mass_caches
    trees = {}
    for e in product((0, 1), repeat=graph.n):
        nu = nus[e] if e in nus else nus[tuple(e)]
        trees[e] = build_shift_tree(mu, nu, graph, R, e, M, lam, depth, cache,
                                    mass_caches.setdefault(e, {}))
    tree = combine_trees(R, trees, cache, depth)
    return StoppingResult(trees, tree, M, lam)


def stop_mass(tree: CubeTree, mu: DiscreteMeasure, graph: LipschitzGraph) -> float:
    """mu of the union of the (pairwise disjoint) stop cubes."""
    cubes = [Q for Q, _ in tree.stops.values()]
    if not cubes:
        return 0.0
    return math.fsum(gamma_mass(mu, graph, cubes))


def tree_audit(tree: CubeTree, mu: DiscreteMeasure, nu: DiscreteMeasure | None, graph: LipschitzGraph) -> dict:
    """Exact check of the membership thresholds for every member."""
    M, lam = tree.thresholds["M"], tree.thresholds["lambda"]
    cubes = list(tree.members.values())
    if not cubes:
        return {"checked": 0, "violations": 0}
    centers = np.array([Q.z for Q in cubes])
    radii = np.array([lam * Q.big_ball.radius for Q in cubes])
    size = np.array([Q.ell**graph.n for Q in cubes])
    bad = ball_masses(mu, centers, radii) > M * size
    bad |= gamma_mass(mu, graph, cubes) < size / M
    if nu is not None:
        bad |= ball_masses(nu, centers, radii) > M * size
    return {"checked": len(cubes), "violations": int(bad.sum())}


@dataclass(frozen=True)
class PackingSum:
    total: float
    levels: dict  # level -> {"sum", "count", "undefined"}

    @property
    def cumulative(self) -> list:
        acc, out = 0.0, []
        for lev in sorted(self.levels):
            acc += self.levels[lev]["sum"]
            out.append((lev, acc))
        return out

    def to_dict(self) -> dict:
        return {"total": self.total, "levels": {str(k): v for k, v in sorted(self.levels.items())},
                "cumulative": self.cumulative}


def packing_sum(tree: CubeTree, evaluator, executor=None) -> PackingSum:
    """Sum of evaluator(Q)^2 ell(Q)^n over members, with a per-level breakdown.

    ``evaluator`` returns a value or None (undefined, excluded and counted).
    """
    keys = sorted(tree.members)
    cubes = [tree.members[k] for k in keys]
    values = list(executor.map(evaluator, cubes)) if executor is not None else [evaluator(Q) for Q in cubes]
    levels = {}
    for Q, v in zip(cubes, values):
        row = levels.setdefault(Q.level, {"sum": 0.0, "count": 0, "undefined": 0})
        if v is None:
            row["undefined"] += 1
            continue
        row["sum"] += float(v) ** 2 * Q.ell**Q.n
        row["count"] += 1
    total = math.fsum(r["sum"] for r in levels.values())
    return PackingSum(total, levels)


def tree_martingale_sum(tree: CubeTree, g, grid: SigmaGrid) -> float:
    """Sum over members of ||Delta_P g||^2 (members finer than the grid skipped)."""
    top = min(k[0] for k in tree.roots)
    energies = martingale_energies(g, grid, top)
    return math.fsum(energies.get((k[0], k[1]), 0.0) for k in tree.members if k[0] < grid.level)


@dataclass(frozen=True)
class SweepRow:
    M: float
    stop_mass: float
    members: int
    stops: int


def sweep_M(mu: DiscreteMeasure, nus: dict, graph: LipschitzGraph, R: GammaCube, Ms=(10.0, 100.0, 1000.0),
            lam: float = 4.0, depth: int = 12, eps: float = 0.1):
    """Stop mass of the combined tree for each M.  Returns ``(rows, chosen, results)``
    where chosen is the first M with stop mass < eps * mu(R) (or None) and
    results maps each M to its StoppingResult."""
    cache = LatticeCache(graph, R.lam)
    mass_caches = {}
    target = eps * float(gamma_mass(mu, graph, [R])[0])
    rows, chosen, results = [], None, {}
    for M in Ms:
        res = build_stopping_tree(mu, nus, graph, R, M, lam, depth, cache, mass_caches)
        sm = stop_mass(res.tree, mu, graph)
        rows.append(SweepRow(float(M), sm, len(res.tree.members), len(res.tree.stops)))
        results[M] = res
        if chosen is None and sm < target:
            chosen = M
    return rows, chosen, results
