"""Approximating measures built by pushing Whitney-cube mass onto the graph.

For a shift e and a scale k, the measure nu^e_k keeps the part of mu that
lies on Gamma and replaces the mass mu(P) of each Whitney cube P with
side at most 2^-k by the density ``g_P = mu(P)/ell(P)^n`` on the vertical
projection of P.  Densities are discretised on sigma-nodes: midpoints of
a dyadic grid of spacing h in R^n, aligned with the shifted lattice, so
that every Whitney base cube of side >= h is tiled exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .coefficients import _transport, DEFAULT_CONFIG, SearchConfig
from .graph import (
    LAMBDA,
    GammaCube,
    LipschitzGraph,
    container_k0,
    find_shifted_container,
    shift_offset,
)
from .measure import (
    AffinePlane,
    DiscreteMeasure,
    UndefinedCoefficient,
    coordinate_plane,
    cutoff_weights,
    plane_angle,
)
from .whitney import DEFAULT_FLOOR, WhitneyCube, WhitneyDecomposition, build_whitney, default_K

log = logging.getLogger(__name__)

ON_GAMMA_RTOL = 1e-9


def on_gamma_mask(graph: LipschitzGraph, points) -> np.ndarray:
    """Points within 1e-9 (1 + |x|) of their vertical projection."""
    pts = np.atleast_2d(np.asarray(points, float))
    tol = ON_GAMMA_RTOL * (1.0 + np.linalg.norm(pts, axis=1))
    return graph.vertical_gap(pts) <= tol


def whitney_for_measure(mu: DiscreteMeasure, graph: LipschitzGraph, shift=None,
                        floor_level: int = DEFAULT_FLOOR, margin: float = 1e-6) -> WhitneyDecomposition:
    """Whitney decomposition of a box around the support of mu."""
    pts = mu.points[~on_gamma_mask(graph, mu.points)] if len(mu) else mu.points
    if len(pts) == 0:
        pts = mu.points if len(mu) else np.zeros((1, graph.d))
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    return build_whitney(graph, lo, hi, shift, floor_level=floor_level)


@dataclass(frozen=True, eq=False)
class ProjectedDensity:
    """g_P = mu(P)/ell(P)^n on the footprint of P, at quadrature resolution."""

    source_cube: WhitneyCube
    mass: float
    nodes: np.ndarray  # integer node indices (m, n)
    node_weights: np.ndarray
    fallback: bool = False

    @property
    def density(self) -> float:
        return self.mass / self.source_cube.ell ** len(self.nodes[0])

    @property
    def integral(self) -> float:
        """Quadrature value of the integral of g_P against sigma."""
        if self.fallback:
            return self.mass
        return self.density * math.fsum(self.node_weights)

    def node_masses(self) -> np.ndarray:
        w = self.node_weights
        return self.mass * w / w.sum()


@dataclass(frozen=True, eq=False)
class ApproximatingMeasure:
    measure: DiscreteMeasure
    on_gamma: DiscreteMeasure
    densities: tuple
    node_keys: np.ndarray  # (N, n) node indices, sorted
    node_mass: np.ndarray
    h: float
    offset: np.ndarray
    provenance: dict = field(default_factory=dict)
    dropped_mass: float = 0.0
    fallbacks: int = 0

    @property
    def whitney_mass(self) -> float:
        return math.fsum(self.node_mass)

    def node_points(self, graph: LipschitzGraph) -> np.ndarray:
        return graph.lift(self.offset + (self.node_keys + 0.5) * self.h)

    def density_values(self) -> np.ndarray:
        """g = sum_P g_P at each node (mass over node weight)."""
        n = self.node_keys.shape[1]
        return self.node_mass / self.h**n

    def provenance_json(self) -> str:
        rows = [{"node": list(k), "cubes": v} for k, v in sorted(self.provenance.items())]
        return json.dumps(rows)


def _footprint(corner, ell, off, h, n):
    """Node indices whose base point lies in the half-open base cube."""
    lo = np.ceil((corner - off) / h - 0.5 - 1e-9).astype(np.int64)
    hi = np.ceil((corner + ell - off) / h - 0.5 - 1e-9).astype(np.int64)
    if np.any(hi <= lo):
        return None
    ranges = [np.arange(lo[i], hi[i]) for i in range(n)]
    if n == 1:
        return ranges[0][:, None]
    return np.array(list(product(*ranges)), dtype=np.int64)


def approx_measure(mu: DiscreteMeasure, graph: LipschitzGraph, shift=None, k: float = -math.inf,
                   h: float | None = None, W: WhitneyDecomposition | None = None,
                   details: bool = False):
    """nu^e_k = mu|Gamma + (sum over P in W_k^e of g_P) sigma.

    Atoms off Gamma that fall in cubes larger than 2^-k are dropped, as are
    atoms outside the decomposed box (both reported in ``dropped_mass``).
    With ``details=True`` the full :class:`ApproximatingMeasure` is returned.
    """
    n = graph.n
    shift = tuple(int(s) for s in np.broadcast_to(0 if shift is None else shift, (n,)))
    on = on_gamma_mask(graph, mu.points) if len(mu) else np.zeros(0, bool)
    base_part = mu.select(on)
    off_part = mu.select(~on)
    if W is None and len(off_part):
        W = whitney_for_measure(mu, graph, shift)
    off = shift_offset(shift, n)
    cube_of = W.locate(off_part.points) if len(off_part) else np.zeros(0, np.int64)
    dropped = 0.0
    if len(off_part):
        kept = cube_of >= 0
        kept &= W.ell[np.maximum(cube_of, 0)] <= 2.0**-k
        dropped = math.fsum(off_part.weights[~kept])
        cube_of = np.where(kept, cube_of, -1)
    used = np.unique(cube_of[cube_of >= 0])
    if h is None:
        h = float(W.ell[used].min()) / 4.0 if used.size else 1.0
    masses = {}
    for c, w in zip(cube_of, off_part.weights):
        if c >= 0:
            masses.setdefault(int(c), []).append(w)
    densities = []
    acc = {}
    prov = {}
    fallbacks = 0
    for c in used:
        cube = W[int(c)]
        m = math.fsum(masses[int(c)])
        nodes = _footprint(cube.corner[:n], cube.ell, off, h, n)
        fb = nodes is None
        if fb:
            centre = cube.corner[:n] + 0.5 * cube.ell
            nodes = np.round((centre - off) / h - 0.5).astype(np.int64)[None]
            fallbacks += 1
            log.info("cube %s has no sigma-node in its footprint; using nearest node", cube.index)
        wts = np.full(len(nodes), h**n)
        P = ProjectedDensity(cube, m, nodes, wts, fb)
        densities.append(P)
        for key, nm in zip(map(tuple, nodes.tolist()), P.node_masses()):
            acc.setdefault(key, []).append(nm)
            prov.setdefault(key, []).append(int(c))
    keys = sorted(acc)
    node_keys = np.array(keys, dtype=np.int64).reshape(-1, n)
    node_mass = np.array([math.fsum(acc[key]) for key in keys])
    pts = graph.lift(off + (node_keys + 0.5) * h) if len(keys) else np.zeros((0, graph.d))
    nu = base_part + DiscreteMeasure(pts, node_mass)
    if not details:
        return nu
    return ApproximatingMeasure(nu, base_part, tuple(densities), node_keys, node_mass, h,
                                np.asarray(off), {k_: v for k_, v in prov.items()}, dropped, fallbacks)


# modified alpha ---------------------------------------------------------------

def cylinder_quadrature(L: AffinePlane, Q: GammaCube, h: float) -> DiscreteMeasure:
    """H^n on L inside the vertical cylinder V(Q), via a midpoint grid on the base.

    L must be a graph over the horizontal plane; the base-to-plane map has
    constant Jacobian ``1/|det F|`` with F the horizontal block of the frame.
    """
    n = Q.n
    F = L.frame[:, :n]
    det = abs(float(np.linalg.det(F)))
    if det < 1e-12:
        raise ValueError("plane is vertical over the cube")
    m = max(1, int(math.ceil(Q.ell / h)))
    step = Q.ell / m
    ticks = [Q.corner[i] + (np.arange(m) + 0.5) * step for i in range(n)]
    U = ticks[0][:, None] if n == 1 else np.array(list(product(*ticks)))
    t = np.linalg.solve(F.T, (U - L.base[:n]).T).T
    pts = L.base + t @ L.frame
    return DiscreteMeasure(pts, np.full(len(U), step**n / det))


def tilde_alpha(nu: DiscreteMeasure, Q: GammaCube, L_Q: AffinePlane, eps0: float = 0.1,
                h: float | None = None, L0: AffinePlane | None = None,
                config: SearchConfig = DEFAULT_CONFIG) -> float:
    """1 when the angle between L_Q and the horizontal plane exceeds 1 - eps0,
    else ell(Q)^-(1 + n/2) W_2(psi_Q nu, a psi_Q H^n|L_Q) with psi_Q the
    indicator of V(Q)."""
    n = Q.n
    L0 = L0 if L0 is not None else coordinate_plane(L_Q.d, n)
    if plane_angle(L_Q, L0) > 1.0 - eps0:
        return 1.0
    inside = np.all((nu.points[:, :n] >= Q.corner) & (nu.points[:, :n] < Q.upper), axis=1)
    sub = nu.select(inside & (nu.weights > 0))
    if sub.mass <= 0:
        raise UndefinedCoefficient("nu(V(Q)) = 0")
    h = h if h is not None else Q.ell / 64.0
    flat = cylinder_quadrature(L_Q, Q, h)
    flat = flat.scaled(sub.mass / flat.mass)
    W = _transport(sub, flat, 2, config)
    return W / Q.ell ** (1.0 + n / 2.0)


def tilde_alpha_sensitivity(nu: DiscreteMeasure, Q: GammaCube, L_Q: AffinePlane,
                            eps0s=(0.05, 0.1, 0.2, 0.4), **kw) -> dict:
    """tilde_alpha for several eps0.  Only the steep-plane switch depends on
    eps0, so the values differ only when the angle falls between thresholds."""
    return {float(e): tilde_alpha(nu, Q, L_Q, eps0=e, **kw) for e in eps0s}


# auxiliary measure ------------------------------------------------------------

def default_lambda(n: int, d: int, K: int | None = None, lipschitz_bound: float = 1.0,
                   lam: float = LAMBDA, k0: int | None = None) -> float:
    """A lambda with every cube of I_Q inside lambda * B~_Q.

    A point x of P in W_Q lies within sqrt(n) ell (1 + L) + sqrt(1 + L^2)
    (K + 1) sqrt(d) ell of any footprint node of P, with ell <= 2^k0 ell(Q)
    and r(B~_Q) >= 3 lam sqrt(n) ell(Q).
    """
    K = default_K(d) if K is None else K
    k0 = container_k0(n, lipschitz_bound, lam) if k0 is None else k0
    L = lipschitz_bound
    spread = math.sqrt(n) * (1.0 + L) + math.sqrt(1.0 + L * L) * (K + 1) * math.sqrt(d)
    return 3.0 + spread * 2.0**k0 / (3.0 * lam * math.sqrt(n))


class SupportError(ValueError):
    """A retained Whitney cube is not inside lambda * B~_Q."""


@dataclass(frozen=True, eq=False)
class AuxiliaryMeasure:
    measure: DiscreteMeasure
    a: dict  # cube id -> a_P (retained cubes only)
    excluded: tuple  # cube ids of W_Q with a_P = 0
    shift: tuple
    k: int
    lam: float


def auxiliary_mu_Q(mu: DiscreteMeasure, graph: LipschitzGraph, Q: GammaCube, lam: float | None = None,
                   Lam: float = LAMBDA, W: WhitneyDecomposition | None = None, h: float | None = None,
                   k0: int | None = None, details: bool = False):
    """mu_Q = phi_{B~_Q} mu|Gamma + sum over P in I_Q of a_P mu|P.

    I_Q holds the cubes of W^{e(Q)}_{k(Q)} whose footprint meets 3 B~_Q and
    ``a_P`` is the phi_{B~_Q}-weighted share of the footprint quadrature.
    """
    n = graph.n
    k0 = container_k0(n, graph.lipschitz_bound, Lam) if k0 is None else k0
    cont = find_shifted_container(graph, Q, Lam, k0)
    e, k = cont.shift, cont.level
    lam = default_lambda(n, graph.d, None if W is None else W.K, graph.lipschitz_bound, Lam, k0) if lam is None else lam
    big = Q.big_ball
    if Lam != Q.lam:
        big = big.scaled(Lam / Q.lam)
    on = on_gamma_mask(graph, mu.points) if len(mu) else np.zeros(0, bool)
    base = mu.select(on)
    base = DiscreteMeasure(base.points, base.weights * cutoff_weights(big, base.points))
    parts = [base]
    off_pts = mu.points[~on]
    off_w = mu.weights[~on]
    a_vals, excluded = {}, []
    if len(off_pts):
        if W is None:
            W = whitney_for_measure(mu, graph, e)
        if W.shift != tuple(e):
            raise ValueError("Whitney decomposition has the wrong shift")
        cube_of = W.locate(off_pts)
        ok = (cube_of >= 0) & (W.ell[np.maximum(cube_of, 0)] <= 2.0**-k)
        off = shift_offset(e, n)
        outer = lam * big.radius
        for c in np.unique(cube_of[ok]):
            cube = W[int(c)]
            step = h if h is not None else cube.ell / 8.0
            nodes = _footprint(cube.corner[:n], cube.ell, off, step, n)
            if nodes is None:
                nodes = np.round((cube.corner[:n] + 0.5 * cube.ell - off) / step - 0.5).astype(np.int64)[None]
            pts = graph.lift(off + (nodes + 0.5) * step)
            if not np.any(big.scaled(3.0).contains(pts)):
                excluded.append(int(c))
                continue
            aP = float(np.mean(cutoff_weights(big, pts)))
            far = cube.corner + np.where(big.center > cube.center, 0.0, cube.ell)
            if np.linalg.norm(far - big.center) >= outer:
                raise SupportError(f"Whitney cube {cube.index} at level {cube.level} leaves lambda*B~_Q; raise lambda")
            a_vals[int(c)] = aP
            sel = ok & (cube_of == c)
            if aP > 0:
                parts.append(DiscreteMeasure(off_pts[sel], aP * off_w[sel]))
    out = DiscreteMeasure(np.vstack([p.points for p in parts]), np.concatenate([p.weights for p in parts]))
    if not details:
        return out
    return AuxiliaryMeasure(out, a_vals, tuple(excluded), tuple(e), k, lam)
