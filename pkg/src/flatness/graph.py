"""Lipschitz graphs, their dyadic Gamma-cube lattices and shifted grids.

A graph is Gamma = {(u, A(u)) : u in R^n} in R^d.  Dyadic cubes of R^n
(optionally shifted by e/3, e in {0,1}^n) are lifted to Gamma-cubes.  All
cubes are half-open, ``[corner, corner + ell)``, and their faces are
computed as ``offset + index * ell`` so neighbouring cubes share
bit-identical faces.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.spatial.distance import pdist

from .measure import Ball, DiscreteMeasure

LAMBDA = 9.0 * math.sqrt(2.0)
DIAM_SAMPLES = 256
DIAM_SAFETY = 1.01


class LipschitzGraph:
    """Graph of ``A: R^n -> R^{d-n}`` with a claimed Lipschitz bound.

    ``A`` must accept an ``(N, n)`` array and return ``(N, d - n)``.  The
    bound is checked on random pairs at construction (``check=True``).
    """

    def __init__(self, A, n: int, d: int, lipschitz_bound: float = 1.0, check: bool = True,
                 spec: dict | None = None):
        if not (1 <= n < d):
            raise ValueError("need 1 <= n < d")
        if lipschitz_bound > 1.0 + 1e-12 or lipschitz_bound < 0:
            raise ValueError("Lipschitz bound must lie in [0, 1]")
        self._A = A
        self.n = n
        self.d = d
        self.lipschitz_bound = float(lipschitz_bound)
        self.spec = spec
        if check:
            self.check_lipschitz()

    def __repr__(self):
        fam = self.spec.get("family") if self.spec else "custom"
        return f"LipschitzGraph({fam}, n={self.n}, d={self.d}, L={self.lipschitz_bound})"

    def A(self, u) -> np.ndarray:
        u = np.asarray(u, float).reshape(-1, self.n)
        out = np.asarray(self._A(u), float).reshape(len(u), self.d - self.n)
        return out

    def lift(self, u) -> np.ndarray:
        u = np.asarray(u, float).reshape(-1, self.n)
        return np.hstack([u, self.A(u)])

    def base(self, x) -> np.ndarray:
        """Pi_0: the first n coordinates."""
        return np.atleast_2d(np.asarray(x, float))[:, : self.n]

    def project(self, x) -> np.ndarray:
        """Pi_Gamma: vertical projection onto the graph."""
        return self.lift(self.base(x))

    def vertical_gap(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        diff = x[:, self.n:] - self.A(x[:, : self.n])
        return np.sqrt(np.sum(diff * diff, axis=1))

    def check_lipschitz(self, pairs: int = 10_000, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        u = rng.uniform(-2.0, 2.0, size=(pairs, self.n))
        v = rng.uniform(-2.0, 2.0, size=(pairs, self.n))
        w = u + rng.normal(scale=1e-3, size=(pairs, self.n))
        for x, y in ((u, v), (u, w)):
            lhs = np.linalg.norm(self.A(x) - self.A(y), axis=1)
            rhs = self.lipschitz_bound * np.linalg.norm(x - y, axis=1) + 1e-12
            if np.any(lhs > rhs):
                q = int(np.argmax(lhs - rhs))
                raise ValueError(f"Lipschitz bound violated at {x[q]} / {y[q]}")

    def to_dict(self) -> dict:
        if self.spec is None:
            raise ValueError("custom graphs cannot be serialised")
        return dict(self.spec)


# graph families ----------------------------------------------------------------

def flat_graph(n: int = 1, d: int = 2) -> LipschitzGraph:
    return LipschitzGraph(lambda u: np.zeros((len(u), d - n)), n, d, 0.0,
                          spec={"family": "flat", "n": n, "d": d})


def linear_graph(slope, n: int = 1, d: int = 2) -> LipschitzGraph:
    M = np.atleast_2d(np.asarray(slope, float)).reshape(d - n, n)
    lip = float(np.linalg.norm(M, 2))
    return LipschitzGraph(lambda u: u @ M.T, n, d, lip,
                          spec={"family": "linear", "n": n, "d": d, "slope": M.tolist()})


def abs_graph() -> LipschitzGraph:
    return LipschitzGraph(lambda u: np.abs(u), 1, 2, 1.0, spec={"family": "abs", "n": 1, "d": 2})


def sine_graph(amplitudes, frequencies, phases, n: int = 1, d: int = 2) -> LipschitzGraph:
    """A_j(u) = sum_k a_jk sin(w_jk . u + p_jk).

    ``amplitudes`` and ``phases`` have shape (d - n, K); ``frequencies`` has
    shape (d - n, K, n).  The bound sqrt(sum_j (sum_k |a_jk| |w_jk|)^2) is
    used as the Lipschitz constant.
    """
    a = np.asarray(amplitudes, float).reshape(d - n, -1)
    K = a.shape[1]
    w = np.asarray(frequencies, float).reshape(d - n, K, n)
    ph = np.asarray(phases, float).reshape(d - n, K)
    lip = float(np.sqrt(np.sum(np.sum(np.abs(a) * np.linalg.norm(w, axis=2), axis=1) ** 2)))

    def A(u):
        arg = np.einsum("jkn,mn->mjk", w, u) + ph[None]
        return np.sum(a[None] * np.sin(arg), axis=2)

    spec = {"family": "sines", "n": n, "d": d, "amplitudes": a.tolist(),
            "frequencies": w.tolist(), "phases": ph.tolist()}
    return LipschitzGraph(A, n, d, min(1.0, lip), spec=spec)


def random_graph(seed: int, n: int = 1, d: int = 2, terms: int = 4, lip: float = 1.0) -> LipschitzGraph:
    """Random sum of sines rescaled to Lipschitz constant ``lip``."""
    rng = np.random.default_rng(seed)
    k = d - n
    w = rng.uniform(0.5, 6.0, size=(k, terms, n)) * rng.choice([-1.0, 1.0], size=(k, terms, n))
    a = rng.uniform(0.2, 1.0, size=(k, terms)) / np.arange(1, terms + 1)
    ph = rng.uniform(0.0, 2 * math.pi, size=(k, terms))
    raw = math.sqrt(float(np.sum(np.sum(a * np.linalg.norm(w, axis=2), axis=1) ** 2)))
    a = a * (lip / raw) * (1 - 1e-12)
    return sine_graph(a, w, ph, n, d)


def graph_from_spec(spec: dict) -> LipschitzGraph:
    fam = spec.get("family")
    n, d = int(spec.get("n", 1)), int(spec.get("d", 2))
    if fam == "flat":
        return flat_graph(n, d)
    if fam == "linear":
        return linear_graph(spec["slope"], n, d)
    if fam == "abs":
        return abs_graph()
    if fam == "sines":
        return sine_graph(spec["amplitudes"], spec["frequencies"], spec["phases"], n, d)
    if fam == "random":
        return random_graph(int(spec["seed"]), n, d, int(spec.get("terms", 4)), float(spec.get("lip", 1.0)))
    raise ValueError(f"unknown graph family {fam!r}")


# surface measure ---------------------------------------------------------------

def sigma_quadrature(graph: LipschitzGraph, lo, hi, h: float) -> DiscreteMeasure:
    """Push-forward of an h-grid quadrature of Lebesgue measure on the box
    [lo, hi) of R^n onto the graph.  The spacing is adjusted per axis so that
    the cells tile the box exactly."""
    lo = np.broadcast_to(np.asarray(lo, float), (graph.n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, float), (graph.n,)).copy()
    if np.any(hi <= lo) or h <= 0:
        raise ValueError("empty region or nonpositive spacing")
    counts = np.ceil((hi - lo) / h - 1e-12).astype(int)
    steps = (hi - lo) / counts
    axes = [lo[i] + (np.arange(counts[i]) + 0.5) * steps[i] for i in range(graph.n)]
    U = np.array(list(product(*axes))) if graph.n > 1 else axes[0][:, None]
    w = np.full(len(U), float(np.prod(steps)))
    return DiscreteMeasure(graph.lift(U), w)


# dyadic lattice ----------------------------------------------------------------

def shift_offset(shift, n: int) -> np.ndarray:
    e = np.broadcast_to(np.asarray(shift, float), (n,))
    if np.any((e != 0) & (e != 1)):
        raise ValueError("shift entries must be 0 or 1")
    return e / 3.0


def lattice_index(x, offset, ell: float) -> np.ndarray:
    """Integer index of the half-open cube of side ``ell`` containing each
    point, consistent with faces ``offset + index * ell``."""
    x = np.atleast_2d(np.asarray(x, float))
    offset = np.asarray(offset, float)
    idx = np.floor((x - offset) / ell).astype(np.int64)
    low = offset + idx * ell
    idx = np.where(x < low, idx - 1, idx)
    high = offset + (idx + 1) * ell
    idx = np.where(x >= high, idx + 1, idx)
    return idx


def cube_diameter(graph: LipschitzGraph, corner, ell: float, samples: int = DIAM_SAMPLES) -> float:
    m = max(2, int(math.ceil(samples ** (1.0 / graph.n))))
    axes = [np.linspace(corner[i], corner[i] + ell, m) for i in range(graph.n)]
    U = np.array(list(product(*axes))) if graph.n > 1 else axes[0][:, None]
    return float(np.max(pdist(graph.lift(U)))) * DIAM_SAFETY


def cube_diameters(graph: LipschitzGraph, corners, ell: float, samples: int = DIAM_SAMPLES) -> np.ndarray:
    """:func:`cube_diameter` for many cubes of the same side."""
    corners = np.atleast_2d(np.asarray(corners, float))
    m = max(2, int(math.ceil(samples ** (1.0 / graph.n))))
    t = np.linspace(0.0, ell, m)
    offs = np.array(list(product(t, repeat=graph.n))) if graph.n > 1 else t[:, None]
    U = corners[:, None, :] + offs[None]
    P = graph.lift(U.reshape(-1, graph.n)).reshape(len(corners), len(offs), graph.d)
    out = np.array([np.max(pdist(p)) for p in P])
    return out * DIAM_SAFETY


@dataclass(frozen=True, eq=False)
class GammaCube:
    """Lift of the half-open base cube ``offset + index*ell + [0, ell)^n``."""

    level: int
    index: tuple
    shift: tuple
    corner: np.ndarray
    ell: float
    z: np.ndarray
    diam: float
    lam: float = LAMBDA

    @property
    def key(self):
        return (self.level, self.index, self.shift)

    @property
    def n(self):
        return len(self.index)

    @property
    def upper(self) -> np.ndarray:
        off = shift_offset(self.shift, self.n)
        return off + (np.asarray(self.index) + 1) * self.ell

    @property
    def ball(self) -> Ball:
        """B_Q = B(z_Q, 3 diam Q)."""
        return Ball(self.z, 3.0 * self.diam)

    @property
    def big_ball(self) -> Ball:
        """The enlarged ball Lambda * B_Q."""
        return Ball(self.z, 3.0 * self.lam * self.diam)

    def contains_base(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, float))
        return np.all((u >= self.corner) & (u < self.upper), axis=1)

    def contains_base_of(self, other: "GammaCube") -> bool:
        """Base-cube containment for cubes of the same shift."""
        if other.shift != self.shift or other.level < self.level:
            return False
        f = 2 ** (other.level - self.level)
        return all(o // f == s for o, s in zip(other.index, self.index))

    def children_indices(self):
        for b in product((0, 1), repeat=self.n):
            yield tuple(2 * i + bi for i, bi in zip(self.index, b))

    def parent_index(self):
        return tuple(i // 2 for i in self.index)

    def __repr__(self):
        return f"GammaCube(level={self.level}, index={self.index}, shift={self.shift})"

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "index": list(self.index),
            "shift": list(self.shift),
            "corner": self.corner.tolist(),
            "ell": self.ell,
            "z": self.z.tolist(),
            "diam": self.diam,
            "ball_radius": self.ball.radius,
            "big_ball_radius": self.big_ball.radius,
        }


def make_cube(graph: LipschitzGraph, level: int, index, shift=None, lam: float = LAMBDA,
              diam: float | None = None) -> GammaCube:
    n = graph.n
    index = tuple(int(i) for i in np.broadcast_to(index, (n,)))
    shift = tuple(int(s) for s in np.broadcast_to(0 if shift is None else shift, (n,)))
    ell = 2.0**-level
    off = shift_offset(shift, n)
    corner = off + np.asarray(index, float) * ell
    upper = off + (np.asarray(index, float) + 1) * ell
    center = 0.5 * (corner + upper)
    z = graph.lift(center)[0]
    corner.setflags(write=False)
    z.setflags(write=False)
    if diam is None:
        diam = cube_diameter(graph, corner, ell)
    return GammaCube(level, index, shift, corner, ell, z, float(diam), lam)


def build_lattice(graph: LipschitzGraph, root_index=None, depth: int = 1, shift=None,
                  root_level: int = 0) -> list:
    """Levels ``root_level .. root_level + depth`` of the Gamma-lattice below a root."""
    n = graph.n
    root = make_cube(graph, root_level, 0 if root_index is None else root_index, shift)
    levels = [[root]]
    off = shift_offset(root.shift, n)
    for _ in range(depth):
        idxs = [idx for Q in levels[-1] for idx in Q.children_indices()]
        level = levels[-1][0].level + 1
        ell = 2.0**-level
        diams = cube_diameters(graph, off + np.asarray(idxs, float) * ell, ell)
        levels.append([make_cube(graph, level, idx, root.shift, diam=dm) for idx, dm in zip(idxs, diams)])
    return levels


def lattice_to_json(levels) -> str:
    return json.dumps([[Q.to_dict() for Q in level] for level in levels])


# one-third trick ------------------------------------------------------------

class ContainerNotFound(ValueError):
    pass


def container_k0(n: int, lipschitz_bound: float = 1.0, lam: float = LAMBDA) -> int:
    """Smallest k with 2^k / 6 >= 9 * lam * sqrt(1 + L^2) * sqrt(n) * 1.01.

    With this k any ball of radius 9*lam*diam(Q) centred above Q fits in
    the base of some shifted cube of side 2^k * ell(Q): the boundaries of
    the grids D^0 and D^1 at a fixed dyadic scale ell are at least ell/3
    apart, so every point is ell/6 away from the faces of one of them.
    """
    need = 6.0 * 9.0 * lam * math.sqrt(1.0 + lipschitz_bound**2) * math.sqrt(n) * DIAM_SAFETY
    return int(math.ceil(math.log2(need)))


@dataclass(frozen=True, eq=False)
class Container:
    cube: GammaCube
    shift: tuple
    level: int


def find_shifted_container(graph: LipschitzGraph, Q: GammaCube, lam: float = LAMBDA,
                           k0: int | None = None) -> Container:
    """Shifted cube P with ell(P) = 2^k0 ell(Q) and 3 * lam * B_Q inside V(P).

    Shifts are tried in lexicographic order; the first admissible one wins.
    """
    if k0 is None:
        k0 = container_k0(graph.n, graph.lipschitz_bound, lam)
    level = Q.level - k0
    if level < 0:
        raise ContainerNotFound(f"ell(Q) = {Q.ell} exceeds 2^-k0 = {2.0**-k0}")
    ell = 2.0**-level
    x0 = Q.z[: graph.n]
    rho = 9.0 * lam * Q.diam
    for e in product((0, 1), repeat=graph.n):
        off = shift_offset(e, graph.n)
        idx = lattice_index(x0, off, ell)[0]
        lo = off + idx * ell
        hi = off + (idx + 1) * ell
        if np.all(x0 - rho >= lo) and np.all(x0 + rho < hi):
            P = make_cube(graph, level, tuple(int(i) for i in idx), e, lam)
            return Container(P, tuple(e), level)
    raise ContainerNotFound(f"no shifted cube at level {level} contains the ball around {Q}")


def vertical_membership(P: GammaCube, x) -> np.ndarray:
    """x in V(P), the vertical cylinder over the half-open base of P."""
    x = np.atleast_2d(np.asarray(x, float))
    return P.contains_base(x[:, : P.n])


def sample_ball(ball: Ball, count: int, rng, boundary_fraction: float = 0.5) -> np.ndarray:
    """Points of the closed ball: a share on the sphere, the rest inside."""
    d = ball.dim
    dirs = rng.normal(size=(count, d))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    nb = int(round(boundary_fraction * count))
    radii = np.empty(count)
    radii[:nb] = 1.0
    radii[nb:] = rng.random(count - nb) ** (1.0 / d)
    return ball.center + ball.radius * radii[:, None] * dirs
