"""Deterministic test measures with known rectifiability status.

Every generator returns the measure together with ground-truth metadata
(the supporting plane or graph when there is one), so tests can use the
true plane instead of searching for it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .graph import graph_from_spec, lattice_index, sigma_quadrature
from .measure import AffinePlane, DiscreteMeasure, coordinate_plane

GENERATORS = ("flat", "lipschitz_graph", "four_corner_cantor", "slab", "dirac_mix", "graph_with_holes")


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise InvalidSpec(f"unknown generator {self.kind!r}; expected one of {GENERATORS}")

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        data = dict(data)
        try:
            kind = data.pop("kind")
        except KeyError:
            raise InvalidSpec("generator spec needs a 'kind'") from None
        seed = int(data.pop("seed", 0))
        params = data.pop("params", {})
        params.update(data)
        return cls(kind, params, seed)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "params": self.params}


@dataclass(frozen=True, eq=False)
class Generated:
    measure: DiscreteMeasure
    metadata: dict

    @property
    def plane(self) -> AffinePlane | None:
        p = self.metadata.get("plane")
        return None if p is None else AffinePlane(np.asarray(p["base"]), np.asarray(p["frame"]))

    @property
    def graph(self):
        g = self.metadata.get("graph")
        return None if g is None else graph_from_spec(g)


def _plane_meta(L: AffinePlane) -> dict:
    return {"base": L.base.tolist(), "frame": L.frame.tolist()}


def _positive(params, name, default=None, kind=float):
    v = params.get(name, default)
    if v is None:
        raise InvalidSpec(f"missing parameter {name!r}")
    v = kind(v)
    if v <= 0:
        raise InvalidSpec(f"{name} must be positive")
    return v


def _dims(params):
    n = int(params.get("n", 1))
    d = int(params.get("d", 2))
    if not (1 <= n < d):
        raise InvalidSpec("need 1 <= n < d")
    return n, d


def _grid(count, extent, n):
    """Midpoint grid with ``count`` cells per axis on [-extent, extent]^n."""
    h = 2.0 * extent / count
    t = -extent + (np.arange(count) + 0.5) * h
    U = t[:, None] if n == 1 else np.array(list(product(t, repeat=n)))
    return U, h


def _flat(spec: GeneratorSpec) -> Generated:
    p = spec.params
    n, d = _dims(p)
    count = _positive(p, "count", 100, int)
    extent = _positive(p, "extent", 1.0)
    density = _positive(p, "density", 1.0)
    U, h = _grid(count, extent, n)
    pts = np.hstack([U, np.zeros((len(U), d - n))])
    mu = DiscreteMeasure(pts, np.full(len(U), density * h**n))
    L = coordinate_plane(d, n)
    return Generated(mu, {"kind": "flat", "plane": _plane_meta(L), "spacing": h, "density": density})


def _graph_sample(p, rng):
    gspec = p.get("graph", {"family": "random", "seed": 0})
    graph = graph_from_spec(gspec)
    lo = np.broadcast_to(np.asarray(p.get("lo", 0.0), float), (graph.n,))
    hi = np.broadcast_to(np.asarray(p.get("hi", 1.0), float), (graph.n,))
    h = _positive(p, "h", 2.0**-10)
    mu = sigma_quadrature(graph, lo, hi, h)
    density = p.get("density", 1.0)
    if isinstance(density, dict):
        # rho(u) = base + amp * sin(freq . u + phase), kept positive
        base = float(density.get("base", 1.0))
        amp = float(density.get("amp", 0.5))
        freq = np.broadcast_to(np.asarray(density.get("freq", 2 * np.pi), float), (graph.n,))
        phase = float(density.get("phase", 0.0))
        if amp >= base:
            raise InvalidSpec("density amplitude must be below its base value")
        rho = base + amp * np.sin(mu.points[:, : graph.n] @ freq + phase)
    else:
        rho = np.full(len(mu), _positive(p, "density", 1.0))
    noise = float(p.get("noise", 0.0))
    pts = mu.points
    if noise > 0:
        pts = pts.copy()
        pts[:, graph.n:] += rng.uniform(-noise, noise, size=pts[:, graph.n:].shape)
    return graph, gspec, lo, hi, h, DiscreteMeasure(pts, mu.weights * rho)


def _lipschitz_graph(spec: GeneratorSpec) -> Generated:
    rng = np.random.default_rng(spec.seed)
    graph, gspec, lo, hi, h, mu = _graph_sample(spec.params, rng)
    return Generated(mu, {"kind": "lipschitz_graph", "graph": gspec, "lo": lo.tolist(), "hi": hi.tolist(),
                          "spacing": h, "density": spec.params.get("density", 1.0)})


def cantor_points(g: int) -> np.ndarray:
    """Centres (2X + 1) / (2 * 4^g) of the generation-g four-corner cells,
    X running over integers whose base-4 digits are 0 or 3."""
    if g < 0:
        raise InvalidSpec("generation must be >= 0")
    digits = np.array([0, 3])
    X = np.zeros(1, dtype=np.int64)
    for _ in range(g):
        X = (4 * X[:, None] + digits[None]).ravel()
    XY = np.array(list(product(X, X)), dtype=np.int64)
    return (2 * XY + 1) / (2.0 * 4.0**g)


def _four_corner_cantor(spec: GeneratorSpec) -> Generated:
    p = spec.params
    g = int(p.get("generation", p.get("g", 5)))
    if g < 0 or g > 10:
        raise InvalidSpec("generation must lie in 0..10")
    pts = cantor_points(g)
    mu = DiscreteMeasure(pts, np.full(len(pts), 4.0**-g))
    return Generated(mu, {"kind": "four_corner_cantor", "generation": g, "contraction": 0.25})


def _slab(spec: GeneratorSpec) -> Generated:
    p = spec.params
    n, d = _dims(p)
    width = _positive(p, "width", 1.0)
    thickness = _positive(p, "thickness", 0.5)
    h = _positive(p, "h", 1.0 / 64)
    density = _positive(p, "density", 1.0)
    axes = []
    for i in range(n + 1):
        half = width if i < n else thickness
        m = max(1, int(np.ceil(2 * half / h - 1e-12)))
        step = 2 * half / m
        axes.append(-half + (np.arange(m) + 0.5) * step)
    U = np.array(list(product(*axes)))
    vol = np.prod([2 * (width if i < n else thickness) / len(a) for i, a in enumerate(axes)])
    pts = np.hstack([U, np.zeros((len(U), d - n - 1))])
    mu = DiscreteMeasure(pts, np.full(len(U), density * vol))
    return Generated(mu, {"kind": "slab", "plane": _plane_meta(coordinate_plane(d, n)),
                          "thickness": thickness, "density": density})


def _dirac_mix(spec: GeneratorSpec) -> Generated:
    p = spec.params
    n, d = _dims(p)
    rng = np.random.default_rng(spec.seed)
    count = _positive(p, "count", 1, int)
    spread = float(p.get("spread", 0.5))
    if count == 1 and "atoms" not in p:
        U = np.zeros((1, n))
        w = np.array([float(p.get("mass", 1.0))])
    elif "atoms" in p:
        U = np.asarray(p["atoms"], float).reshape(-1, n)
        w = np.asarray(p.get("weights", np.ones(len(U))), float)
    else:
        U = rng.uniform(-spread, spread, size=(count, n))
        w = rng.uniform(0.5, 1.5, size=count)
    pts = np.hstack([U, np.zeros((len(U), d - n))])
    return Generated(DiscreteMeasure(pts, w), {"kind": "dirac_mix", "plane": _plane_meta(coordinate_plane(d, n))})


def _graph_with_holes(spec: GeneratorSpec) -> Generated:
    p = spec.params
    rng = np.random.default_rng(spec.seed)
    graph, gspec, lo, hi, h, mu = _graph_sample(p, rng)
    n = graph.n
    holes = p.get("holes")
    if holes is None:
        level = int(p.get("hole_level", 3))
        count = int(p.get("hole_count", 2))
        idx = np.unique(lattice_index(mu.points[:, :n], np.zeros(n), 2.0**-level), axis=0)
        pick = rng.choice(len(idx), size=min(count, len(idx)), replace=False)
        holes = [[level, idx[i].tolist()] for i in sorted(pick)]
    keep = np.ones(len(mu), dtype=bool)
    for level, index in holes:
        ell = 2.0**-int(level)
        inside = np.all(lattice_index(mu.points[:, :n], np.zeros(n), ell) == np.asarray(index), axis=1)
        keep &= ~inside
    return Generated(mu.select(keep), {"kind": "graph_with_holes", "graph": gspec, "holes": holes,
                                       "lo": lo.tolist(), "hi": hi.tolist(), "spacing": h})


_DISPATCH = {
    "flat": _flat,
    "lipschitz_graph": _lipschitz_graph,
    "four_corner_cantor": _four_corner_cantor,
    "slab": _slab,
    "dirac_mix": _dirac_mix,
    "graph_with_holes": _graph_with_holes,
}


def generate(spec) -> Generated:
    """Build the measure described by a GeneratorSpec (or its dict form)."""
    if isinstance(spec, dict):
        spec = GeneratorSpec.from_dict(spec)
    try:
        return _DISPATCH[spec.kind](spec)
    except InvalidSpec:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise InvalidSpec(f"bad parameters for {spec.kind}: {exc}") from exc


def metadata_json(gen: Generated) -> str:
    return json.dumps(gen.metadata, sort_keys=True)
