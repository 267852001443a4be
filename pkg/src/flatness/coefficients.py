"""Flatness coefficients of discrete measures and their dyadic profiles.

Conventions
-----------
* Balls are open.  ``mu(B)`` always means the sharp mass of the open ball.
* The flat comparison measure ``H^n|L`` is replaced by a midpoint grid
  quadrature on ``L`` with spacing ``h`` (nodes at ``foot + (k + 1/2) h``
  in plane coordinates, where ``foot`` is the projection of the centre).
* Planes are admissible when they meet the closed ball.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .measure import (
    AffinePlane,
    Ball,
    DiscreteMeasure,
    UndefinedCoefficient,
    cutoff_weights,
    delta_coefficient,
    weighted_restrict,
)
from .transport import entropic_wasserstein, exact_wasserstein, fb_distance

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SearchConfig:
    """Plane search and quadrature settings.

    ``h_rel`` is the quadrature spacing divided by the radius; ``None``
    means 1/64 for n = 1 and 1/8 otherwise.  ``grid=None`` switches the
    global (angle x offset) scan on exactly when n = 1 and d = 2.
    """

    h_rel: float | None = None
    grid: bool | None = None
    grid_angles: int = 32
    grid_offsets: int = 16
    grid_h_rel: float = 1.0 / 8.0
    maxfev: int = 120
    xatol: float = 1e-6
    fatol: float = 1e-10
    rot_step: float = 0.05
    off_step: float = 0.05
    solver: str = "exact"
    epsilon: float = 1e-3
    golden_iters: int = 48

    def spacing(self, r: float, n: int) -> float:
        rel = self.h_rel if self.h_rel is not None else (1.0 / 64.0 if n == 1 else 1.0 / 8.0)
        return rel * r

    def use_grid(self, n: int, d: int) -> bool:
        if self.grid is None:
            return n == 1 and d == 2
        return bool(self.grid) and n == 1 and d == 2


DEFAULT_CONFIG = SearchConfig()


@dataclass(frozen=True, eq=False)
class PlaneFit:
    plane: AffinePlane
    value: float
    method: str
    trace: tuple = ()


# quadrature ----------------------------------------------------------------

def _plane_grid(L: AffinePlane, ball: Ball, h: float, window: float):
    """Midpoint grid nodes of L inside the ball of radius window*r."""
    if h <= 0:
        raise ValueError("spacing must be positive")
    R = window * ball.radius
    foot = L.project(ball.center)[0]
    off = float(L.distance(ball.center)[0])
    if off >= R:
        raise ValueError("plane does not meet the quadrature window")
    rho = math.sqrt(R * R - off * off)
    kmax = int(math.ceil(rho / h))
    ticks = (np.arange(-kmax, kmax) + 0.5) * h
    if L.n == 1:
        T = ticks[:, None]
    else:
        T = np.array(list(product(ticks, repeat=L.n)))
    T = T[np.sum(T * T, axis=1) < rho * rho]
    pts = foot + T @ L.frame
    return pts


def flat_quadrature(L: AffinePlane, ball: Ball, h: float) -> DiscreteMeasure:
    """phi_B-weighted grid quadrature of H^n restricted to L (support in 3B)."""
    pts = _plane_grid(L, ball, h, 3.0)
    w = h**L.n * cutoff_weights(ball, pts)
    keep = w > 0
    if not np.any(keep):
        raise ValueError("plane does not meet 3B")
    return DiscreteMeasure(pts[keep], w[keep])


def plane_ball_quadrature(L: AffinePlane, ball: Ball, h: float) -> DiscreteMeasure:
    """Unweighted grid quadrature of H^n on L inside the open ball."""
    try:
        pts = _plane_grid(L, ball, h, 1.0)
    except ValueError:
        return DiscreteMeasure.empty(ball.dim)
    pts = pts[ball.contains(pts)] if len(pts) else pts
    return DiscreteMeasure(pts, np.full(len(pts), h**L.n))


# planes --------------------------------------------------------------------

def pca_plane(points, weights, n: int):
    """Weighted PCA plane.  Returns ``(plane, residual)`` where residual is the
    weighted sum of squared distances to the plane."""
    pts = np.asarray(points, float)
    w = np.asarray(weights, float)
    d = pts.shape[1]
    mass = w.sum()
    if mass <= 0:
        raise UndefinedCoefficient("no mass to fit")
    mean = (w @ pts) / mass
    X = pts - mean
    cov = (X * w[:, None]).T @ X
    vals, vecs = np.linalg.eigh(cov)
    frame = vecs[:, d - n:][:, ::-1].T
    frame, _ = np.linalg.qr(frame.T)
    plane = AffinePlane(mean, frame.T)
    residual = float(max(0.0, vals[: d - n].sum()))
    return plane, residual


def clamp_to_ball(L: AffinePlane, ball: Ball) -> AffinePlane:
    """Move L along its normal so that it meets the closed ball."""
    dist = float(L.distance(ball.center)[0])
    if dist <= ball.radius:
        return L
    foot = L.project(ball.center)[0]
    shift = (ball.center - foot) * (1.0 - ball.radius * (1.0 - 1e-12) / dist)
    return AffinePlane(foot + shift, L.frame)


class _Chart:
    """Local coordinates (A, t) around a plane: directions F0 + A N0, offset t N0."""

    def __init__(self, plane: AffinePlane, ball: Ball):
        self.F0 = plane.frame
        self.N0 = plane.normals()
        self.b0 = plane.project(ball.center)[0]
        self.ball = ball
        self.n, self.d = plane.frame.shape

    @property
    def size(self):
        k = self.d - self.n
        return self.n * k + k

    def plane(self, x) -> AffinePlane:
        k = self.d - self.n
        A = np.asarray(x[: self.n * k]).reshape(self.n, k)
        t = np.asarray(x[self.n * k:])
        dirs = self.F0 + A @ self.N0
        L = AffinePlane.from_directions(self.b0 + (t * self.ball.radius) @ self.N0, dirs)
        return clamp_to_ball(L, self.ball)


def _line_grid(ball: Ball, n_angles: int, n_offsets: int):
    z, r = ball.center, ball.radius
    for i in range(n_angles):
        th = math.pi * i / n_angles
        u = np.array([math.cos(th), math.sin(th)])
        nv = np.array([-u[1], u[0]])
        for o in np.linspace(-r, r, n_offsets):
            yield AffinePlane(z + o * nv, u[None, :])


def search_plane(objective, starts, ball: Ball, n: int, config: SearchConfig,
                 coarse_objective=None) -> PlaneFit:
    """Two-stage plane search: start planes (+ optional line grid), then
    Nelder-Mead in a local chart.  The best plane ever evaluated wins."""
    trace = []
    best = {"value": math.inf, "plane": None, "label": None}

    def record(L, label):
        v = float(objective(L))
        if v < best["value"]:
            best.update(value=v, plane=L, label=label)
        return v

    start_best = None
    for label, L in starts:
        v = record(L, label)
        trace.append((label, v))
        if start_best is None or v < start_best[0]:
            start_best = (v, L, label)
    d = ball.dim
    if config.use_grid(n, d):
        coarse = coarse_objective or objective
        gbest = (math.inf, None)
        for L in _line_grid(ball, config.grid_angles, config.grid_offsets):
            try:
                v = float(coarse(L))
            except ValueError:
                continue
            if v < gbest[0]:
                gbest = (v, L)
        if gbest[1] is not None:
            v = record(gbest[1], "grid")
            trace.append(("grid", v))
            if v < start_best[0]:
                start_best = (v, gbest[1], "grid")
    v0, L0, label0 = start_best
    chart = _Chart(L0, ball)
    if chart.size > 0 and config.maxfev > 0 and v0 > 0:
        x0 = np.zeros(chart.size)
        k = d - n
        steps = np.array([config.rot_step] * (n * k) + [config.off_step] * k)
        simplex = np.vstack([x0] + [x0 + np.eye(chart.size)[i] * steps[i] for i in range(chart.size)])

        def f(x):
            try:
                return record(chart.plane(x), "refined")
            except ValueError:
                return math.inf

        minimize(f, x0, method="Nelder-Mead",
                 options={"initial_simplex": simplex, "maxfev": config.maxfev,
                          "xatol": config.xatol, "fatol": config.fatol})
        trace.append(("refined", best["value"]))
    return PlaneFit(best["plane"], max(0.0, best["value"]), best["label"], tuple(trace))


# alpha_p -----------------------------------------------------------------------

def _transport(mu, nu, p, config: SearchConfig):
    if config.solver == "entropic":
        return entropic_wasserstein(mu, nu, p, epsilon=config.epsilon).distance
    return exact_wasserstein(mu, nu, p).distance


class _AlphaObjective:
    def __init__(self, mu: DiscreteMeasure, ball: Ball, p: int, config: SearchConfig, h: float):
        self.ball = ball
        self.p = p
        self.config = config
        self.h = h
        self.mass_B = mu.ball_mass(ball)
        if self.mass_B <= 0:
            raise UndefinedCoefficient("mu(B) = 0")
        self.phimu = weighted_restrict(mu, ball, "cutoff")

    def __call__(self, L: AffinePlane, h: float | None = None) -> float:
        quad = flat_quadrature(L, self.ball, h or self.h)
        a = self.phimu.mass / quad.mass
        W = _transport(self.phimu, quad.scaled(a), self.p, self.config)
        return W / (self.ball.radius * self.mass_B ** (1.0 / self.p))


def alpha_p_given_plane(mu: DiscreteMeasure, ball: Ball, L: AffinePlane, p: int = 2,
                        h: float | None = None, config: SearchConfig = DEFAULT_CONFIG) -> float:
    """alpha_{mu,p,L}(B) with the flat measure discretised at spacing h."""
    h = h if h is not None else config.spacing(ball.radius, L.n)
    return _AlphaObjective(mu, ball, p, config, h)(L)


def best_plane(mu: DiscreteMeasure, ball: Ball, p: int = 2, n: int = 1,
               config: SearchConfig = DEFAULT_CONFIG) -> PlaneFit:
    """Approximate minimiser of alpha_{mu,p,L}(B) over admissible planes.

    Minimisers need not be unique; ties go to whichever candidate the search
    meets first, so the plane (not the value) depends on the search order.
    """
    h = config.spacing(ball.radius, n)
    obj = _AlphaObjective(mu, ball, p, config, h)
    L0, _ = pca_plane(obj.phimu.points, obj.phimu.weights, n)
    L0 = clamp_to_ball(L0, ball)
    hc = config.grid_h_rel * ball.radius
    return search_plane(obj, [("pca_init", L0)], ball, n, config,
                        coarse_objective=lambda L: obj(L, hc))


def alpha_p(mu: DiscreteMeasure, ball: Ball, p: int = 2, n: int = 1,
            config: SearchConfig = DEFAULT_CONFIG) -> float:
    return best_plane(mu, ball, p, n, config).value


def alpha_hat(nu: DiscreteMeasure, ball: Ball, L_ref: AffinePlane, p: int = 2,
              h: float | None = None, config: SearchConfig = DEFAULT_CONFIG) -> float:
    """alpha evaluated at a reference plane (typically the best plane of sigma)."""
    return alpha_p_given_plane(nu, ball, L_ref, p, h, config)


def alpha2_lower_bound(mu: DiscreteMeasure, ball: Ball, n: int = 1) -> float:
    """Rigorous lower bound for alpha_2 over all planes.

    Any plan from phi_B mu to a measure on L moves each atom at least its
    distance to L, so the phi_B-weighted PCA residual bounds W_2^2 below.
    """
    mass_B = mu.ball_mass(ball)
    if mass_B <= 0:
        raise UndefinedCoefficient("mu(B) = 0")
    phimu = weighted_restrict(mu, ball, "cutoff")
    _, resid = pca_plane(phimu.points, phimu.weights, n)
    return math.sqrt(resid / mass_B) / ball.radius


# beta ------------------------------------------------------------------------

def beta_p_given_plane(mu: DiscreteMeasure, x, r: float, L: AffinePlane, p: int = 2) -> float:
    ball = Ball(x, r)
    sub = weighted_restrict(mu, ball, "sharp")
    if len(sub) == 0:
        return 0.0
    dist = L.distance(sub.points) / r
    return float((np.sum(sub.weights * dist**p) / r**L.n) ** (1.0 / p))


def beta_fit(mu: DiscreteMeasure, x, r: float, p: int = 2, n: int = 1,
             config: SearchConfig = DEFAULT_CONFIG) -> PlaneFit:
    """Best plane for beta_p.  p = 2 is solved exactly by weighted PCA."""
    ball = Ball(x, r)
    sub = weighted_restrict(mu, ball, "sharp")
    d = ball.dim
    if len(sub) == 0:
        return PlaneFit(AffinePlane(ball.center, np.eye(d)[:n]), 0.0, "pca_init")
    L0, resid = pca_plane(sub.points, sub.weights, n)
    if p == 2:
        return PlaneFit(L0, math.sqrt(resid / r**n) / r, "pca_init")
    obj = lambda L: beta_p_given_plane(sub, x, r, L, p)
    return search_plane(obj, [("pca_init", L0)], ball, n, config)


def beta_p(mu: DiscreteMeasure, x, r: float, p: int = 2, n: int = 1,
           config: SearchConfig = DEFAULT_CONFIG) -> float:
    return beta_fit(mu, x, r, p, n, config).value


# bilateral beta --------------------------------------------------------------

def _support_tree(mu: DiscreteMeasure):
    pos = mu.points[mu.weights > 0]
    if len(pos) == 0:
        raise UndefinedCoefficient("empty support")
    return cKDTree(pos)


def bilateral_beta2_given_plane(mu: DiscreteMeasure, x, r: float, L: AffinePlane,
                                h: float | None = None, tree=None,
                                config: SearchConfig = DEFAULT_CONFIG) -> float:
    ball = Ball(x, r)
    h = h if h is not None else config.spacing(r, L.n)
    tree = tree if tree is not None else _support_tree(mu)
    sub = weighted_restrict(mu, ball, "sharp")
    t1 = float(np.sum(sub.weights * (L.distance(sub.points) / r) ** 2)) if len(sub) else 0.0
    quad = plane_ball_quadrature(L, ball, h)
    t2 = 0.0
    if len(quad):
        dist, _ = tree.query(quad.points)
        t2 = float(np.sum(quad.weights * (dist / r) ** 2))
    return math.sqrt((t1 + t2) / r**L.n)


def bilateral_beta2(mu: DiscreteMeasure, x, r: float, n: int = 1,
                    config: SearchConfig = DEFAULT_CONFIG) -> float:
    ball = Ball(x, r)
    tree = _support_tree(mu)
    h = config.spacing(r, n)
    hc = config.grid_h_rel * r
    sub = weighted_restrict(mu, ball, "sharp")
    if len(sub):
        L0, _ = pca_plane(sub.points, sub.weights, n)
    else:
        L0 = AffinePlane(ball.center, np.eye(ball.dim)[:n])
    L0 = clamp_to_ball(L0, ball)
    obj = lambda L: bilateral_beta2_given_plane(mu, x, r, L, h, tree)
    coarse = lambda L: bilateral_beta2_given_plane(mu, x, r, L, hc, tree)
    return search_plane(obj, [("pca_init", L0)], ball, n, config, coarse).value


# Tolsa's alpha -------------------------------------------------------------

def _golden_min(f, lo, hi, iters):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    best = min((f(lo), lo), (fc, c), (fd, d))
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        best = min(best, (fc, c), (fd, d))
    return best


def tolsa_alpha_given_plane(mu: DiscreteMeasure, ball: Ball, L: AffinePlane,
                            h: float | None = None, config: SearchConfig = DEFAULT_CONFIG,
                            iters: int | None = None, return_c: bool = False):
    """min over c >= 0 of F_B(mu, c H^n|L) / (r mu(B)); F is convex in c."""
    mass_B = mu.ball_mass(ball)
    if mass_B <= 0:
        raise UndefinedCoefficient("mu(B) = 0")
    h = h if h is not None else config.spacing(ball.radius, L.n)
    sub = weighted_restrict(mu, ball, "sharp")
    quad = plane_ball_quadrature(L, ball, h)
    norm = ball.radius * mass_B
    if len(quad) == 0:
        val = fb_distance(sub, DiscreteMeasure.empty(ball.dim), ball) / norm
        return (val, 0.0) if return_c else val
    tent = float(np.sum(quad.weights * (ball.radius - ball.distances(quad.points))))
    c_hi = 2.0 * ball.radius * mass_B / tent * (1.0 + 1e-9) if tent > 0 else 1.0
    f = lambda c: fb_distance(sub, quad.scaled(c), ball) / norm
    val, c = _golden_min(f, 0.0, c_hi, iters or config.golden_iters)
    return (val, c) if return_c else val


def tolsa_alpha(mu: DiscreteMeasure, ball: Ball, n: int = 1,
                config: SearchConfig = DEFAULT_CONFIG) -> float:
    mass_B = mu.ball_mass(ball)
    if mass_B <= 0:
        raise UndefinedCoefficient("mu(B) = 0")
    sub = weighted_restrict(mu, ball, "sharp")
    L0, _ = pca_plane(sub.points, sub.weights, n)
    L0 = clamp_to_ball(L0, ball)
    h = config.spacing(ball.radius, n)
    hc = config.grid_h_rel * ball.radius
    obj = lambda L: tolsa_alpha_given_plane(sub, ball, L, h, config)
    coarse = lambda L: tolsa_alpha_given_plane(sub, ball, L, hc, config, iters=24)
    return search_plane(obj, [("pca_init", L0)], ball, n, config, coarse).value


# profiles --------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileRow:
    scale: float
    value: float | None  # None marks an undefined coefficient
    partial: float


@dataclass(frozen=True, eq=False)
class CoefficientProfile:
    center: tuple
    kind: str
    rows: tuple

    @property
    def values(self):
        return [row.value for row in self.rows]

    @property
    def partial_sums(self):
        return [row.partial for row in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale", "value", "partial_sum"])
        for row in self.rows:
            w.writerow([repr(row.scale), "" if row.value is None else repr(row.value), repr(row.partial)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "kind": self.kind,
            "rows": [{"scale": r.scale, "value": r.value, "partial_sum": r.partial} for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def plot_data(self) -> str:
        """Two columns: log r and value^2 (defined rows only)."""
        lines = [f"{math.log(r.scale)!r} {r.value * r.value!r}" for r in self.rows if r.value is not None]
        return "\n".join(lines) + ("\n" if lines else "")


KINDS = ("alpha", "alpha_hat", "beta", "bilateral_beta2", "tolsa_alpha", "delta")


def coefficient_at_scale(mu: DiscreteMeasure, x, r: float, kind: str, n: int = 1, p: int = 2,
                         config: SearchConfig = DEFAULT_CONFIG, reference: DiscreteMeasure | None = None):
    """One coefficient value; ``None`` when undefined (mu(B) = 0)."""
    ball = Ball(x, r)
    try:
        if kind == "alpha":
            return alpha_p(mu, ball, p, n, config)
        if kind == "alpha_hat":
            if reference is None:
                raise ValueError("alpha_hat needs a reference measure")
            L = best_plane(reference, ball, 2, n, config).plane
            return alpha_hat(mu, ball, L, 2, config=config)
        if kind == "beta":
            return beta_p(mu, x, r, p, n, config)
        if kind == "bilateral_beta2":
            return bilateral_beta2(mu, x, r, n, config)
        if kind == "tolsa_alpha":
            return tolsa_alpha(mu, ball, n, config)
        if kind == "delta":
            return delta_coefficient(mu, x, r, n)
    except UndefinedCoefficient:
        return None
    raise ValueError(f"unknown coefficient kind {kind!r}")


def profile_from_values(x, kind: str, scales, values) -> CoefficientProfile:
    rows = []
    total = 0.0
    step = math.log(2.0)
    for r, v in zip(scales, values):
        if v is not None:
            total += v * v * step
        rows.append(ProfileRow(float(r), None if v is None else float(v), total))
    return CoefficientProfile(tuple(float(c) for c in np.atleast_1d(x)), kind, tuple(rows))


def dyadic_scales(r0: float, depth: int):
    return [r0 * 2.0**-k for k in range(depth)]


def square_function(mu: DiscreteMeasure, x, r0: float, depth: int, kind: str, n: int = 1, p: int = 2,
                    config: SearchConfig = DEFAULT_CONFIG, reference: DiscreteMeasure | None = None,
                    executor=None) -> CoefficientProfile:
    """Per-scale values at r_k = r0 2^-k (k < depth) and partial sums of
    value^2 * log 2.  Rows are independent; ``executor`` (anything with a
    ``map``) may evaluate them concurrently."""
    if depth < 1 or r0 <= 0:
        raise ValueError("need depth >= 1 and r0 > 0")
    scales = dyadic_scales(r0, depth)
    job = lambda r: coefficient_at_scale(mu, x, r, kind, n, p, config, reference)
    values = list(executor.map(job, scales)) if executor is not None else [job(r) for r in scales]
    return profile_from_values(x, kind, scales, values)
