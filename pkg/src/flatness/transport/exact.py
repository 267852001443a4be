"""Exact W_p between discrete measures via the transportation simplex."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..measure import DiscreteMeasure
from ._kernels import simplex_module

MASS_RTOL = 1e-9
CERTIFICATE_RTOL = 1e-9


class MassMismatch(ValueError):
    pass


class CertificateError(RuntimeError):
    """The final basis failed the dual feasibility check."""


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse plan: ``rows[q] -> cols[q]`` carries ``mass[q] > 0``."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    p: int

    @property
    def entries(self) -> list:
        return [(int(i), int(j), float(x)) for i, j, x in zip(self.rows, self.cols, self.mass)]

    def marginals(self, n_source: int, n_target: int):
        rs = np.bincount(self.rows, weights=self.mass, minlength=n_source)
        cs = np.bincount(self.cols, weights=self.mass, minlength=n_target)
        return rs, cs

    def cost(self, source: DiscreteMeasure, target: DiscreteMeasure) -> float:
        diff = source.points[self.rows] - target.points[self.cols]
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        return float(math.fsum(self.mass * dist**self.p))


@dataclass(frozen=True, eq=False)
class TransportResult:
    distance: float
    plan: TransportPlan
    solver: str
    info: dict | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "p": self.plan.p,
                "distance": self.distance,
                "solver": self.solver,
                "plan": [[i, j, x] for i, j, x in self.plan.entries],
            }
        )


def cost_matrix(x: np.ndarray, y: np.ndarray, p: int) -> np.ndarray:
    if p == 1:
        return cdist(x, y, "euclidean")
    if p == 2:
        return cdist(x, y, "sqeuclidean")
    raise ValueError("only p in {1, 2} is supported")


def _check_p(p):
    if p not in (1, 2):
        raise ValueError("only p in {1, 2} is supported")


def matched_weights(mu: DiscreteMeasure, nu: DiscreteMeasure, rescale: bool = False):
    """Positive parts of both weight vectors, with nu's mass matched to mu's.

    Masses that differ by more than ``MASS_RTOL`` (relative) raise unless
    ``rescale`` is set, in which case the lighter measure is scaled up.
    """
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    ia = np.flatnonzero(mu.weights > 0)
    ib = np.flatnonzero(nu.weights > 0)
    if ia.size == 0 or ib.size == 0:
        raise ValueError("empty measure")
    a = mu.weights[ia].astype(np.float64)
    b = nu.weights[ib].astype(np.float64)
    ma, mb = math.fsum(a), math.fsum(b)
    if abs(ma - mb) > MASS_RTOL * max(ma, mb):
        if not rescale:
            raise MassMismatch(f"masses differ: {ma!r} vs {mb!r}")
        if ma < mb:
            a = a * (mb / ma)
            return ia, ib, a, b
    b = b * (math.fsum(a) / mb)
    return ia, ib, a, b


def solve_cost(a, b, C, pricing="block", backend=None):
    """Solve min <C, P> over plans with marginals (a, b).

    Returns ``(rows, cols, flows, u, v, iterations)`` for the optimal basis.
    A dual feasibility certificate is checked before returning.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    order = np.argsort(C, axis=None, kind="stable").astype(np.int64)
    mod = simplex_module(backend)
    bi, bj, bx, u, v, it = mod.solve(a, b, C, order, pricing == "dantzig", -1)
    scale = max(1.0, float(np.max(np.abs(C)))) if C.size else 1.0
    rc = C - u[:, None] - v[None, :]
    worst = float(rc.min())
    if worst < -CERTIFICATE_RTOL * scale:
        raise CertificateError(f"reduced cost {worst!r} violates dual feasibility")
    return bi, bj, bx, u, v, it


def _canonical_key(m: DiscreteMeasure):
    return (m.points.shape, m.points.tobytes(), m.weights.tobytes())


def exact_wasserstein(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: int = 2,
    rescale: bool = False,
    pricing: str = "block",
    backend: str | None = None,
) -> TransportResult:
    """Exact W_p(mu, nu) for p in {1, 2}.

    Examples
    --------
    >>> mu = DiscreteMeasure([[0.0, 0.0]], [1.0])
    >>> nu = DiscreteMeasure([[1.0, 0.0]], [1.0])
    >>> exact_wasserstein(mu, nu, p=2).distance
    1.0
    """
    _check_p(p)
    if _canonical_key(nu) < _canonical_key(mu):
        # solve in a fixed orientation so that W(mu, nu) == W(nu, mu) bit for bit
        res = exact_wasserstein(nu, mu, p, rescale, pricing, backend)
        pl = res.plan
        order = np.lexsort((pl.rows, pl.cols))
        plan = TransportPlan(pl.cols[order], pl.rows[order], pl.mass[order], p)
        return TransportResult(res.distance, plan, res.solver, res.info)
    ia, ib, a, b = matched_weights(mu, nu, rescale)
    C = cost_matrix(mu.points[ia], nu.points[ib], p)
    bi, bj, bx, u, v, it = solve_cost(a, b, C, pricing, backend)
    keep = bx > 0
    rows, cols, flows = ia[bi[keep]], ib[bj[keep]], bx[keep]
    order = np.lexsort((cols, rows))
    plan = TransportPlan(rows[order], cols[order], flows[order], p)
    cost = math.fsum(flows * C[bi[keep], bj[keep]])
    cost = max(cost, 0.0)
    dual = math.fsum(a * u) + math.fsum(b * v)
    return TransportResult(
        cost ** (1.0 / p),
        plan,
        "exact",
        {"iterations": int(it), "primal": cost, "dual": dual},
    )
