"""The dual-Lipschitz distance F_B.

    F_B(mu, nu) = sup { int f d(mu - nu) : Lip(f) <= 1, supp f in closure(B) }

For discrete measures only the values of f at atoms inside B matter.  A
1-Lipschitz function vanishing off B with prescribed values f_i exists iff
|f_i - f_j| <= |x_i - x_j| and |f_i| <= r - |x_i - z|.  By duality the
supremum is a transport problem in which the boundary sphere is collapsed
to a single point that can absorb or emit any amount of mass at cost
``r - |x - z|``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from ..measure import Ball, DiscreteMeasure
from .exact import solve_cost


def _signed_parts(mu: DiscreteMeasure, nu: DiscreteMeasure, ball: Ball):
    if mu.dim != nu.dim or mu.dim != ball.dim:
        raise ValueError("dimension mismatch")
    mi = ball.contains(mu.points) & (mu.weights > 0)
    ni = ball.contains(nu.points) & (nu.weights > 0)
    pos_x, pos_w = mu.points[mi], mu.weights[mi]
    neg_x, neg_w = nu.points[ni], nu.weights[ni]
    return pos_x, pos_w, neg_x, neg_w


def fb_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, ball: Ball, method: str = "flow") -> float:
    """F_B(mu, nu) for the open ball ``ball``.

    ``method="flow"`` solves the boundary-augmented transport problem with
    the exact simplex; ``method="lp"`` solves the primal linear programme
    over atom values with HiGHS (quadratic in the number of atoms, used for
    cross-checks).
    """
    pos_x, pos_w, neg_x, neg_w = _signed_parts(mu, nu, ball)
    if method == "lp":
        return _fb_lp(pos_x, pos_w, neg_x, neg_w, ball)
    if method != "flow":
        raise ValueError(f"unknown method {method!r}")
    sp, sn = math.fsum(pos_w), math.fsum(neg_w)
    if sp == 0 and sn == 0:
        return 0.0
    r = ball.radius
    bp = r - ball.distances(pos_x) if len(pos_w) else np.zeros(0)
    bn = r - ball.distances(neg_x) if len(neg_w) else np.zeros(0)
    # sources: positive atoms + boundary (mass sn); targets: negative atoms + boundary (mass sp)
    a = np.concatenate([pos_w, [sn]])
    b = np.concatenate([neg_w, [sp]])
    C = np.zeros((len(a), len(b)))
    if len(pos_w) and len(neg_w):
        C[:-1, :-1] = cdist(pos_x, neg_x)
    C[:-1, -1] = bp
    C[-1, :-1] = bn
    keep_a = a > 0
    keep_b = b > 0
    C = C[np.ix_(keep_a, keep_b)]
    bi, bj, bx, _, _, _ = solve_cost(a[keep_a], b[keep_b], C)
    return max(0.0, math.fsum(bx * C[bi, bj]))


def _fb_lp(pos_x, pos_w, neg_x, neg_w, ball: Ball) -> float:
    x = np.vstack([pos_x, neg_x]) if len(neg_w) else pos_x
    if len(x) == 0:
        return 0.0
    s = np.concatenate([pos_w, -neg_w])
    m = len(s)
    D = cdist(x, x)
    bound = ball.radius - ball.distances(x)
    iu, ju = np.triu_indices(m, 1)
    rows = []
    rhs = []
    if len(iu):
        A1 = np.zeros((len(iu), m))
        A1[np.arange(len(iu)), iu] = 1.0
        A1[np.arange(len(iu)), ju] = -1.0
        rows = [A1, -A1]
        rhs = [D[iu, ju], D[iu, ju]]
    A_ub = np.vstack(rows) if rows else None
    b_ub = np.concatenate(rhs) if rhs else None
    res = linprog(-s, A_ub=A_ub, b_ub=b_ub, bounds=list(zip(-bound, bound)), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    return max(0.0, -float(res.fun))
