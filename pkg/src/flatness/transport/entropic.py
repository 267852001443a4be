"""Log-domain Sinkhorn iterations for entropically regularised W_p."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from ..measure import DiscreteMeasure
from .exact import TransportPlan, TransportResult, cost_matrix, matched_weights, _check_p


class SinkhornNotConverged(RuntimeError):
    """Raised after ``max_iters`` without reaching the marginal tolerance.

    The last iterate is attached for inspection.
    """

    def __init__(self, message, iterations, marginal_error, f, g, dual_trace):
        super().__init__(message)
        self.iterations = iterations
        self.marginal_error = marginal_error
        self.f = f
        self.g = g
        self.dual_trace = dual_trace


def round_to_feasible(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a nonnegative matrix onto the plans with marginals (a, b).

    Rows and then columns are scaled down where they exceed their target,
    and the remaining deficit is filled by a rank-one correction.
    """
    r = P.sum(axis=1)
    x = np.minimum(1.0, np.divide(a, r, out=np.ones_like(a), where=r > 0))
    P = P * x[:, None]
    c = P.sum(axis=0)
    y = np.minimum(1.0, np.divide(b, c, out=np.ones_like(b), where=c > 0))
    P = P * y[None, :]
    err_a = np.maximum(a - P.sum(axis=1), 0.0)
    err_b = np.maximum(b - P.sum(axis=0), 0.0)
    total = err_a.sum()
    if total > 0:
        P = P + np.outer(err_a, err_b) / total
    return P


def entropic_wasserstein(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: int = 2,
    epsilon: float = 1e-2,
    max_iters: int = 20000,
    tol: float = 1e-8,
    rescale: bool = False,
) -> TransportResult:
    """Sinkhorn estimate of W_p.

    ``epsilon`` is relative to the largest ground cost.  The converged
    plan is rounded to exact feasibility, so the reported distance is an
    upper bound on the exact W_p.  ``info["dual_trace"]`` holds the dual
    objective after each sweep; it is nondecreasing.
    """
    _check_p(p)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    ia, ib, a, b = matched_weights(mu, nu, rescale)
    C = cost_matrix(mu.points[ia], nu.points[ib], p)
    cmax = float(C.max())
    eps = epsilon * (cmax if cmax > 0 else 1.0)
    mass = float(a.sum())
    la, lb = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    trace = []
    err = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        f = eps * (la - logsumexp((g[None, :] - C) / eps, axis=1))
        g = eps * (lb - logsumexp((f[:, None] - C) / eps, axis=0))
        logP = (f[:, None] + g[None, :] - C) / eps
        P = np.exp(logP)
        # columns are exact after the g-update; rows carry the error
        err = float(np.abs(P.sum(axis=1) - a).sum()) / mass
        trace.append(float(a @ f + b @ g - eps * P.sum()))
        if err <= tol:
            break
    else:
        raise SinkhornNotConverged(
            f"Sinkhorn did not reach tolerance {tol} in {max_iters} iterations (error {err:.3e})",
            it, err, f, g, trace,
        )
    P = round_to_feasible(P, a, b)
    cost = float(math.fsum((P * C).ravel()))
    r, c = np.nonzero(P > 0)
    plan = TransportPlan(ia[r], ib[c], P[r, c], p)
    return TransportResult(
        max(cost, 0.0) ** (1.0 / p),
        plan,
        "entropic",
        {"iterations": it, "marginal_error": err, "dual_trace": trace, "epsilon_abs": eps},
    )
