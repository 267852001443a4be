"""Optimal transport between discrete measures."""

from ._kernels import COMPILED_AVAILABLE, get_backend, set_backend
from .brute import OracleTooLarge, brute_force_wasserstein
from .entropic import SinkhornNotConverged, entropic_wasserstein
from .exact import (
    CertificateError,
    MassMismatch,
    TransportPlan,
    TransportResult,
    cost_matrix,
    exact_wasserstein,
    solve_cost,
)
from .fb import fb_distance


def wasserstein(mu, nu, p=2, solver="exact", **kwargs):
    """Dispatch to the exact or entropic solver by name."""
    if solver == "exact":
        return exact_wasserstein(mu, nu, p, **kwargs)
    if solver == "entropic":
        return entropic_wasserstein(mu, nu, p, **kwargs)
    if solver == "oracle":
        return brute_force_wasserstein(mu, nu, p, **kwargs)
    raise ValueError(f"unknown solver {solver!r}")


__all__ = [
    "COMPILED_AVAILABLE",
    "CertificateError",
    "MassMismatch",
    "OracleTooLarge",
    "SinkhornNotConverged",
    "TransportPlan",
    "TransportResult",
    "brute_force_wasserstein",
    "cost_matrix",
    "entropic_wasserstein",
    "exact_wasserstein",
    "fb_distance",
    "get_backend",
    "set_backend",
    "solve_cost",
    "wasserstein",
]
