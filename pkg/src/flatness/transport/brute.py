"""Brute-force W_p oracle by enumeration of unit-mass matchings.

Both measures are split into atoms of a common unit mass g.  Every optimal
plan between measures whose weights are integer multiples of g can be
realised as a permutation of the split atoms (Birkhoff), so enumerating
the distinct permutations of the target multiset finds the optimum.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from ..measure import DiscreteMeasure
from .exact import TransportPlan, TransportResult, cost_matrix, _check_p

DENOMINATOR_CAP = 10**6
MAX_UNITS = 10


class OracleTooLarge(ValueError):
    pass


def _to_fraction(w: float) -> Fraction:
    f = Fraction(w).limit_denominator(DENOMINATOR_CAP)
    if abs(float(f) - w) > 1e-12 * max(abs(w), 1e-300):
        raise OracleTooLarge(f"weight {w!r} has no representation with denominator <= {DENOMINATOR_CAP}")
    return f


def multiset_permutations(labels) -> np.ndarray:
    """All distinct orderings of ``labels`` (lexicographic), as an int array."""
    seq = sorted(labels)
    n = len(seq)
    out = []
    while True:
        out.append(tuple(seq))
        i = n - 2
        while i >= 0 and seq[i] >= seq[i + 1]:
            i -= 1
        if i < 0:
            break
        j = n - 1
        while seq[j] <= seq[i]:
            j -= 1
        seq[i], seq[j] = seq[j], seq[i]
        seq[i + 1:] = reversed(seq[i + 1:])
    return np.array(out, dtype=np.int16).reshape(len(out), n)


def split_units(mu: DiscreteMeasure, nu: DiscreteMeasure, max_units: int = MAX_UNITS):
    """Common unit mass and integer unit counts for the positive atoms."""
    ia = np.flatnonzero(mu.weights > 0)
    ib = np.flatnonzero(nu.weights > 0)
    if ia.size == 0 or ib.size == 0:
        raise ValueError("empty measure")
    fa = [_to_fraction(float(w)) for w in mu.weights[ia]]
    fb = [_to_fraction(float(w)) for w in nu.weights[ib]]
    if sum(fa) != sum(fb):
        raise ValueError("masses differ on the rational grid")
    num = 0
    den = 1
    for f in fa + fb:
        den = den * f.denominator // math.gcd(den, f.denominator)
    for f in fa + fb:
        num = math.gcd(num, f.numerator * (den // f.denominator))
    unit = Fraction(num, den)
    ca = [int(f / unit) for f in fa]
    cb = [int(f / unit) for f in fb]
    if sum(ca) > max_units:
        raise OracleTooLarge(f"{sum(ca)} unit atoms exceed the cap of {max_units}")
    return ia, ib, ca, cb, unit


def brute_force_wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, p: int = 2,
                            max_units: int = MAX_UNITS) -> TransportResult:
    """Exact W_p by exhaustive search over split-atom matchings."""
    _check_p(p)
    if mu.dim != nu.dim:
        raise ValueError("dimension mismatch")
    ia, ib, ca, cb, unit = split_units(mu, nu, max_units)
    C = cost_matrix(mu.points[ia], nu.points[ib], p)
    src = np.repeat(np.arange(len(ia)), ca)
    perms = multiset_permutations(np.repeat(np.arange(len(ib)), cb).tolist())
    costs = C[src[None, :], perms].sum(axis=1)
    best = int(np.argmin(costs))
    g = float(unit)
    pairs = {}
    for s, t in zip(src, perms[best]):
        pairs[(int(s), int(t))] = pairs.get((int(s), int(t)), 0) + 1
    keys = sorted(pairs)
    rows = np.array([ia[s] for s, _ in keys], dtype=np.int64)
    cols = np.array([ib[t] for _, t in keys], dtype=np.int64)
    mass = np.array([pairs[k] * g for k in keys])
    cost = math.fsum(pairs[k] * g * C[k[0], k[1]] for k in keys)
    return TransportResult(cost ** (1.0 / p), TransportPlan(rows, cols, mass, p), "oracle",
                           {"permutations": int(len(perms)), "unit": g})
