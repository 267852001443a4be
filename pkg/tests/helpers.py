"""Shared hypothesis strategies and small builders for the test suite."""

import numpy as np
from hypothesis import strategies as st

from flatness.measure import AffinePlane, DiscreteMeasure

coord = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
weight = st.floats(0.05, 3.0, allow_nan=False, allow_infinity=False)


@st.composite
def measures(draw, d=2, min_atoms=1, max_atoms=6):
    k = draw(st.integers(min_atoms, max_atoms))
    pts = draw(st.lists(st.lists(coord, min_size=d, max_size=d), min_size=k, max_size=k))
    w = draw(st.lists(weight, min_size=k, max_size=k))
    return DiscreteMeasure(np.array(pts), np.array(w))


@st.composite
def lines(draw, d=2):
    theta = draw(st.floats(0.0, np.pi))
    base = draw(st.lists(st.floats(-1.0, 1.0), min_size=d, max_size=d))
    direction = np.zeros(d)
    direction[0], direction[1] = np.cos(theta), np.sin(theta)
    return AffinePlane(np.array(base), direction[None])


def random_measure(rng, k, d=2, scale=1.0, mass=None):
    pts = rng.uniform(-scale, scale, size=(k, d))
    w = rng.uniform(0.2, 1.0, size=k)
    if mass is not None:
        w = w * (mass / w.sum())
    return DiscreteMeasure(pts, w)


def unit_measure(rng, units, d=2, max_atoms=None):
    """Random measure whose weights are whole multiples of 1/units."""
    max_atoms = max_atoms or units
    k = int(rng.integers(1, min(units, max_atoms) + 1))
    cuts = np.sort(rng.choice(np.arange(1, units), size=k - 1, replace=False)) if k > 1 else np.array([], int)
    counts = np.diff(np.concatenate([[0], cuts, [units]]))
    pts = rng.uniform(-1.0, 1.0, size=(k, d))
    return DiscreteMeasure(pts, counts / units)
