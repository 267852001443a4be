import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatness.measure import (
    AffinePlane,
    Ball,
    DiscreteMeasure,
    MeasureFormatError,
    coordinate_plane,
    cutoff_value,
    delta_coefficient,
    density_estimates,
    plane_angle,
    weighted_restrict,
)

from helpers import coord, lines, measures


def line_at(theta, d=2):
    v = np.zeros(d)
    v[0], v[1] = math.cos(theta), math.sin(theta)
    return AffinePlane(np.zeros(d), v[None])


def sampled_hausdorff(L1, L2, m=4001):
    """Hausdorff distance between the unit segments of two lines through 0."""
    t = np.linspace(-1.0, 1.0, m)[:, None]
    A = t * L1.frame[0]
    B = t * L2.frame[0]
    D = np.linalg.norm(A[:, None] - B[None], axis=2)
    return max(D.min(axis=1).max(), D.min(axis=0).max())


# cutoff ---------------------------------------------------------------------

@pytest.mark.parametrize("y, expected", [((1.0, 0.0), 1.0), ((2.5, 0.0), 0.25), ((3.0, 0.0), 0.0),
                                         ((2.0, 0.0), 1.0), ((0.0, 0.0), 1.0)])
def test_cutoff_examples(y, expected):
    assert cutoff_value(Ball([0.0, 0.0], 1.0), y) == expected


@given(st.lists(coord, min_size=2, max_size=2), st.floats(0.1, 3.0), st.lists(coord, min_size=2, max_size=2))
def test_cutoff_range_and_plateau(center, r, y):
    B = Ball(center, r)
    v = cutoff_value(B, y)
    dist = np.linalg.norm(np.subtract(y, center))
    assert 0.0 <= v <= 1.0
    if dist <= 2 * r:
        assert v == 1.0
    if dist >= 3 * r:
        assert v == 0.0


def test_cutoff_quadratic_decay():
    B = Ball([0.0, 0.0], 1.0)
    for s in np.linspace(0.01, 0.99, 50):
        assert cutoff_value(B, [3.0 - s, 0.0]) == pytest.approx(s * s)


# restriction -----------------------------------------------------------------

def test_restrict_examples():
    B = Ball([0.0, 0.0], 1.0)
    mu = DiscreteMeasure([[0.0, 0.0]], [1.0])
    assert weighted_restrict(mu, B, "sharp").atoms[0][1] == 1.0
    nu = DiscreteMeasure([[2.5, 0.0]], [2.0])
    out = weighted_restrict(nu, B, "cutoff")
    assert len(out) == 1 and out.weights[0] == 0.5
    far = DiscreteMeasure([[5.0, 0.0]], [1.0])
    assert len(weighted_restrict(far, B, "cutoff")) == 0


def test_open_ball_excludes_boundary():
    mu = DiscreteMeasure([[1.0, 0.0], [0.5, 0.0]], [1.0, 1.0])
    assert mu.ball_mass(Ball([0.0, 0.0], 1.0)) == 1.0


@given(measures(max_atoms=10), st.lists(coord, min_size=2, max_size=2), st.floats(0.2, 2.0))
def test_cutoff_mass_between_2B_and_3B(mu, center, r):
    B = Ball(center, r)
    m = weighted_restrict(mu, B, "cutoff").mass
    assert mu.ball_mass(B.scaled(2.0)) - 1e-12 <= m <= mu.ball_mass(B.scaled(3.0)) + 1e-12


@given(measures(max_atoms=6), st.lists(coord, min_size=2, max_size=2), st.floats(0.2, 2.0))
def test_zero_weight_atoms_are_inert(mu, center, r):
    padded = mu + DiscreteMeasure(np.array([center, [0.1, 0.2]]), [0.0, 0.0])
    B = Ball(center, r)
    assert padded.ball_mass(B) == mu.ball_mass(B)
    assert weighted_restrict(padded, B, "cutoff").mass == weighted_restrict(mu, B, "cutoff").mass
    assert delta_coefficient(padded, center, r, 1) == delta_coefficient(mu, center, r, 1)


# planes ------------------------------------------------------------------------

def test_plane_angle_examples():
    x = coordinate_plane(2, 1)
    y = AffinePlane([0.0, 0.0], [[0.0, 1.0]])
    assert plane_angle(x, x) == 0.0
    assert plane_angle(x, y) == pytest.approx(1.0)
    assert plane_angle(x, line_at(math.pi / 6)) == pytest.approx(0.5)


@pytest.mark.parametrize("theta", [0.1, math.pi / 6, 0.9, math.pi / 2])
def test_plane_angle_matches_sampled_hausdorff(theta):
    x = coordinate_plane(2, 1)
    L = line_at(theta)
    assert plane_angle(x, L) == pytest.approx(sampled_hausdorff(x, L), abs=2e-3)


def test_plane_angle_dimension_mismatch():
    with pytest.raises(ValueError):
        plane_angle(coordinate_plane(3, 1), coordinate_plane(3, 2))


@given(lines(), lines(), lines())
def test_plane_angle_pseudometric(a, b, c):
    assert plane_angle(a, b) == plane_angle(b, a)
    assert plane_angle(a, c) <= plane_angle(a, b) + plane_angle(b, c) + 1e-9
    assert plane_angle(a, a.translated([0.3, -0.7])) == pytest.approx(0.0, abs=1e-12)


@given(lines(), st.lists(coord, min_size=2, max_size=2))
def test_projection_idempotent(L, x):
    p = L.project(x)
    assert np.allclose(L.project(p), p, atol=1e-10)


def test_nonorthonormal_frame_rejected():
    with pytest.raises(ValueError):
        AffinePlane([0.0, 0.0], [[1.0, 0.1]])


# delta and densities ---------------------------------------------------------------

def test_delta_examples():
    two = DiscreteMeasure([[0.0, 0.0], [1.5, 0.0]], [1.0, 1.0])
    assert delta_coefficient(two, [0.0, 0.0], 0.5, 1) == pytest.approx(1.0)
    one = DiscreteMeasure([[0.0, 0.0]], [1.0])
    assert delta_coefficient(one, [0.0, 0.0], 1.0, 1) == pytest.approx(0.5)


def test_delta_vanishes_on_exact_line_sample():
    # unit-weight atoms at half-integers: B(0, 2) holds 4 atoms, B(0, 4) holds 8
    t = np.arange(-20, 20) + 0.5
    mu = DiscreteMeasure(np.c_[t, np.zeros_like(t)], np.ones_like(t))
    assert delta_coefficient(mu, [0.0, 0.0], 2.0, 1) == 0.0


@given(measures(max_atoms=8), st.floats(0.1, 10.0), st.floats(0.2, 2.0))
def test_delta_homogeneous(mu, c, r):
    x = mu.points[0]
    lhs = delta_coefficient(mu.scaled(c), x, r, 1)
    assert lhs == pytest.approx(c * delta_coefficient(mu, x, r, 1), rel=1e-12, abs=1e-12)


def test_density_estimates():
    h = 1.0 / 1024
    t = np.arange(-4.0, 4.0, h) + h / 2
    line = DiscreteMeasure(np.c_[t, np.zeros_like(t)], np.full(len(t), h))
    for row in density_estimates(line, [0.0, 0.0], [0.5, 0.25], 1):
        assert row.ratio == pytest.approx(2.0, abs=2 * h / row.radius)
        assert row.doubling == pytest.approx(2.0, abs=4 * h / row.radius)
    dirac = DiscreteMeasure([[0.0, 0.0]], [1.0])
    rows = density_estimates(dirac, [0.0, 0.0], [1.0, 0.5], 1)
    assert [r.ratio for r in rows] == [1.0, 2.0]
    assert [r.doubling for r in rows] == [1.0, 1.0]
    empty = density_estimates(dirac, [5.0, 5.0], [1.0], 1)[0]
    assert empty.ratio == 0.0 and empty.doubling is None


# serialization -------------------------------------------------------------------

@given(measures(d=3, max_atoms=8))
def test_round_trips_are_bit_exact(mu):
    for back in (DiscreteMeasure.from_csv(mu.to_csv()), DiscreteMeasure.from_json(mu.to_json())):
        assert np.array_equal(back.points, mu.points)
        assert np.array_equal(back.weights, mu.weights)


def test_bad_csv_names_row():
    with pytest.raises(MeasureFormatError) as info:
        DiscreteMeasure.from_csv("0,0,1\n0,abc,1\n")
    assert info.value.row == 2
    with pytest.raises(MeasureFormatError) as info:
        DiscreteMeasure.from_csv("0,0,1\n1,1,1\n1,1\n")
    assert info.value.row == 3
    with pytest.raises(MeasureFormatError):
        DiscreteMeasure.from_csv("0,0,-1\n")


def test_invalid_measures_rejected():
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, 0.0]], [-1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, np.nan]], [1.0])
    with pytest.raises(ValueError):
        Ball([0.0, 0.0], 0.0)
