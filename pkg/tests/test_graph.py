import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatness.graph import (
    LAMBDA,
    ContainerNotFound,
    LipschitzGraph,
    abs_graph,
    build_lattice,
    container_k0,
    cube_diameter,
    find_shifted_container,
    flat_graph,
    graph_from_spec,
    lattice_index,
    lattice_to_json,
    linear_graph,
    make_cube,
    random_graph,
    sample_ball,
    sigma_quadrature,
    vertical_membership,
)
from flatness.measure import Ball


def test_projection_examples():
    g = flat_graph()
    assert np.array_equal(g.project([[0.3, 7.0]]), [[0.3, 0.0]])
    a = abs_graph()
    assert np.array_equal(a.project([[1.0, 5.0]]), [[1.0, 1.0]])
    on = a.lift([[-0.4]])
    assert np.array_equal(a.project(on), on)


@given(st.integers(0, 50), st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_projection_is_sqrt2_lipschitz(seed, x, y):
    g = random_graph(seed)
    px, py = g.project([x])[0], g.project([y])[0]
    assert np.linalg.norm(px - py) <= math.sqrt(2) * np.linalg.norm(np.subtract(x, y)) + 1e-12
    assert np.allclose(g.project([px]), [px])


def test_lipschitz_check_rejects_steep_graph():
    with pytest.raises(ValueError):
        LipschitzGraph(lambda u: 2.0 * u, 1, 2, 1.0)
    with pytest.raises(ValueError):
        LipschitzGraph(lambda u: u, 1, 2, 1.5)


def test_graph_spec_round_trip():
    for g in (flat_graph(), abs_graph(), linear_graph(0.5), random_graph(3), random_graph(1, n=2, d=3)):
        h = graph_from_spec(json.loads(json.dumps(g.to_dict())))
        u = np.random.default_rng(0).uniform(-1, 1, size=(20, g.n))
        assert np.array_equal(g.lift(u), h.lift(u))


def test_sigma_quadrature_examples():
    for g in (flat_graph(), random_graph(0)):
        assert sigma_quadrature(g, 0.0, 1.0, 1.0 / 37).mass == pytest.approx(1.0, rel=1e-12)
    q = sigma_quadrature(flat_graph(), 0.0, 1.0, 0.25)
    assert np.array_equal(q.points, [[0.125, 0.0], [0.375, 0.0], [0.625, 0.0], [0.875, 0.0]])
    d = sigma_quadrature(linear_graph(1.0), 0.0, 1.0, 0.1)
    assert np.allclose(d.points[:, 0], d.points[:, 1])
    assert np.allclose(d.weights, 0.1)
    sq = sigma_quadrature(random_graph(0, n=2, d=3), [0, 0], [1, 1], 0.1)
    assert sq.mass == pytest.approx(1.0, rel=1e-12)


def test_sigma_mass_comparable_in_balls():
    g = random_graph(2)
    sigma = sigma_quadrature(g, -2.0, 2.0, 1.0 / 256)
    rng = np.random.default_rng(0)
    for _ in range(50):
        r = rng.uniform(0.25, 1.0)
        z = g.lift(rng.uniform(-0.5, 0.5, size=(1, 1)))[0]
        ratio = sigma.ball_mass(Ball(z, r)) / r
        # the vertical projection of B(z, r) ∩ Γ has length between 2r/sqrt(2) and 2r
        assert 2 / math.sqrt(2) - 0.05 <= ratio <= 2.0 + 0.05


# lattice -------------------------------------------------------------------------

def test_lattice_examples():
    g = flat_graph()
    levels = build_lattice(g, depth=1)
    kids = levels[1]
    assert [(Q.corner[0], Q.upper[0]) for Q in kids] == [(0.0, 0.5), (0.5, 1.0)]
    shifted = make_cube(g, 0, 0, shift=1)
    assert shifted.corner[0] == pytest.approx(1.0 / 3.0)
    levels = build_lattice(random_graph(0), depth=4)
    for parent_level, child_level in zip(levels, levels[1:]):
        for Q in child_level:
            parents = [P for P in parent_level if P.contains_base_of(Q)]
            assert len(parents) == 1


def test_lattice_partitions_root():
    g = random_graph(1, n=2, d=3)
    levels = build_lattice(g, depth=3)
    u = np.random.default_rng(0).uniform(0, 1, size=(2000, 2))
    u = np.vstack([u, [[0.5, 0.5], [0.25, 0.0], [0.0, 0.0]]])
    for level in levels:
        hits = sum(Q.contains_base(u).astype(int) for Q in level)
        assert np.all(hits == 1)


def test_lattice_index_half_open():
    assert lattice_index([[1.0]], [0.0], 0.5)[0, 0] == 2
    assert lattice_index([[1.0 / 3.0]], [1.0 / 3.0], 0.25)[0, 0] == 0
    x = np.nextafter(1.0 / 3.0, 0.0)
    assert lattice_index([[x]], [1.0 / 3.0], 0.25)[0, 0] == -1


def test_gamma_cube_balls_contain_cube():
    g = random_graph(0)
    Q = make_cube(g, 3, 2)
    pts = g.lift(np.linspace(Q.corner[0], Q.upper[0], 200, endpoint=False))
    assert np.all(Q.ball.contains(pts))
    assert Q.big_ball.radius == pytest.approx(LAMBDA * Q.ball.radius)
    assert Q.diam >= np.max(np.linalg.norm(pts[:, None] - pts[None], axis=2))
    assert json.loads(lattice_to_json([[Q]]))[0][0]["ell"] == Q.ell


def test_cube_diameter_close_to_chord():
    g = linear_graph(0.5)
    assert cube_diameter(g, [0.0], 1.0) == pytest.approx(math.hypot(1.0, 0.5) * 1.01, rel=1e-12)


def test_vertical_membership_examples():
    g = random_graph(0)
    P = make_cube(g, 1, 0)
    assert vertical_membership(P, g.lift([[0.2]]))[0]
    assert vertical_membership(P, [[0.2, 1e6]])[0]
    assert not vertical_membership(P, [[0.5, 0.0]])[0]
    assert vertical_membership(P, [[0.0, -3.0]])[0]


# one-third trick ---------------------------------------------------------------------

def test_k0_from_containment_inequality():
    # 2^k / 6 >= 9 * Lambda * sqrt(2) * sqrt(n) * 1.01 for a 1-Lipschitz graph
    assert container_k0(1) == 10
    need = 6 * 9 * LAMBDA * math.sqrt(2) * 1.01
    assert 2**9 < need <= 2**10
    assert container_k0(2) == 11


def _containment_ok(g, Q, P, rng, samples=1000):
    ball = Ball(Q.z, 3 * Q.big_ball.radius)
    pts = sample_ball(ball, samples, rng)
    return bool(np.all(vertical_membership(P, pts)))


def test_container_flat_graph_centered_cube():
    g = flat_graph()
    k0 = container_k0(1)
    # a level-(k0 + 3) cube whose centre is the centre of a shifted level-3 cube
    P0 = make_cube(g, 3, 2, shift=1)
    centre = P0.corner[0] + P0.ell / 2
    level = 3 + k0
    idx = int(math.floor(centre / 2.0**-level))
    Q = make_cube(g, level, idx)
    cont = find_shifted_container(g, Q)
    assert cont.level == Q.level - k0
    assert _containment_ok(g, Q, cont.cube, np.random.default_rng(0))


def test_container_lexicographic_and_errors():
    g = random_graph(0)
    k0 = container_k0(1)
    seen = set()
    for i in range(0, 2 ** (k0 + 1), 97):
        Q = make_cube(g, k0 + 1, i)
        cont = find_shifted_container(g, Q)
        seen.add(cont.shift)
        if cont.shift == (1,):
            # shift 0 is tried first, so its cube must miss part of the ball
            ell = 2.0**-cont.level
            x0, rho = Q.z[0], 9 * LAMBDA * Q.diam
            j = math.floor(x0 / ell)
            assert x0 - rho < j * ell or x0 + rho >= (j + 1) * ell
    assert seen == {(0,), (1,)}
    with pytest.raises(ContainerNotFound):
        find_shifted_container(g, make_cube(g, k0 - 1, 0))


@pytest.mark.parametrize("seed", [0, 1])
def test_container_all_cubes_at_first_admissible_depth(seed):
    g = random_graph(seed)
    k0 = container_k0(1)
    rng = np.random.default_rng(seed)
    for i in range(0, 2**k0, 37):
        Q = make_cube(g, k0, i)
        cont = find_shifted_container(g, Q)
        assert _containment_ok(g, Q, cont.cube, rng, samples=200)


def test_k0_nine_is_insufficient():
    """With k0 = 9 some cubes have no admissible shifted container."""
    g = flat_graph()
    failures = 0
    for i in range(2**11):
        Q = make_cube(g, 11, i)
        try:
            find_shifted_container(g, Q, k0=9)
        except ContainerNotFound:
            failures += 1
    assert failures > 0
