import json
import math

import numpy as np
import pytest

from flatness.graph import flat_graph, make_cube, random_graph, sigma_quadrature
from flatness.measure import DiscreteMeasure
from flatness.trees import (
    CubeTree,
    EmptyCube,
    LatticeCache,
    SigmaGrid,
    ball_masses,
    build_stopping_tree,
    density_on_grid,
    gamma_mass,
    l1_norm,
    l2_norm2,
    martingale_difference,
    martingale_energies,
    packing_sum,
    stop_mass,
    sweep_M,
    tree_audit,
    tree_martingale_sum,
)
from flatness.zoo import generate


def unit_grid(level, graph=None, shift=0):
    graph = graph or flat_graph()
    R = make_cube(graph, 0, 0, shift)
    return R, SigmaGrid.for_cubes([R], level)


def delta_function(coef, grid):
    """Delta_P g as a vector on the grid cells (zero outside P)."""
    lev = coef.key[0]
    out = np.zeros(len(grid.keys))
    child = grid.ancestors(lev + 1)
    for kid, dev in zip(coef.children, coef.deviations):
        out[np.all(child == np.asarray(kid), axis=1)] = dev
    return out


# martingale differences --------------------------------------------------------

def test_constant_has_no_deviation():
    R, grid = unit_grid(5)
    c = martingale_difference(np.full(len(grid.keys), 3.0), grid, R)
    assert np.all(c.deviations == 0.0) and c.norm2 == 0.0
    assert c.parent_average == 3.0


def test_half_step():
    R, grid = unit_grid(4)
    g = (grid.base_points()[:, 0] >= 0.5).astype(float)
    c = martingale_difference(g, grid, R)
    assert c.children == ((0,), (1,))
    assert np.allclose(c.deviations, [-0.5, 0.5], atol=1e-15)
    assert c.norm2 == pytest.approx(0.25 * 1.0, abs=1e-15)
    assert abs(np.sum(c.deviations * c.child_sigma)) < 1e-10


def test_errors():
    R, grid = unit_grid(3)
    g = np.ones(len(grid.keys))
    with pytest.raises(EmptyCube):
        martingale_difference(g, grid, make_cube(flat_graph(), 1, 5))
    with pytest.raises(ValueError):
        martingale_difference(g, grid, make_cube(flat_graph(), 3, 0))
    with pytest.raises(ValueError):
        martingale_difference(g, grid, make_cube(flat_graph(), 1, 0, 1))


@pytest.mark.parametrize("n", [1, 2])
def test_parseval(n):
    rng = np.random.default_rng(n)
    graph = flat_graph() if n == 1 else random_graph(0, n=2, d=3)
    J = 7 if n == 1 else 5
    R, grid = unit_grid(J, graph, shift=(1,) * n)
    g = rng.uniform(0.0, 2.0, len(grid.keys))
    E = martingale_energies(g, grid, 0)
    mean = float(np.sum(g * grid.weights))
    lhs = math.fsum(E.values()) + mean**2 * 1.0
    assert lhs == pytest.approx(l2_norm2(g, grid), rel=1e-8)
    assert len(E) == sum(2 ** (n * k) for k in range(J))


def test_energies_match_direct():
    rng = np.random.default_rng(3)
    R, grid = unit_grid(6)
    g = rng.normal(size=len(grid.keys))
    E = martingale_energies(g, grid, 0)
    cache = LatticeCache(flat_graph())
    for (lev, idx), e in list(E.items())[::5]:
        P = cache.cube(lev, idx, (0,))
        c = martingale_difference(g, grid, P)
        assert e == pytest.approx(c.norm2, rel=1e-9, abs=1e-12)
        assert abs(np.sum(c.deviations * c.child_sigma)) < 1e-10


def test_orthogonality():
    rng = np.random.default_rng(4)
    R, grid = unit_grid(6)
    g = rng.normal(size=len(grid.keys))
    cache = LatticeCache(flat_graph())
    chain = [cache.cube(lev, (idx,), (0,)) for lev, idx in [(0, 0), (1, 1), (2, 2), (3, 5), (4, 11)]]
    vecs = [delta_function(martingale_difference(g, grid, P), grid) for P in chain]
    w = grid.weights
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            assert abs(np.sum(vecs[i] * vecs[j] * w)) < 1e-10
        assert np.sum(vecs[i] ** 2 * w) == pytest.approx(
            martingale_difference(g, grid, chain[i]).norm2, rel=1e-12)


def test_density_on_grid_and_norms():
    R, grid = unit_grid(4)
    mu = DiscreteMeasure([[0.01, 0], [0.02, 0], [0.99, 0], [2.0, 0]], [1.0, 1.0, 0.5, 7.0])
    g, outside = density_on_grid(mu, grid)
    assert outside == 7.0
    assert g[0] == 2.0 * 16 and g[-1] == 0.5 * 16
    assert l1_norm(g, grid) == pytest.approx(2.5)


# stopping trees ----------------------------------------------------------------

@pytest.fixture(scope="module")
def graph_sample():
    g = random_graph(0)
    mu = sigma_quadrature(g, 0.0, 1.0, 2.0**-10)
    return g, mu, make_cube(g, 0, 0)


def full_lattice_size(depth, n=1):
    return sum(2 ** (n * k) for k in range(depth + 1))


def test_huge_M_keeps_full_lattice(graph_sample):
    g, mu, R = graph_sample
    res = build_stopping_tree(mu, {(0,): mu, (1,): mu}, g, R, M=1e9, depth=5)
    T = res.tree
    assert len(T.members) == full_lattice_size(5)
    assert not T.stops and stop_mass(T, mu, g) == 0.0
    assert not res.trees[(0,)].stops
    for tree in [T, *res.trees.values()]:
        assert tree.check_invariants() == []


def test_hole_stops_by_low_density():
    gen = generate({"kind": "graph_with_holes", "seed": 1,
                    "params": {"graph": {"family": "random", "seed": 0}, "h": 2.0**-10, "holes": [[2, [1]]]}})
    g, mu = gen.graph, gen.measure
    R = make_cube(g, 0, 0)
    res = build_stopping_tree(mu, {(0,): mu, (1,): mu}, g, R, M=1e6, depth=4)
    T0 = res.trees[(0,)]
    key = (2, (1,), (0,))
    assert key in T0.stops and "LD" in T0.stops[key][1]
    assert key in res.tree.stops
    assert not any(k[0] > 2 and k[1][0] // 2 ** (k[0] - 2) == 1 for k in res.tree.members)
    for tree in [res.tree, *res.trees.values()]:
        assert tree.check_invariants() == []
    assert stop_mass(res.tree, mu, g) == 0.0  # the hole carries no mass


def test_member_thresholds_audit(graph_sample):
    g, mu, R = graph_sample
    for M in (30.0, 300.0):
        res = build_stopping_tree(mu, {(0,): mu, (1,): mu}, g, R, M=M, depth=6)
        for e, T in res.trees.items():
            a = tree_audit(T, mu, mu, g)
            assert a["violations"] == 0
            assert T.check_invariants() == []


def test_sweep_monotone(graph_sample):
    g, mu, R = graph_sample
    rows, chosen, _ = sweep_M(mu, {(0,): mu, (1,): mu}, g, R, (10.0, 100.0, 1000.0), depth=6)
    masses = [r.stop_mass for r in rows]
    assert all(a >= b - 1e-15 for a, b in zip(masses, masses[1:]))
    assert chosen is not None and masses[[r.M for r in rows].index(chosen)] < 0.1 * mu.mass


def test_stop_mass_cases(graph_sample):
    g, mu, R = graph_sample
    T = CubeTree((R.key,), members={R.key: R})
    assert stop_mass(T, mu, g) == 0.0
    cache = LatticeCache(g)
    kids = cache.cubes(1, list(R.children_indices()), R.shift)
    T.stops = {Q.key: (Q, ("LD",)) for Q in kids}
    assert T.check_invariants() == []
    assert stop_mass(T, mu, g) == pytest.approx(gamma_mass(mu, g, [R])[0], rel=1e-12)


def test_invariant_violations_detected(graph_sample):
    g, mu, R = graph_sample
    cache = LatticeCache(g)
    orphan = cache.cube(2, (3,), (0,))
    T = CubeTree((R.key,), members={R.key: R, orphan.key: orphan},
                 stops={R.key: (R, ("LD",))})
    kinds = {v[0] for v in T.check_invariants()}
    assert {"T2", "S-member"} <= kinds


def test_ball_masses_open():
    mu = DiscreteMeasure([[0, 0], [1, 0], [0, 0.5]], [1.0, 2.0, 4.0])
    assert ball_masses(mu, [[0, 0]], [1.0]).tolist() == [5.0]
    assert ball_masses(mu, [[0, 0], [1, 0]], [1.0001, 0.1]).tolist() == [7.0, 2.0]


# packing sums ------------------------------------------------------------------

def full_tree(depth):
    g = flat_graph()
    R = make_cube(g, 0, 0)
    cache = LatticeCache(g)
    T = CubeTree((R.key,), members={R.key: R}, depth=depth)
    for lev in range(1, depth + 1):
        for Q in cache.cubes(lev, [(i,) for i in range(2**lev)], (0,)):
            T.members[Q.key] = Q
    return T


def test_packing_closed_form():
    T = full_tree(6)
    assert packing_sum(T, lambda Q: 0.0).total == 0.0
    c = 0.3
    ps = packing_sum(T, lambda Q: c)
    for lev, row in ps.levels.items():
        assert row["sum"] == pytest.approx(c * c, rel=1e-12) and row["count"] == 2**lev
    # one unit per level: linear growth in the number of levels
    assert ps.total == pytest.approx(7 * c * c, rel=1e-12)
    cum = [v for _, v in ps.cumulative]
    assert np.allclose(np.diff(cum), c * c)


def test_packing_undefined_counted():
    T = full_tree(3)
    ps = packing_sum(T, lambda Q: None if Q.level == 2 else 1.0)
    assert ps.levels[2]["undefined"] == 4 and ps.levels[2]["sum"] == 0.0
    assert ps.total == pytest.approx(3.0)
    json.dumps(ps.to_dict())


def test_tree_martingale_sum_bounds():
    rng = np.random.default_rng(9)
    T = full_tree(4)
    R, grid = unit_grid(7)
    C = 3.0
    g = rng.uniform(0.0, C, len(grid.keys))
    s = tree_martingale_sum(T, g, grid)
    assert 0.0 < s <= l2_norm2(g, grid) <= C * l1_norm(g, grid)
    full = math.fsum(martingale_energies(g, grid, 0).values())
    assert s <= full


def test_tree_json(graph_sample):
    g, mu, R = graph_sample
    res = build_stopping_tree(mu, {(0,): mu, (1,): mu}, g, R, M=100.0, depth=3)
    d = json.loads(res.tree.to_json())
    assert d["thresholds"] == {"M": 100.0, "lambda": 4.0}
    assert sum(len(v) for v in d["members"].values()) == len(res.tree.members)
