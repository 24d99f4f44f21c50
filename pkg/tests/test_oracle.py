from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from multigood_cse.bellman import PolicySolution
from multigood_cse.demand import demand
from multigood_cse.economy import PriceSystem, UtilitySpec, WealthGrid, build_grid
from multigood_cse.oracle import (
    OracleConfig,
    oracle_bounds,
    oracle_demand,
    oracle_dp,
    oracle_equilibrium,
    oracle_invariant,
    tiny_economy,
    transition_matrix,
)

from conftest import make_economy


def test_symmetric_demand():
    u = UtilitySpec.ces(0.5, [0.5, 0.5])
    for c in (0.1, 1.0, 37.0):
        np.testing.assert_allclose(oracle_demand(u, c, [1, 1]), [c / 2, c / 2], atol=1e-10 * c)


def test_cobb_douglas_demand():
    u = UtilitySpec.cobb_douglas([0.3, 0.7])
    np.testing.assert_allclose(oracle_demand(u, 1.0, [1, 1]), [0.3, 0.7], atol=1e-12)


def test_closed_form_agreement_sample(rng):
    for _ in range(100):
        g = rng.uniform(0.05, 0.95)
        a = rng.uniform(0.05, 0.95)
        u = UtilitySpec.ces(g, [a, 1 - a]) if rng.random() < 0.8 else \
            UtilitySpec.cobb_douglas([a, 1 - a])
        p = rng.uniform(0.1, 10.0, 2)
        c = rng.uniform(0.1, 100.0)
        np.testing.assert_allclose(oracle_demand(u, c, p), demand(u, c, p).bundle,
                                   rtol=1e-8, atol=1e-12)


def test_demand_rejects_more_goods():
    with pytest.raises(ValueError):
        oracle_demand(UtilitySpec.ces(0.5, [0.3, 0.3, 0.4]), 1.0, [1, 1, 1])


def test_bounds_match_main_geometry():
    cfg = make_economy(grid_points=60)
    prices = PriceSystem([0.3, 0.3], 0.4)
    b_lo, cap, hi = oracle_bounds(cfg, prices)
    grid = build_grid(cfg, prices)
    assert b_lo == pytest.approx(grid.lower, rel=1e-14)
    assert hi == pytest.approx(grid.upper, rel=1e-14)


def test_myopic_oracle_policy():
    cfg = replace(make_economy(grid_points=60), beta=0.0)
    prices = PriceSystem([0.3, 0.3], 0.4)
    pol = oracle_dp(cfg, prices, b_points=500)
    np.testing.assert_array_equal(pol.savings, pol.b_lower)


def test_oracle_policy_is_monotone(tiny, tiny_eq):
    pol = oracle_dp(tiny, tiny_eq.prices_normalized)
    assert np.all(np.diff(pol.savings) >= 0)
    assert pol.sup_norm_gap < 1e-10


def test_node_cap_enforced(tiny, tiny_eq):
    big = tiny_economy(grid_points=201)
    with pytest.raises(ValueError):
        oracle_dp(big, tiny_eq.prices_normalized)
    with pytest.raises(ValueError):
        oracle_invariant(big, tiny_eq.prices_normalized,
                         replace(tiny_eq.policy, grid=build_grid(big, tiny_eq.prices_normalized)))


def test_transition_matrix_is_stochastic(tiny, tiny_eq):
    P = transition_matrix(tiny, tiny_eq.prices_normalized, tiny_eq.policy)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(P >= 0)


def test_degenerate_endowment_and_constant_policy():
    cfg = make_economy(support=[[1, 1]], probs=[1.0])
    prices = PriceSystem([1.0, 1.0], 0.5)
    nodes = np.linspace(-4.0, 10.0, 8)
    grid = WealthGrid(nodes, nodes[0], nodes[-1])
    # everyone lands on (1 + r) * 2 + 2 = 5, halfway between the nodes 4 and 6
    pol = PolicySolution(cfg=cfg, prices=prices, grid=grid, values=np.zeros(8),
                         savings=np.full(8, 2.0), euler_residuals=np.zeros(8), iterations=0,
                         sup_norm_gap=0.0, gaps=np.empty(0), b_lower=-4.0, cap=10.0)
    mu = oracle_invariant(cfg, prices, pol)
    expected = np.zeros(8)
    expected[4] = expected[5] = 0.5
    np.testing.assert_allclose(mu.mass, expected, atol=1e-12)


@pytest.fixture(scope="module")
def symmetric_lattice():
    cfg = replace(tiny_economy(), utility=UtilitySpec.ces(0.5, [0.5, 0.5]))
    oc = OracleConfig(lattice_b_points=1000)
    ratios = np.linspace(0.8, 1.2, 9)
    rates = np.linspace(0.09, 0.11, 11)
    return oracle_equilibrium(cfg, oc, ratios=ratios, rates=rates)


def test_symmetric_lattice_minimizer(symmetric_lattice):
    lat = symmetric_lattice
    assert abs(lat.best_ratio - 1.0) <= lat.ratio_cell


def test_single_basin(tiny):
    lat = oracle_equilibrium(tiny, OracleConfig(price_lattice=20, lattice_b_points=1000))
    f = lat.residual
    level = f.min() + 0.05 * (f.max() - f.min())
    _, count = ndimage.label(f <= level)
    assert count == 1


def test_lattice_csv(symmetric_lattice, tmp_path):
    path = tmp_path / "field.csv"
    symmetric_lattice.to_csv(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    assert data.dtype.names == ("ratio", "r", "residual", "residual_l2")
    assert len(data) == 9 * 11
    # sup-norm ties within 1e-9 relative are broken by the Euclidean norm
    best = symmetric_lattice.best_residual
    assert np.min(data["residual"]) <= best <= np.min(data["residual"]) * (1 + 1e-9)


def test_lattice_rejects_more_goods(three_goods):
    with pytest.raises(ValueError):
        oracle_equilibrium(three_goods)
