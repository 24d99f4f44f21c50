import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multigood_cse.checks import sample_prices
from multigood_cse.distribution import CapWarning
from multigood_cse.economy import PriceSystem
from multigood_cse.excess_demand import (
    ExcessDemand,
    SolutionCache,
    compute_excess_demand,
    walras_residual,
)

pytestmark = pytest.mark.filterwarnings("ignore::multigood_cse.distribution.CapWarning")


def zeta(cfg, prices, **kw):
    kw.setdefault("howard", True)
    return compute_excess_demand(cfg, prices, **kw)


normalized_st = st.builds(
    lambda w, r: PriceSystem(np.array([w, 1 - w]) * (1 - r), r),
    st.floats(0.2, 0.8), st.floats(0.005, 0.048))


def test_walras_residual_of_hand_built_vectors():
    prices = PriceSystem([1.0, 1.0], 0.3)
    z = ExcessDemand(prices, np.zeros(2), 0.0, ())
    assert walras_residual(z) == 0.0
    z = ExcessDemand(prices, np.array([1.0, -1.0]), 0.0, ())
    assert walras_residual(z) == 0.0
    z = ExcessDemand(prices, np.array([1.0, 2.0]), -10.0, ())
    assert walras_residual(z) == pytest.approx(0.0, abs=1e-15)
    assert z.walras == walras_residual(z)


@given(prices=normalized_st)
@settings(max_examples=10, deadline=None)
def test_walras_law(bench, prices):
    z = zeta(bench, prices)
    bound = 1e-6 * float(np.sum(bench.supply))
    assert abs(z.walras) < bound
    # aggregate demand is nonnegative
    assert np.all(z.goods >= -bench.supply)


@pytest.mark.parametrize("theta", [0.5, 2.0, 10.0])
def test_homogeneity(bench, theta):
    prices = PriceSystem([0.4, 0.57], 0.03)
    z = zeta(bench, prices)
    zt = zeta(bench, prices.scaled(theta))
    assert np.max(np.abs(zt.goods - z.goods)) < 1e-5
    assert abs(zt.savings - theta * z.savings) < 1e-5 * theta


def test_symmetric_goods_have_equal_excess_demand(bench):
    z = zeta(bench, PriceSystem([0.485, 0.485], 0.03))
    assert z.goods[0] == pytest.approx(z.goods[1], abs=1e-10)


def test_continuity_probe(bench):
    prices = PriceSystem([0.4, 0.57], 0.03)
    z = zeta(bench, prices)
    z2 = zeta(bench, PriceSystem(prices.p + np.array([1e-4, 0.0]), prices.r))
    assert np.max(np.abs(z2.vector - z.vector)) < 0.1


def test_three_goods_walras(three_goods):
    for prices in sample_prices(three_goods, 3, seed=7):
        z = zeta(three_goods, prices)
        assert abs(z.walras) < 1e-6 * float(np.sum(three_goods.supply))


def test_cache_warm_start_agrees_with_cold(bench):
    cache = SolutionCache()
    a = PriceSystem([0.4, 0.57], 0.03)
    b = PriceSystem([0.41, 0.56], 0.03)
    zeta(bench, a, cache=cache, howard=False)
    warm = zeta(bench, b, cache=cache, howard=False)
    cold = zeta(bench, b, howard=False)
    assert len(cache) == 2
    assert warm.policy.iterations < cold.policy.iterations
    assert np.max(np.abs(warm.vector - cold.vector)) < 1e-6


def test_log_records(bench):
    buf = io.StringIO()
    zeta(bench, PriceSystem([0.4, 0.57], 0.03), log=buf)
    rec = json.loads(buf.getvalue())
    assert {"p", "r", "zeta", "walras", "vfi_iterations", "dist_iterations"} <= set(rec)
    assert len(rec["zeta"]) == 3


def test_invalid_prices_rejected(bench):
    with pytest.raises(ValueError):
        compute_excess_demand(bench, PriceSystem([0.5, -0.1], 0.03))
    with pytest.raises(ValueError):
        compute_excess_demand(bench, PriceSystem([0.5, 0.5], 1.0))


def test_savings_sign_brackets_the_root(bench):
    # aggregate savings rise with r: positive excess demand for savings at the low end
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CapWarning)
        lo = zeta(bench, PriceSystem([0.495, 0.495], 0.01))
        hi = zeta(bench, PriceSystem([0.47, 0.47], 0.06))
    assert lo.savings > 0 > hi.savings


def test_excess_demand_grows_towards_the_boundary(bench):
    # a weaker, finite-sequence version of the blow-up at the edge of the price set
    r = 0.03
    by_price = [np.abs(zeta(bench, PriceSystem(np.array([e, 1 - e]) * (1 - r), r)).vector).sum()
                for e in (0.1, 0.03, 0.01, 0.003)]
    by_rate = [np.abs(zeta(bench, PriceSystem(np.array([0.5, 0.5]) * (1 - r), r)).vector).sum()
               for r in (0.03, 0.01, 0.003)]
    assert np.all(np.diff(by_price) > 0)
    assert np.all(np.diff(by_rate) > 0)
