import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from multigood_cse.demand import demand, expenditure_shares, indirect_scale, indirect_utility
from multigood_cse.economy import UtilitySpec

SYM = UtilitySpec.ces(0.5, [0.5, 0.5])


def _alphas(draw_w):
    w = np.asarray(draw_w, dtype=float)
    return w / w.sum()


utility_st = st.one_of(
    st.builds(lambda g, w: UtilitySpec.ces(g, _alphas(w)),
              st.floats(0.05, 0.95),
              st.lists(st.floats(0.05, 1.0), min_size=2, max_size=4)),
    st.builds(lambda w: UtilitySpec.cobb_douglas(_alphas(w)),
              st.lists(st.floats(0.05, 1.0), min_size=2, max_size=4)),
)


@st.composite
def problem(draw):
    u = draw(utility_st)
    n = u.n_goods
    p = np.array(draw(st.lists(st.floats(0.01, 100.0), min_size=n, max_size=n)))
    c = draw(st.floats(1e-3, 1e3))
    return u, c, p


def generic_demand(u: UtilitySpec, c: float, p: np.ndarray) -> np.ndarray:
    """SLSQP on the budget plane, started from equal spending."""
    x0 = c / (len(p) * p)
    res = minimize(lambda x: -u(np.maximum(x, 1e-12)), x0, method="SLSQP",
                   constraints=[{"type": "eq", "fun": lambda x: p @ x - c}],
                   bounds=[(1e-12, None)] * len(p), options={"ftol": 1e-15, "maxiter": 500})
    return res.x


def test_symmetric_shares():
    np.testing.assert_allclose(expenditure_shares(SYM, [1, 1]), [0.5, 0.5], rtol=1e-15)


def test_cobb_douglas_shares():
    u = UtilitySpec.cobb_douglas([0.3, 0.7])
    np.testing.assert_allclose(expenditure_shares(u, [1, 2]), [0.3, 0.35], rtol=1e-15)


def test_ces_shares_against_generic_optimizer():
    z = expenditure_shares(SYM, [1, 4])
    np.testing.assert_allclose(z, [0.8, 0.05], rtol=1e-12)
    x = generic_demand(SYM, 1.0, np.array([1.0, 4.0]))
    np.testing.assert_allclose(x, [0.8, 0.05], atol=1e-6)


def test_indirect_utility_matches_direct_evaluation():
    v, dv = indirect_utility(SYM, 4.0, [1, 1])
    assert indirect_scale(SYM, [1, 1]) == pytest.approx(np.sqrt(0.5), rel=1e-15)
    assert v == pytest.approx(1.4142135623730951, rel=1e-14)
    bundle = demand(SYM, 4.0, [1, 1]).bundle
    assert v == pytest.approx(float(SYM(bundle)), rel=1e-14)
    assert dv == pytest.approx(0.5 * 4.0 ** -0.5 * np.sqrt(0.5), rel=1e-14)


def test_cobb_douglas_marginal_is_one_over_c():
    u = UtilitySpec.cobb_douglas([0.3, 0.7])
    for p in ([1, 1], [0.2, 7.0]):
        _, dv = indirect_utility(u, 1.0, p)
        assert dv == 1.0


def test_inada_limits():
    _, lo = indirect_utility(SYM, 1e-8, [1, 1])
    _, hi = indirect_utility(SYM, 1e8, [1, 1])
    assert lo > 1e3 and hi < 1e-3


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        expenditure_shares(SYM, [1, 0])
    with pytest.raises(ValueError):
        indirect_utility(SYM, 0.0, [1, 1])
    with pytest.raises(ValueError):
        demand(SYM, -1.0, [1, 1])


def test_extreme_prices_do_not_overflow():
    # the naive power (alpha/p)**(1/(1-gamma)) overflows here
    u = UtilitySpec.ces(0.98, [0.5, 0.5])
    p = np.array([1e-3, 1.0])
    z = expenditure_shares(u, p)
    assert np.all(np.isfinite(z)) and np.all(z > 0)
    assert p @ z == pytest.approx(1.0, rel=1e-12)


@given(problem())
@settings(max_examples=300)
def test_budget_exhaustion(prob):
    u, c, p = prob
    x = demand(u, c, p).bundle
    assert np.all(x > 0)
    assert p @ x == pytest.approx(c, rel=1e-12)


@given(problem(), st.floats(1e-3, 1e3))
@settings(max_examples=200)
def test_demand_is_homogeneous_of_degree_zero(prob, theta):
    u, c, p = prob
    np.testing.assert_allclose(demand(u, theta * c, theta * p).bundle, demand(u, c, p).bundle,
                               rtol=1e-12)


@given(problem())
@settings(max_examples=100, deadline=None)
def test_demand_beats_random_feasible_bundles(prob):
    u, c, p = prob
    best = float(u(demand(u, c, p).bundle))
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(len(p)), size=1000)
    others = w * c / p
    vals = u(others)
    assert np.all(vals <= best + 1e-12 * max(1.0, abs(best)))


@given(problem())
@settings(max_examples=100)
def test_gross_substitutes(prob):
    u, c, p = prob
    if u.kind != "ces":
        return
    x = demand(u, c, p).bundle
    for j in range(len(p)):
        q = p.copy()
        q[j] *= 1.01
        y = demand(u, c, q).bundle
        others = np.arange(len(p)) != j
        assert np.all(y[others] >= x[others])
        # the effect is below float resolution when good j takes a negligible budget share
        if p[j] * x[j] > 1e-6 * c:
            assert np.all(y[others] > x[others])


@given(problem())
@settings(max_examples=100)
def test_marginal_utility_matches_finite_difference(prob):
    u, c, p = prob
    h = 1e-6 * c
    v_hi, _ = indirect_utility(u, c + h, p)
    v_lo, _ = indirect_utility(u, c - h, p)
    _, dv = indirect_utility(u, c, p)
    assert (v_hi - v_lo) / (2 * h) == pytest.approx(dv, rel=1e-6)
