import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multigood_cse.comparative_statics import (
    SCALE_ABOUT_MEAN,
    SPLIT_POINT,
    SpreadSpec,
    joint_convex_violation,
    marginal_orders,
    mean_preserving_spread,
    run_spread_experiment,
)
from multigood_cse.economy import EndowmentProcess, UtilitySpec
from multigood_cse.excess_demand import compute_excess_demand

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


@st.composite
def processes(draw):
    n = draw(st.integers(2, 3))
    k = draw(st.integers(1, 4))
    support = draw(st.lists(st.lists(st.floats(1.0, 5.0), min_size=n, max_size=n),
                            min_size=k, max_size=k))
    w = np.array(draw(st.lists(st.floats(0.1, 1.0), min_size=k, max_size=k)))
    return EndowmentProcess(support, w / w.sum())


def test_zero_spread_is_identity(bench):
    assert mean_preserving_spread(bench.endowments, 0.0) is bench.endowments
    assert mean_preserving_spread(bench.endowments, 0.0, SPLIT_POINT) is bench.endowments


def test_split_point_example():
    base = EndowmentProcess([[2.0, 2.0]], [1.0])
    out = mean_preserving_spread(base, 0.5, SPLIT_POINT)
    np.testing.assert_allclose(out.support, [[1.0, 1.0], [3.0, 3.0]])
    np.testing.assert_allclose(out.probs, [0.5, 0.5])
    np.testing.assert_allclose(out.mean, [2.0, 2.0], rtol=1e-15)


def test_scale_about_mean_example(bench):
    out = mean_preserving_spread(bench.endowments, 0.25)
    np.testing.assert_allclose(out.support, [[0.75, 0.75], [0.75, 3.25], [3.25, 0.75],
                                             [3.25, 3.25]])
    assert SpreadSpec(bench.endowments, 0.25).build().support.tolist() == out.support.tolist()


@given(base=processes(), s=st.floats(0.0, 0.6),
       scheme=st.sampled_from([SPLIT_POINT, SCALE_ABOUT_MEAN]))
@settings(max_examples=100)
def test_spread_preserves_mean_and_is_riskier(base, s, scheme):
    try:
        out = mean_preserving_spread(base, s, scheme)
    except ValueError:
        # only when a coordinate would turn nonpositive
        assert scheme == SCALE_ABOUT_MEAN
        mean = base.mean
        assert np.any(mean + (1 + s) * (base.support - mean) <= 0)
        return
    np.testing.assert_allclose(out.mean, base.mean, rtol=0, atol=1e-12)
    assert joint_convex_violation(out, base) <= 1e-12
    assert all(rep.holds for rep in marginal_orders(out, base))


def test_reverse_spread_is_detected(bench):
    riskier = mean_preserving_spread(bench.endowments, 0.3)
    assert joint_convex_violation(bench.endowments, riskier) > 0.1
    assert not all(rep.holds for rep in marginal_orders(bench.endowments, riskier))


def test_invalid_spreads_rejected(bench):
    with pytest.raises(ValueError):
        mean_preserving_spread(bench.endowments, -0.1)
    with pytest.raises(ValueError):
        mean_preserving_spread(bench.endowments, 1.0)
    with pytest.raises(ValueError):
        mean_preserving_spread(bench.endowments, 1.5, SPLIT_POINT)
    with pytest.raises(ValueError):
        mean_preserving_spread(bench.endowments, 0.1, "shuffle")


@pytest.fixture(scope="module")
def tiny_report(tiny):
    return run_spread_experiment(tiny, (0.0, 0.1, 0.2))


def test_tiny_experiment(tiny_report, tiny_eq):
    rep = tiny_report
    assert rep.r_nonincreasing and rep.ratio_constant and rep.icx_holds and rep.passed
    assert rep.within_hypothesis
    assert np.all(np.diff(rep.r_star) < 0)
    # the s = 0 row is a plain solve
    assert rep.r_star[0] == tiny_eq.prices_normalized.r
    assert max(rep.endowment_cx) <= 1e-12
    json.dumps(rep.to_dict())


def test_precautionary_savings_at_base_prices(tiny, tiny_report):
    base = tiny_report.results[0]
    p0 = base.prices_normalized
    prev = -base.excess.savings
    for s in tiny_report.spreads[1:]:
        cfg = tiny.with_endowments(mean_preserving_spread(tiny.endowments, s))
        sav = -compute_excess_demand(cfg, p0, howard=True).savings
        assert sav > prev
        prev = sav


def test_cobb_douglas_flagged(tiny):
    from dataclasses import replace
    cfg = replace(tiny, utility=UtilitySpec.cobb_douglas([0.4, 0.6]))
    rep = run_spread_experiment(cfg, (0.0, 0.1))
    assert not rep.within_hypothesis
    assert rep.to_dict()["within_hypothesis"] is False


def test_typed_configs_rejected(tiny):
    from dataclasses import replace

    from multigood_cse.economy import TypeProfile
    cfg = replace(tiny, types=(TypeProfile(1.0, tiny.utility, tiny.endowments),))
    with pytest.raises(ValueError):
        run_spread_experiment(cfg, (0.0, 0.1))
