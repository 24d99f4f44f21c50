import numpy as np
import pytest

from multigood_cse.checks import CHECK_NAMES, run_battery, sample_prices

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


def test_sample_prices_are_seeded_and_normalized(bench):
    a = sample_prices(bench, 5, seed=11)
    b = sample_prices(bench, 5, seed=11)
    c = sample_prices(bench, 5, seed=12)
    assert [p.as_vector().tolist() for p in a] == [p.as_vector().tolist() for p in b]
    assert [p.as_vector().tolist() for p in a] != [p.as_vector().tolist() for p in c]
    for p in a:
        assert p.is_normalized
        assert 0 < p.r < 1 / bench.beta - 1


def test_battery_on_three_goods(three_goods):
    rep = run_battery(three_goods, samples=2, seed=5)
    assert rep.passed, rep.matrix()
    assert len(rep.samples) == 2
    assert set(rep.samples[0].checks) == set(CHECK_NAMES)
    assert rep.matrix().count("\n") == 2


def test_convexity_not_applicable_to_cobb_douglas(bench_cd):
    rep = run_battery(bench_cd, samples=1, seed=0)
    assert rep.samples[0].checks["policy_convex"].passed is None
    assert "n/a" in rep.matrix()
    assert rep.passed


def test_threads_do_not_change_results(tiny):
    one = run_battery(tiny, samples=2, seed=3, threads=1)
    two = run_battery(tiny, samples=2, seed=3, threads=2)
    assert one.to_dict() == two.to_dict()
    assert np.isfinite(one.samples[0].checks["walras"].value)
