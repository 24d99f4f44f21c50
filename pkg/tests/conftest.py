import warnings
from pathlib import Path

import numpy as np
import pytest

from multigood_cse.config import load_config
from multigood_cse.economy import EconomyConfig, EndowmentProcess, UtilitySpec
from multigood_cse.equilibrium import solve_equilibrium
from multigood_cse.oracle import tiny_economy

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BENCH_SUPPORT = [[1, 1], [1, 3], [3, 1], [3, 3]]


def make_economy(support=BENCH_SUPPORT, probs=None, gamma=0.5, alphas=(0.5, 0.5), beta=0.95,
                 b_bar=None, grid_points=200, kind="ces", types=None) -> EconomyConfig:
    probs = probs if probs is not None else [1.0 / len(support)] * len(support)
    utility = (UtilitySpec.ces(gamma, alphas) if kind == "ces"
               else UtilitySpec.cobb_douglas(alphas))
    return EconomyConfig(beta=beta, endowments=EndowmentProcess(support, probs),
                         utility=utility, b_bar=b_bar, grid_points=grid_points, types=types)


@pytest.fixture(scope="session")
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture(scope="session")
def bench() -> EconomyConfig:
    return load_config(CONFIGS / "benchmark.json")


@pytest.fixture(scope="session")
def bench_cd() -> EconomyConfig:
    return load_config(CONFIGS / "benchmark_cobb_douglas.json")


@pytest.fixture(scope="session")
def three_goods() -> EconomyConfig:
    return load_config(CONFIGS / "three_goods.json")


@pytest.fixture(scope="session")
def tiny() -> EconomyConfig:
    return tiny_economy()


@pytest.fixture(scope="session")
def bench_eq(bench):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return solve_equilibrium(bench)


@pytest.fixture(scope="session")
def tiny_eq(tiny):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return solve_equilibrium(tiny)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, keyed by number
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance.py::test_criterion_" in rep.nodeid and rep.when == "call" \
                    or (key == "error" and "test_criterion_" in rep.nodeid):
                n = int(rep.nodeid.split("test_criterion_")[1][:2])
                outcomes[n] = key == "passed"
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(outcomes):
        status = "PASS" if outcomes[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {ACCEPTANCE.get(n, '')}")
