"""Property battery run at randomized prices.

Each sample draws normalized prices, evaluates the excess-demand map and
tests Walras' law, homogeneity in goods prices, the shape of the savings
policy and convergence of the invariant distribution.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .distribution import CapWarning, WealthDistribution, invariant_distribution, stationarity_residual
from .economy import CES, EconomyConfig, PriceSystem
from .excess_demand import ExcessDemand, compute_excess_demand

WALRAS_REL_TOL = 1e-6
HOMOGENEITY_TOL = 1e-5
THETAS = (0.5, 2.0, 10.0)
MONOTONE_TOL = 1e-7
CONVEX_TOL = 1e-7
STATIONARITY_TOL = 1e-12
INIT_AGREEMENT_TOL = 1e-8

CHECK_NAMES = ("walras", "homogeneity", "policy_monotone", "policy_convex", "distribution")


@dataclass(frozen=True)
class CheckResult:
    passed: Optional[bool]  # None when the property is outside the model's hypotheses
    value: float
    tol: float


@dataclass(frozen=True, eq=False)
class SampleResult:
    prices: PriceSystem
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"prices": self.prices.to_dict(),
                "checks": {k: {"passed": c.passed, "value": c.value, "tol": c.tol}
                           for k, c in self.checks.items()}}


@dataclass(frozen=True, eq=False)
class BatteryReport:
    seed: int
    samples: list = field(repr=False)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.samples)

    def matrix(self) -> str:
        """Plain-text pass/fail table, one row per sample."""
        head = f"{'sample':>6}  {'r':>10}  " + "  ".join(f"{n:>15}" for n in CHECK_NAMES)
        lines = [head]
        for i, s in enumerate(self.samples):
            cells = []
            for n in CHECK_NAMES:
                c = s.checks[n]
                cells.append(f"{'n/a' if c.passed is None else ('PASS' if c.passed else 'FAIL'):>15}")
            lines.append(f"{i:>6}  {s.prices.r:>10.6f}  " + "  ".join(cells))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "passed": self.passed,
                "samples": [s.to_dict() for s in self.samples]}


def sample_prices(cfg: EconomyConfig, count: int, seed: int = 0,
                  r_range: Optional[tuple[float, float]] = None) -> list[PriceSystem]:
    """Normalized ``(p, r)`` draws: ``p_i`` uniform on ``[0.2, 1]`` before rescaling.

    ``r`` is uniform on ``r_range``, by default the inner 80% of
    ``(0, 1/beta - 1)``.
    """
    rng = np.random.default_rng(seed)
    if r_range is None:
        top = 1.0 / cfg.beta - 1.0
        r_range = (0.1 * top, 0.9 * top)
    out = []
    for _ in range(count):
        r = float(rng.uniform(*r_range))
        p = rng.uniform(0.2, 1.0, cfg.n)
        out.append(PriceSystem(p * (1.0 - r) / p.sum(), r))
    return out


def walras_check(cfg: EconomyConfig, z: ExcessDemand) -> CheckResult:
    tol = WALRAS_REL_TOL * float(np.sum(cfg.supply))
    v = abs(z.walras)
    return CheckResult(v < tol, v, tol)


def homogeneity_check(cfg: EconomyConfig, z: ExcessDemand, thetas: Sequence[float] = THETAS,
                      **kw) -> CheckResult:
    """Goods excess demand is invariant and savings scale with ``theta``."""
    worst = 0.0
    for theta in thetas:
        zt = compute_excess_demand(cfg, z.prices.scaled(theta), **kw)
        worst = max(worst,
                    float(np.max(np.abs(zt.goods - z.goods))),
                    abs(zt.savings - theta * z.savings) / theta)
    return CheckResult(worst < HOMOGENEITY_TOL, worst, HOMOGENEITY_TOL)


def policy_monotone_check(z: ExcessDemand) -> CheckResult:
    worst = 0.0
    for o in z.outcomes:
        g = o.policy.savings
        worst = max(worst, float(np.max(-np.diff(g))) / o.policy.grid.scale)
    tol = MONOTONE_TOL
    return CheckResult(worst <= tol, max(worst, 0.0), tol)


def policy_convex_check(cfg: EconomyConfig, z: ExcessDemand) -> CheckResult:
    """Divided-difference slopes of ``g`` are nondecreasing (CES only)."""
    worst = 0.0
    for o in z.outcomes:
        slopes = np.diff(o.policy.savings) / np.diff(o.policy.grid.nodes)
        worst = max(worst, float(np.max(-np.diff(slopes))))
    worst = max(worst, 0.0)
    if any(prof.utility.kind != CES for prof in cfg.profiles()):
        return CheckResult(None, worst, CONVEX_TOL)
    return CheckResult(worst <= CONVEX_TOL, worst, CONVEX_TOL)


def distribution_check(cfg: EconomyConfig, z: ExcessDemand, dist_tol: float = 1e-12) -> CheckResult:
    """Accepted fixed point is stationary and does not depend on the start."""
    worst = 0.0
    ok = True
    for k, o in enumerate(z.outcomes):
        sub = cfg.for_type(k) if cfg.types else cfg
        res = stationarity_residual(sub, z.prices, o.policy, o.distribution)
        start = WealthDistribution.point_mass(o.policy.grid, len(o.policy.grid.nodes) // 2)
        other = invariant_distribution(sub, z.prices, o.policy, tol=dist_tol, initial=start,
                                       warn_cap=False)
        gap = float(np.abs(other.mass - o.distribution.mass).sum())
        ok = ok and res < STATIONARITY_TOL and gap < INIT_AGREEMENT_TOL
        worst = max(worst, gap, res)
    return CheckResult(ok, worst, INIT_AGREEMENT_TOL)


def check_sample(cfg: EconomyConfig, prices: PriceSystem, vfi_tol: float = 1e-9,
                 dist_tol: float = 1e-12) -> SampleResult:
    kw = dict(vfi_tol=vfi_tol, dist_tol=dist_tol, howard=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CapWarning)
        z = compute_excess_demand(cfg, prices, **kw)
        checks = {
            "walras": walras_check(cfg, z),
            "homogeneity": homogeneity_check(cfg, z, **kw),
            "policy_monotone": policy_monotone_check(z),
            "policy_convex": policy_convex_check(cfg, z),
            "distribution": distribution_check(cfg, z, dist_tol),
        }
    return SampleResult(prices, checks)


def run_battery(cfg: EconomyConfig, samples: int = 10, seed: int = 0, threads: int = 1,
                vfi_tol: float = 1e-9) -> BatteryReport:
    """Run every check at ``samples`` seeded price draws.

    Results are returned in draw order whatever the thread count.
    """
    draws = sample_prices(cfg, samples, seed)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(lambda p: check_sample(cfg, p, vfi_tol), draws))
    else:
        rows = [check_sample(cfg, p, vfi_tol) for p in draws]
    return BatteryReport(seed, rows)
