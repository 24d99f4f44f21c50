"""Wealth distributions: the push-forward operator, its fixed point and orderings.

Off-grid destinations ``(1+r) g(a) + p.y`` are split between the two
bracketing nodes with linear (lottery) weights, which preserves the mean of
every transition exactly. The operator is applied implicitly from a
precomputed (index, weight) table; no N x N matrix is formed.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from .bellman import ConvergenceError, PolicySolution
from .demand import expenditure_shares
from .economy import EconomyConfig, PriceSystem, WealthGrid

ICX = "icx"
CX = "cx"

# mass tolerance of a distribution and per-step drift allowed before renormalizing
MASS_TOL = 1e-12
DRIFT_TOL = 1e-13
# a destination may leave the grid by this much (relative to the span) before it is an error
CONTAINMENT_TOL = 1e-9
# cap diagnostics: mass within one cell of the top of the grid
CAP_WARN_MASS = 1e-6


class CapWarning(UserWarning):
    """Mass accumulates near the upper wealth bound."""


@dataclass(frozen=True, eq=False)
class WealthDistribution:
    """Probability masses on the nodes of a wealth grid."""

    grid: WealthGrid
    mass: np.ndarray
    iterations: int = 0
    residual: float = float("nan")
    gaps: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.shape != self.grid.nodes.shape:
            raise ValueError("mass does not match the grid")
        if np.any(m < 0) or abs(m.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses must be nonnegative and sum to 1 (sum {m.sum()!r})")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @classmethod
    def uniform(cls, grid: WealthGrid) -> "WealthDistribution":
        n = len(grid.nodes)
        return cls(grid, np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, grid: WealthGrid, index: int) -> "WealthDistribution":
        m = np.zeros(len(grid.nodes))
        m[index] = 1.0
        return cls(grid, m)

    @cached_property
    def mean(self) -> float:
        return float(self.mass @ self.grid.nodes)

    @cached_property
    def variance(self) -> float:
        d = self.grid.nodes - self.mean
        return float(self.mass @ (d * d))

    @cached_property
    def gini(self) -> float:
        """Mean absolute difference over twice the absolute mean."""
        a = self.grid.nodes
        m = self.mass
        cum_m = np.cumsum(m)
        cum_am = np.cumsum(m * a)
        # sum_{i,j} m_i m_j |a_i - a_j| = 2 sum_j m_j (a_j F_j - S_j) with sorted nodes
        mad = 2.0 * float(np.sum(m * (a * cum_m - cum_am)))
        mu = self.mean
        return mad / (2.0 * abs(mu)) if mu != 0 else float("nan")

    def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(self.mass @ f(self.grid.nodes))

    def mass_at_top(self) -> float:
        """Mass on the upper wealth bound itself."""
        return float(self.mass[-1])

    def mass_near_top(self) -> float:
        """Mass on the last two nodes, i.e. within one cell of the upper bound."""
        return float(self.mass[-2:].sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "mass", "cumulative_mass"])
            for a, m, cm in zip(self.grid.nodes, self.mass, np.cumsum(self.mass)):
                w.writerow([repr(float(a)), repr(float(m)), repr(float(cm))])


@dataclass(frozen=True)
class LotteryTable:
    """Lower bracketing node and upper-node weight for every (node, state)."""

    index: np.ndarray
    weight: np.ndarray
    probs: np.ndarray


def lottery_table(cfg: EconomyConfig, prices: PriceSystem, policy: PolicySolution) -> LotteryTable:
    nodes = policy.grid.nodes
    dest = (1.0 + prices.r) * policy.savings[:, None] + cfg.endowments.values(prices.p)[None, :]
    slack = CONTAINMENT_TOL * policy.grid.scale
    if dest.min() < nodes[0] - slack or dest.max() > nodes[-1] + slack:
        raise RuntimeError(
            f"transition leaves the wealth grid: destinations in [{float(dest.min())!r}, "
            f"{float(dest.max())!r}] vs bounds [{float(nodes[0])!r}, {float(nodes[-1])!r}]")
    dest = np.clip(dest, nodes[0], nodes[-1])
    k = np.clip(np.searchsorted(nodes, dest, side="right") - 1, 0, len(nodes) - 2)
    w = (dest - nodes[k]) / (nodes[k + 1] - nodes[k])
    return LotteryTable(np.ascontiguousarray(k, dtype=np.int64), np.ascontiguousarray(w),
                        np.ascontiguousarray(cfg.endowments.probs, dtype=float))


@njit(cache=True, nogil=True)
def _push(mass, index, weight, probs, out):
    out[:] = 0.0
    for j in range(mass.shape[0]):
        m = mass[j]
        if m == 0.0:
            continue
        for s in range(probs.shape[0]):
            q = m * probs[s]
            k = index[j, s]
            w = weight[j, s]
            out[k] += q * (1.0 - w)
            out[k + 1] += q * w


@njit(cache=True, nogil=True)
def _power(mass, index, weight, probs, tol, max_iter, drift_tol, gaps):
    cur = mass.copy()
    nxt = np.empty_like(cur)
    gap = np.inf
    for it in range(max_iter):
        _push(cur, index, weight, probs, nxt)
        total = nxt.sum()
        if abs(total - 1.0) > drift_tol:
            return cur, it, gap, total
        nxt /= total
        gap = np.abs(nxt - cur).sum()
        gaps[it] = gap
        if gap < tol:
            # cur is the accepted fixed point; gap is exactly |M cur - cur|_1
            return cur, it + 1, gap, 1.0
        cur, nxt = nxt, cur
    return cur, max_iter, gap, 1.0


def apply_M(cfg: EconomyConfig, prices: PriceSystem, policy: PolicySolution,
            dist_in: WealthDistribution, table: Optional[LotteryTable] = None) -> WealthDistribution:
    """Push a distribution forward one period."""
    if dist_in.grid is not policy.grid and not np.array_equal(dist_in.grid.nodes,
                                                               policy.grid.nodes):
        raise ValueError("distribution and policy live on different grids")
    table = table or lottery_table(cfg, prices, policy)
    out = np.empty(len(policy.grid.nodes))
    _push(np.ascontiguousarray(dist_in.mass), table.index, table.weight, table.probs, out)
    drift = abs(out.sum() - 1.0)
    if drift > DRIFT_TOL:
        raise RuntimeError(f"mass drift {drift:.3e} in push-forward")
    return WealthDistribution(policy.grid, out / out.sum())


def invariant_distribution(cfg: EconomyConfig, prices: PriceSystem, policy: PolicySolution,
                           tol: float = 1e-12, max_iter: int = 200_000,
                           initial: Optional[WealthDistribution] = None,
                           warn_cap: bool = True) -> WealthDistribution:
    """Power iteration on the push-forward operator.

    Starts from the uniform distribution unless ``initial`` is given, and
    stops once ``|M mu - mu|_1 < tol``; that residual is stored on the result.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` sweeps.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    table = lottery_table(cfg, prices, policy)
    start = initial if initial is not None else WealthDistribution.uniform(policy.grid)
    gaps = np.empty(max_iter)
    mass, it, gap, total = _power(np.ascontiguousarray(start.mass), table.index, table.weight,
                                  table.probs, float(tol), int(max_iter), DRIFT_TOL, gaps)
    if total != 1.0:
        raise RuntimeError(f"mass drift {abs(total - 1.0):.3e} in power iteration")
    if not gap < tol:
        raise ConvergenceError(f"invariant distribution did not converge in {max_iter} sweeps",
                               gap)
    mass = mass / mass.sum()
    dist = WealthDistribution(policy.grid, mass, iterations=it, residual=float(gap),
                              gaps=gaps[max(0, it - 20):it].copy())
    if warn_cap and dist.mass_near_top() > CAP_WARN_MASS:
        warnings.warn(f"mass {dist.mass_near_top():.3e} within one cell of the upper wealth "
                      "bound; the savings cap may bind", CapWarning, stacklevel=2)
    return dist


def stationarity_residual(cfg: EconomyConfig, prices: PriceSystem, policy: PolicySolution,
                          dist: WealthDistribution) -> float:
    """``|M mu - mu|_1`` without renormalization."""
    table = lottery_table(cfg, prices, policy)
    out = np.empty(len(policy.grid.nodes))
    _push(np.ascontiguousarray(dist.mass), table.index, table.weight, table.probs, out)
    return float(np.abs(out - dist.mass).sum())


@dataclass(frozen=True, eq=False)
class Aggregates:
    savings: float
    demand: np.ndarray
    mean_wealth: float
    consumption: float


def aggregate(cfg: EconomyConfig, prices: PriceSystem, policy: PolicySolution,
              mu: WealthDistribution) -> Aggregates:
    """Population totals under ``mu``: savings, per-good demand, mean wealth."""
    m = mu.mass
    c = policy.consumption
    spend = float(m @ c)
    z = expenditure_shares(cfg.utility, prices.p)
    return Aggregates(
        savings=float(m @ policy.savings),
        demand=spend * z,
        mean_wealth=float(m @ policy.grid.nodes),
        consumption=spend,
    )


@dataclass(frozen=True)
class OrderReport:
    holds: bool
    max_violation: float
    n_tests: int
    mean_gap: float


def _pooled_thresholds(d1: WealthDistribution, d2: WealthDistribution, count: int) -> np.ndarray:
    pts = np.concatenate([d1.grid.nodes, d2.grid.nodes])
    w = np.concatenate([d1.mass, d2.mass]) * 0.5
    order = np.argsort(pts, kind="stable")
    pts, w = pts[order], w[order]
    cdf = np.cumsum(w)
    levels = np.linspace(0.0, 1.0, count)
    idx = np.clip(np.searchsorted(cdf, levels, side="left"), 0, len(pts) - 1)
    return pts[idx]


def test_battery(d1: WealthDistribution, d2: WealthDistribution, mode: str = ICX,
                 count: int = 101) -> list[Callable[[np.ndarray], np.ndarray]]:
    """Convex (or increasing convex) test functions for comparing d1 and d2."""
    ks = _pooled_thresholds(d1, d2, count)
    fs: list[Callable] = [lambda a: a]
    fs += [lambda a, k=k: np.maximum(a - k, 0.0) for k in ks]
    if mode == CX:
        fs += [lambda a, k=k: np.abs(a - k) for k in ks]
    return fs


test_battery.__test__ = False  # not a pytest test


def convex_order_geq(d1: WealthDistribution, d2: WealthDistribution, mode: str = ICX,
                     test_functions: Optional[Sequence[Callable]] = None,
                     tol: float = 1e-10) -> OrderReport:
    """Check ``d1`` dominates ``d2`` in the convex (CX) or increasing convex (ICX) order.

    Every test function must satisfy ``E_{d1} f >= E_{d2} f - tol``; CX mode
    also requires equal means within ``tol``.
    """
    if mode not in (ICX, CX):
        raise ValueError(f"unknown order {mode!r}")
    fs = list(test_functions) if test_functions is not None else test_battery(d1, d2, mode)
    viol = max(d2.expectation(f) - d1.expectation(f) for f in fs)
    mean_gap = d1.mean - d2.mean
    holds = viol <= tol
    if mode == CX and abs(mean_gap) > tol:
        holds = False
        viol = max(viol, abs(mean_gap))
    return OrderReport(bool(holds), float(max(viol, 0.0)), len(fs), float(mean_gap))
