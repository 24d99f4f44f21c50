"""The excess-demand map ``zeta(p, r)`` over goods and savings.

``zeta_i`` is per-good aggregate demand minus per-good supply and
``zeta_{n+1}`` is minus aggregate savings. Prices need not be normalized,
which keeps homogeneity directly testable.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from .bellman import PolicySolution, solve_value_function
from .distribution import Aggregates, WealthDistribution, aggregate, invariant_distribution
from .economy import EconomyConfig, PriceSystem, build_grid, savings_cap

DEFAULT_VFI_TOL = 1e-8
DEFAULT_DIST_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TypeOutcome:
    """Solution for one ex-ante type at given prices."""

    weight: float
    policy: PolicySolution
    distribution: WealthDistribution
    aggregates: Aggregates


@dataclass(frozen=True, eq=False)
class ExcessDemand:
    """``zeta(p, r)`` together with the objects it was computed from."""

    prices: PriceSystem
    goods: np.ndarray
    savings: float
    outcomes: tuple[TypeOutcome, ...] = field(repr=False)

    @property
    def vector(self) -> np.ndarray:
        return np.append(self.goods, self.savings)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.vector)))

    @property
    def walras(self) -> float:
        return walras_residual(self)

    @property
    def policy(self) -> PolicySolution:
        return self.outcomes[0].policy

    @property
    def distribution(self) -> WealthDistribution:
        return self.outcomes[0].distribution

    @property
    def aggregate_savings(self) -> float:
        return -self.savings


def walras_residual(z: ExcessDemand) -> float:
    """``p . zeta_goods + r * zeta_savings``; zero up to discretization."""
    return float(z.prices.p @ z.goods + z.prices.r * z.savings)


def _key(prices: PriceSystem) -> np.ndarray:
    return prices.as_vector()


def _remap(sol: PolicySolution, cfg: EconomyConfig, prices: PriceSystem, grid):
    """Carry a solution to another grid through the normalized wealth coordinate."""
    t_old = (sol.grid.nodes - sol.grid.lower) / sol.grid.scale
    t_new = (grid.nodes - grid.lower) / grid.scale
    values = np.interp(t_new, t_old, sol.values)
    share = (sol.savings - sol.b_lower) / sol.grid.scale
    savings = grid.lower + grid.scale * np.interp(t_new, t_old, share)
    savings = np.clip(savings, grid.lower, np.minimum(grid.nodes, savings_cap(cfg, prices)))
    savings[0] = grid.lower
    return values, savings


class SolutionCache:
    """Thread-safe store of recent policy solutions used for warm starts.

    Entries are keyed by type index and price vector; lookups return the
    entry nearest in ``(p, r)``.
    """

    def __init__(self, maxsize: int = 64):
        self.maxsize = maxsize
        self._data: "OrderedDict[tuple, PolicySolution]" = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._data)

    def put(self, k: int, sol: PolicySolution) -> None:
        key = (k, *_key(sol.prices).tolist())
        with self._lock:
            self._data[key] = sol
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def nearest(self, k: int, prices: PriceSystem) -> Optional[PolicySolution]:
        target = _key(prices)
        with self._lock:
            best, best_d = None, np.inf
            for key, sol in self._data.items():
                if key[0] != k:
                    continue
                d = float(np.linalg.norm(np.asarray(key[1:]) - target))
                if d < best_d:
                    best, best_d = sol, d
            return best


def solve_type(cfg: EconomyConfig, prices: PriceSystem, k: int = 0, weight: float = 1.0,
               cache: Optional[SolutionCache] = None, vfi_tol: float = DEFAULT_VFI_TOL,
               dist_tol: float = DEFAULT_DIST_TOL, howard: bool = False) -> TypeOutcome:
    """Policy, invariant distribution and aggregates of a single-type economy."""
    grid = build_grid(cfg, prices)
    initial = None
    if cache is not None:
        prev = cache.nearest(k, prices)
        if prev is not None and prev.cfg.n == cfg.n:
            initial = _remap(prev, cfg, prices, grid)
    policy = solve_value_function(cfg, prices, grid, tol=vfi_tol, initial=initial, howard=howard)
    if cache is not None:
        cache.put(k, policy)
    mu = invariant_distribution(cfg, prices, policy, tol=dist_tol)
    return TypeOutcome(weight, policy, mu, aggregate(cfg, prices, policy, mu))


def combine(prices: PriceSystem, supply: np.ndarray,
            outcomes: tuple[TypeOutcome, ...]) -> ExcessDemand:
    """Population-weighted excess demand from per-type outcomes."""
    demand = np.zeros_like(supply)
    savings = 0.0
    for o in outcomes:
        demand = demand + o.weight * o.aggregates.demand
        savings = savings + o.weight * o.aggregates.savings
    return ExcessDemand(prices, demand - supply, -savings, outcomes)


def compute_excess_demand(cfg: EconomyConfig, prices: PriceSystem, *,
                          cache: Optional[SolutionCache] = None,
                          vfi_tol: float = DEFAULT_VFI_TOL,
                          dist_tol: float = DEFAULT_DIST_TOL,
                          howard: bool = False,
                          log: Optional[IO[str]] = None) -> ExcessDemand:
    """Evaluate ``zeta(p, r)`` for a single-type economy.

    Economies with a ``types`` list are routed to
    :func:`multigood_cse.hetero.compute_excess_demand_typed`.

    Parameters
    ----------
    cache : SolutionCache, optional
        Warm-start store; results are identical in exact arithmetic but may
        differ at the solver tolerance from a cold start.
    log : file-like, optional
        Receives one JSON line per evaluation.
    """
    if not prices.is_valid:
        raise ValueError(f"prices must satisfy p >> 0 and 0 < r < 1, got {prices.to_dict()}")
    if cfg.types:
        from .hetero import compute_excess_demand_typed
        return compute_excess_demand_typed(cfg, prices, cache=cache, vfi_tol=vfi_tol,
                                           dist_tol=dist_tol, howard=howard, log=log)
    outcome = solve_type(cfg, prices, 0, 1.0, cache, vfi_tol, dist_tol, howard)
    z = combine(prices, cfg.endowments.mean, (outcome,))
    if log is not None:
        write_log(log, z)
    return z


def write_log(log: IO[str], z: ExcessDemand) -> None:
    rec = {
        "p": z.prices.p.tolist(),
        "r": z.prices.r,
        "zeta": z.vector.tolist(),
        "walras": z.walras,
        "vfi_iterations": [o.policy.iterations for o in z.outcomes],
        "dist_iterations": [o.distribution.iterations for o in z.outcomes],
    }
    log.write(json.dumps(rec) + "\n")
    log.flush()
