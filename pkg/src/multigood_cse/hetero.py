"""Excess demand for a population of finitely many ex-ante types.

Each type solves its own problem on its own wealth grid; aggregates are
weighted by the population shares. A single type with weight one reproduces
the untyped computation bit for bit.
"""

from __future__ import annotations

from typing import IO, Optional

from .economy import EconomyConfig, PriceSystem
from .excess_demand import (
    DEFAULT_DIST_TOL,
    DEFAULT_VFI_TOL,
    ExcessDemand,
    SolutionCache,
    combine,
    solve_type,
    write_log,
)


def compute_excess_demand_typed(cfg: EconomyConfig, prices: PriceSystem, *,
                                cache: Optional[SolutionCache] = None,
                                vfi_tol: float = DEFAULT_VFI_TOL,
                                dist_tol: float = DEFAULT_DIST_TOL,
                                howard: bool = False,
                                log: Optional[IO[str]] = None) -> ExcessDemand:
    """Weighted sum of per-type excess demands.

    ``cfg.profiles()`` supplies the types; an untyped config is treated as a
    single type of weight one.
    """
    if not prices.is_valid:
        raise ValueError(f"prices must satisfy p >> 0 and 0 < r < 1, got {prices.to_dict()}")
    outcomes = []
    for k, prof in enumerate(cfg.profiles()):
        sub = cfg.for_type(k)
        outcomes.append(solve_type(sub, prices, k, prof.weight, cache, vfi_tol, dist_tol, howard))
    z = combine(prices, cfg.supply, tuple(outcomes))
    if log is not None:
        write_log(log, z)
    return z
