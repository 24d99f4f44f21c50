"""Closed-form static demand for CES and Cobb-Douglas preferences.

For both families demand is linear in expenditure, ``x*(c, p) = c * z(p)``,
so the whole static problem reduces to the share vector ``z(p)`` (goods per
unit of expenditure, ``p . z(p) == 1``) and a price-dependent constant in the
indirect utility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .economy import CES, UtilitySpec


@dataclass(frozen=True, eq=False)
class DemandResult:
    shares: np.ndarray
    bundle: np.ndarray
    indirect_utility_scale: float


def _check_prices(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0)):
        raise ValueError(f"prices must be strictly positive, got {p}")
    return p


def expenditure_shares(utility: UtilitySpec, p) -> np.ndarray:
    """Demand per unit of expenditure, ``z_i(p)``, normalized so ``p . z = 1``.

    CES shares are formed in log space so that gamma close to one or extreme
    price ratios do not overflow.
    """
    p = _check_prices(p)
    if utility.kind == CES:
        k = (np.log(utility.alphas) - np.log(p)) / (1.0 - utility.gamma)
        return np.exp(k - logsumexp(k + np.log(p)))
    return utility.alphas / p


def indirect_scale(utility: UtilitySpec, p) -> float:
    """Price term of the indirect utility.

    CES: ``v(c, p) = c**gamma * z(p)`` with ``z(p) = sum alpha_i z_i**gamma``.
    Cobb-Douglas: ``v(c, p) = log c + sum alpha_i log z_i``; the additive
    constant is returned.
    """
    z = expenditure_shares(utility, p)
    if utility.kind == CES:
        return float(np.sum(utility.alphas * z ** utility.gamma))
    return float(np.sum(utility.alphas * np.log(z)))


def indirect_utility(utility: UtilitySpec, c, p):
    """Indirect utility ``v(c, p)`` and its derivative in ``c``."""
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 0)):
        raise ValueError("expenditure must be strictly positive")
    k = indirect_scale(utility, p)
    if utility.kind == CES:
        g = utility.gamma
        return c ** g * k, g * c ** (g - 1.0) * k
    return np.log(c) + k, 1.0 / c


def demand(utility: UtilitySpec, c: float, p) -> DemandResult:
    """Optimal bundle for expenditure ``c`` at prices ``p``."""
    if not c > 0:
        raise ValueError("expenditure must be strictly positive")
    z = expenditure_shares(utility, p)
    return DemandResult(z, c * z, indirect_scale(utility, p))
