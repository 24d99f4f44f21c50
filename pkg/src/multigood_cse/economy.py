"""Economy primitives: endowments, preferences, prices and the wealth geometry.

Everything here is an immutable value object or a pure function of one.
Constructors only coerce shapes; invariant checking is done by
:func:`validate_config`, which reports violations as data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

CES = "ces"
COBB_DOUGLAS = "cobb_douglas"

MIN_GRID_POINTS = 50
DEFAULT_GRID_POINTS = 200
DEFAULT_CURVATURE = 1.7
# b_bar default, in units of the mean endowment value at unit prices
DEFAULT_B_BAR_MULTIPLE = 50.0
# |lower wealth bound| is capped at this multiple of the mean endowment value
BORROWING_CAP_MULTIPLE = 1e4


class ConfigError(ValueError):
    """An economy configuration violates a fatal invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def _frozen_array(x, ndim: int) -> np.ndarray:
    arr = np.array(x, dtype=float, ndmin=ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EndowmentProcess:
    """Finite joint distribution of the endowment vector.

    Parameters
    ----------
    support : array_like, shape (S, n)
        Endowment vectors, one per row (goods units).
    probs : array_like, shape (S,)
        Probability of each row.
    """

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "support", _frozen_array(self.support, 2))
        object.__setattr__(self, "probs", _frozen_array(self.probs, 1))
        if self.support.shape[0] != self.probs.shape[0]:
            raise ValueError(
                f"support has {self.support.shape[0]} rows but probs has "
                f"{self.probs.shape[0]} entries"
            )

    @property
    def n_goods(self) -> int:
        return self.support.shape[1]

    @property
    def n_states(self) -> int:
        return self.support.shape[0]

    @property
    def mean(self) -> np.ndarray:
        """Per-good mean endowment, i.e. the aggregate supply of each good."""
        return self.probs @ self.support

    def values(self, p) -> np.ndarray:
        """Endowment value ``p . y`` of every support point."""
        return self.support @ np.asarray(p, dtype=float)

    def marginal(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Marginal distribution of good ``i`` as (sorted values, probs)."""
        vals, inv = np.unique(self.support[:, i], return_inverse=True)
        probs = np.zeros(len(vals))
        np.add.at(probs, inv, self.probs)
        return vals, probs

    def dominating_index(self) -> Optional[int]:
        """Index of a support point strictly above every other one, if any."""
        for k in range(self.n_states):
            others = np.delete(self.support, k, axis=0)
            if np.all(self.support[k] > others):
                return k
        return None

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "probs": self.probs.tolist()}


@dataclass(frozen=True, eq=False)
class UtilitySpec:
    """Static utility over consumption bundles.

    ``kind`` is ``"ces"`` (``sum alpha_i x_i**gamma``) or ``"cobb_douglas"``
    (``sum alpha_i log x_i``).
    """

    kind: str
    alphas: np.ndarray
    gamma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "alphas", _frozen_array(self.alphas, 1))
        if self.kind not in (CES, COBB_DOUGLAS):
            raise ValueError(f"unknown utility kind {self.kind!r}")

    @classmethod
    def ces(cls, gamma: float, alphas) -> "UtilitySpec":
        return cls(CES, alphas, float(gamma))

    @classmethod
    def cobb_douglas(cls, alphas) -> "UtilitySpec":
        return cls(COBB_DOUGLAS, alphas, None)

    @property
    def n_goods(self) -> int:
        return len(self.alphas)

    def __call__(self, x) -> np.ndarray:
        """Direct utility of bundle(s) ``x`` (last axis indexes goods)."""
        x = np.asarray(x, dtype=float)
        if self.kind == CES:
            return np.sum(self.alphas * x ** self.gamma, axis=-1)
        with np.errstate(divide="ignore"):
            return np.sum(self.alphas * np.log(x), axis=-1)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "alphas": self.alphas.tolist()}
        if self.kind == CES:
            out["gamma"] = self.gamma
        return out


@dataclass(frozen=True, eq=False)
class TypeProfile:
    """One ex-ante type: population weight, preferences and endowments."""

    weight: float
    utility: UtilitySpec
    endowments: EndowmentProcess


@dataclass(frozen=True, eq=False)
class EconomyConfig:
    """The immutable problem statement.

    ``b_bar=None`` selects the default savings-cap constant of 50 times the
    mean endowment value at unit prices. When ``types`` is given, the
    population is the weighted mixture of those profiles and the top-level
    ``utility``/``endowments`` describe the first type.
    """

    beta: float
    endowments: EndowmentProcess
    utility: UtilitySpec
    b_bar: Optional[float] = None
    grid_points: int = DEFAULT_GRID_POINTS
    curvature: float = DEFAULT_CURVATURE
    types: Optional[tuple[TypeProfile, ...]] = None

    def __post_init__(self):
        if self.types is not None:
            object.__setattr__(self, "types", tuple(self.types))

    @property
    def n(self) -> int:
        return self.endowments.n_goods

    @property
    def savings_constant(self) -> float:
        """The savings-cap constant b_bar, resolving the default."""
        if self.b_bar is not None:
            return float(self.b_bar)
        return DEFAULT_B_BAR_MULTIPLE * float(np.sum(self.endowments.mean))

    @property
    def supply(self) -> np.ndarray:
        """Per-good aggregate supply, weighted across types when present."""
        if not self.types:
            return self.endowments.mean
        return sum(t.weight * t.endowments.mean for t in self.types)

    def profiles(self) -> tuple[TypeProfile, ...]:
        if self.types:
            return self.types
        return (TypeProfile(1.0, self.utility, self.endowments),)

    def for_type(self, k: int) -> "EconomyConfig":
        """Single-type economy seen by agents of type ``k``."""
        prof = self.profiles()[k]
        return replace(self, utility=prof.utility, endowments=prof.endowments,
                       types=None)

    def with_endowments(self, endowments: EndowmentProcess) -> "EconomyConfig":
        return replace(self, endowments=endowments)


@dataclass(frozen=True, eq=False)
class PriceSystem:
    """Goods prices ``p`` and the interest rate ``r``."""

    p: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "p", _frozen_array(self.p, 1))
        object.__setattr__(self, "r", float(self.r))

    @property
    def is_valid(self) -> bool:
        return bool(np.all(self.p > 0) and 0.0 < self.r < 1.0)

    @property
    def is_normalized(self) -> bool:
        return abs(float(np.sum(self.p)) + self.r - 1.0) <= 1e-12

    def scaled(self, theta: float) -> "PriceSystem":
        return PriceSystem(theta * self.p, self.r)

    def normalized(self) -> "PriceSystem":
        return normalize_prices(self)

    def numeraire(self) -> "PriceSystem":
        """Same equilibrium with the first good's price set to one."""
        return PriceSystem(self.p / self.p[0], self.r)

    def as_vector(self) -> np.ndarray:
        return np.append(self.p, self.r)

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "r": self.r}


@dataclass(frozen=True, eq=False)
class WealthGrid:
    """Strictly increasing wealth nodes pinned to the wealth bounds."""

    nodes: np.ndarray
    lower: float
    upper: float
    borrowing_capped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen_array(self.nodes, 1))

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def scale(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    fatal: bool = True

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def _check_utility(u: UtilitySpec, n: int, prefix: str) -> list[Violation]:
    out = []
    if u.n_goods != n:
        out.append(Violation(f"{prefix}alphas",
                             f"expected {n} weights, got {u.n_goods}"))
    if np.any(u.alphas <= 0):
        out.append(Violation(f"{prefix}alphas", "weights must be strictly positive"))
    if abs(float(np.sum(u.alphas)) - 1.0) > 1e-12:
        out.append(Violation(f"{prefix}alphas",
                             f"weights sum to {np.sum(u.alphas)!r}, not 1"))
    if u.kind == CES:
        if u.gamma is None or not (0.0 < u.gamma < 1.0):
            out.append(Violation(f"{prefix}gamma",
                                 f"gamma must lie in (0, 1), got {u.gamma!r}"))
    return out


def _check_endowments(e: EndowmentProcess, n: int, prefix: str) -> list[Violation]:
    out = []
    if e.n_goods != n:
        out.append(Violation(f"{prefix}support",
                             f"support vectors have {e.n_goods} goods, expected {n}"))
    if not np.all(e.support > 0):
        out.append(Violation(f"{prefix}support",
                             "every endowment vector must be strictly positive"))
    if np.any(e.probs <= 0):
        out.append(Violation(f"{prefix}probs", "probabilities must be strictly positive"))
    if abs(float(np.sum(e.probs)) - 1.0) > 1e-12:
        out.append(Violation(f"{prefix}probs",
                             f"probabilities sum to {np.sum(e.probs)!r}, not 1"))
    if e.n_states > 1 and e.dominating_index() is None:
        out.append(Violation(
            f"{prefix}support",
            "dominance condition fails: no support point exceeds every other "
            "point in all goods",
            fatal=False,
        ))
    return out


def validate_config(cfg: EconomyConfig) -> list[Violation]:
    """Return every violated invariant of ``cfg``; empty iff valid.

    The endowment dominance condition is reported with ``fatal=False``.
    """
    out: list[Violation] = []
    n = cfg.n
    if n < 2:
        out.append(Violation("n", f"need at least 2 goods, got {n}"))
    if not (0.5 < cfg.beta < 1.0):
        out.append(Violation("beta", f"beta must lie in (1/2, 1), got {cfg.beta!r}"))
    out += _check_endowments(cfg.endowments, n, "endowments.")
    out += _check_utility(cfg.utility, n, "utility.")
    if not (cfg.savings_constant > 0):
        out.append(Violation("b_bar", "savings-cap constant must be positive"))
    if cfg.grid_points < MIN_GRID_POINTS:
        out.append(Violation("grid.n_points",
                             f"need at least {MIN_GRID_POINTS} nodes, got {cfg.grid_points}"))
    if not (cfg.curvature > 0):
        out.append(Violation("grid.curvature", "curvature must be positive"))
    if cfg.types is not None:
        if len(cfg.types) == 0:
            out.append(Violation("types", "type list is empty"))
        weights = np.array([t.weight for t in cfg.types])
        if np.any(weights <= 0) or np.any(weights > 1):
            out.append(Violation("types", "type weights must lie in (0, 1]"))
        if abs(float(np.sum(weights)) - 1.0) > 1e-12:
            out.append(Violation("types", f"type weights sum to {np.sum(weights)!r}, not 1"))
        for k, t in enumerate(cfg.types):
            out += _check_endowments(t.endowments, n, f"types[{k}].endowments.")
            out += _check_utility(t.utility, n, f"types[{k}].utility.")
    return out


def ensure_valid(cfg: EconomyConfig) -> None:
    """Raise :class:`ConfigError` on fatal violations, warn on the rest."""
    violations = validate_config(cfg)
    fatal = [v for v in violations if v.fatal]
    for v in violations:
        if not v.fatal:
            warnings.warn(str(v), stacklevel=2)
    if fatal:
        raise ConfigError(fatal)


def borrowing_limit(cfg: EconomyConfig, prices: PriceSystem) -> float:
    """Natural borrowing limit ``-min_y p.y / r``."""
    return -float(np.min(cfg.endowments.values(prices.p))) / prices.r


def effective_borrowing_limit(cfg: EconomyConfig, prices: PriceSystem) -> tuple[float, bool]:
    """Borrowing limit after the diagnostic cap on its magnitude.

    Returns the limit and whether the cap is active. The cap scales with
    prices, so it preserves homogeneity.
    """
    natural = borrowing_limit(cfg, prices)
    mean_value = float(cfg.endowments.probs @ cfg.endowments.values(prices.p))
    floor = -BORROWING_CAP_MULTIPLE * mean_value
    if natural < floor:
        return floor, True
    return natural, False


def savings_cap(cfg: EconomyConfig, prices: PriceSystem) -> float:
    """Upper bound on savings ``sum(p) * b_bar / (1 - r)**2``."""
    return float(np.sum(prices.p)) * cfg.savings_constant / (1.0 - prices.r) ** 2


def wealth_bounds(cfg: EconomyConfig, prices: PriceSystem) -> tuple[float, float]:
    """Lowest and highest attainable wealth at ``prices``."""
    lower, _ = effective_borrowing_limit(cfg, prices)
    upper = (1.0 + prices.r) * savings_cap(cfg, prices) + float(
        np.max(cfg.endowments.values(prices.p)))
    return lower, upper


def power_grid(lower: float, upper: float, n_points: int, curvature: float) -> np.ndarray:
    """Nodes ``lower + (upper - lower) * (j / (N - 1))**curvature``, endpoints exact."""
    if n_points < 2:
        raise ValueError("need at least two nodes")
    t = np.arange(n_points) / (n_points - 1)
    nodes = lower + (upper - lower) * t ** curvature
    nodes[0] = lower
    nodes[-1] = upper
    return nodes


def build_grid(cfg: EconomyConfig, prices: PriceSystem,
               n_points: Optional[int] = None,
               curvature: Optional[float] = None) -> WealthGrid:
    """Wealth grid on ``[a_lo, a_hi]`` with nodes concentrated near ``a_lo``."""
    n_points = cfg.grid_points if n_points is None else int(n_points)
    curvature = cfg.curvature if curvature is None else float(curvature)
    if n_points < MIN_GRID_POINTS:
        raise ValueError(f"grid needs at least {MIN_GRID_POINTS} nodes, got {n_points}")
    if not curvature > 0:
        raise ValueError("curvature must be positive")
    lower, upper = wealth_bounds(cfg, prices)
    _, capped = effective_borrowing_limit(cfg, prices)
    return WealthGrid(power_grid(lower, upper, n_points, curvature), lower, upper, capped)


def normalize_prices(prices: PriceSystem) -> PriceSystem:
    """Rescale goods prices so that ``sum(p) + r == 1``; ``r`` is untouched."""
    if abs(float(np.sum(prices.p)) + prices.r - 1.0) <= 1e-15:
        return prices
    theta = (1.0 - prices.r) / float(np.sum(prices.p))
    return PriceSystem(theta * prices.p, prices.r)


def mean_endowment_value(endowments: EndowmentProcess, p) -> float:
    return float(endowments.probs @ endowments.values(p))


def is_close_normalized(prices: PriceSystem, tol: float = 1e-12) -> bool:
    return math.isclose(float(np.sum(prices.p)) + prices.r, 1.0, abs_tol=tol)
