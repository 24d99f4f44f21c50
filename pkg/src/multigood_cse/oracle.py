"""Brute-force reference solvers for small two-good economies.

Each routine here is written independently of the main solvers and trades
speed for transparency:

* demand by golden-section search along the budget line in multiprecision;
* dynamic programming with the savings choice restricted to an explicit grid
  and linear interpolation of the continuation value;
* the invariant distribution from an explicit transition matrix;
* equilibrium by evaluating excess demand on a full (price ratio, r) lattice.

They are only trustworthy where they are exhaustive: two goods and at most
``max_nodes`` wealth nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import mpmath
import numpy as np
from numba import njit

from .bellman import PolicySolution
from .distribution import WealthDistribution
from .economy import CES, EconomyConfig, PriceSystem, UtilitySpec, WealthGrid


@dataclass(frozen=True)
class OracleConfig:
    b_grid_points: int = 2000
    price_lattice: int = 200
    max_nodes: int = 200
    lattice_b_points: int = 2000
    ratio_range: tuple[float, float] = (0.5, 2.0)
    r_range: Optional[tuple[float, float]] = None
    vfi_tol: float = 1e-10
    eval_sweeps: int = 30
    dps: int = 40


def tiny_economy(grid_points: int = 60) -> EconomyConfig:
    """Two goods, two endowment states, a savings cap that does not bind."""
    from .economy import EndowmentProcess
    return EconomyConfig(
        beta=0.9,
        endowments=EndowmentProcess([[0.5, 0.5], [3.0, 3.0]], [0.5, 0.5]),
        utility=UtilitySpec.ces(0.5, [0.4, 0.6]),
        b_bar=20.0,
        grid_points=grid_points,
    )


# ---------------------------------------------------------------------------
# static demand
# ---------------------------------------------------------------------------

def oracle_demand(utility: UtilitySpec, c: float, p, dps: int = 40) -> np.ndarray:
    """Utility-maximizing bundle on ``p.x = c`` by multiprecision golden section.

    Two goods only. The search variable is the first good's quantity.
    """
    p = np.asarray(p, dtype=float)
    if len(p) != 2:
        raise ValueError("oracle demand handles two goods")
    with mpmath.workdps(dps):
        c_ = mpmath.mpf(c)
        p1, p2 = mpmath.mpf(p[0]), mpmath.mpf(p[1])
        a1, a2 = mpmath.mpf(utility.alphas[0]), mpmath.mpf(utility.alphas[1])
        if utility.kind == CES:
            g = mpmath.mpf(utility.gamma)

            def U(x1):
                return a1 * x1 ** g + a2 * ((c_ - p1 * x1) / p2) ** g
        else:
            def U(x1):
                return a1 * mpmath.log(x1) + a2 * mpmath.log((c_ - p1 * x1) / p2)

        lo, hi = mpmath.mpf(0), c_ / p1
        invphi = (mpmath.sqrt(5) - 1) / 2
        x = hi - invphi * (hi - lo)
        y = lo + invphi * (hi - lo)
        fx, fy = U(x), U(y)
        stop = mpmath.mpf(10) ** (-(dps - 5)) * hi
        while hi - lo > stop:
            if fx < fy:
                lo, x, fx = x, y, fy
                y = lo + invphi * (hi - lo)
                fy = U(y)
            else:
                hi, y, fy = y, x, fx
                x = hi - invphi * (hi - lo)
                fx = U(x)
        x1 = (lo + hi) / 2
        return np.array([float(x1), float((c_ - p1 * x1) / p2)])


def _unit_utility(utility: UtilitySpec, x_unit: np.ndarray):
    """``u(c) = U(c x_unit)`` with ``x_unit`` the oracle bundle at ``c = 1``."""
    if utility.kind == CES:
        k = float(np.sum(utility.alphas * x_unit ** utility.gamma))
        g = utility.gamma
        return lambda c: k * np.maximum(c, 0.0) ** g
    k = float(np.sum(utility.alphas * np.log(x_unit)))
    return lambda c: np.log(c) + k


# ---------------------------------------------------------------------------
# dynamic programming
# ---------------------------------------------------------------------------

def oracle_bounds(cfg: EconomyConfig, prices: PriceSystem) -> tuple[float, float, float]:
    """(lowest wealth, savings cap, highest wealth) from first principles."""
    incomes = [float(np.dot(prices.p, y)) for y in cfg.endowments.support]
    b_lo = -min(incomes) / prices.r
    cap = sum(float(pi) * cfg.savings_constant for pi in prices.p) / (1.0 - prices.r) ** 2
    return b_lo, cap, (1.0 + prices.r) * cap + max(incomes)


def oracle_grid(cfg: EconomyConfig, prices: PriceSystem, n_points: int) -> WealthGrid:
    lo, _, hi = oracle_bounds(cfg, prices)
    t = np.linspace(0.0, 1.0, n_points)
    nodes = lo + (hi - lo) * t ** cfg.curvature
    nodes[0], nodes[-1] = lo, hi
    return WealthGrid(nodes, lo, hi)


@njit(cache=True)
def _discrete_vfi(umat, idx, w, probs, beta, tol, V, max_iter, eval_sweeps):
    """Modified policy iteration: exhaustive argmax, then evaluation sweeps.

    Stops when the sup-norm change of a maximization step is below ``tol``.
    """
    N, B = umat.shape
    S = probs.shape[0]
    EV = np.empty(B)
    Vn = np.empty(N)
    choice = np.zeros(N, dtype=np.int64)
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        for b in range(B):
            acc = 0.0
            for s in range(S):
                k = idx[b, s]
                acc += probs[s] * ((1.0 - w[b, s]) * V[k] + w[b, s] * V[k + 1])
            EV[b] = acc
        for j in range(N):
            best = -np.inf
            arg = 0
            for b in range(B):
                val = umat[j, b]
                if val == -np.inf:
                    break
                val += beta * EV[b]
                if val > best:
                    best = val
                    arg = b
            Vn[j] = best
            choice[j] = arg
        gap = 0.0
        for j in range(N):
            d = abs(Vn[j] - V[j])
            if d > gap:
                gap = d
            V[j] = Vn[j]
        if gap < tol:
            break
        # evaluate the current choice without re-maximizing
        for _ in range(eval_sweeps):
            for j in range(N):
                b = choice[j]
                acc = 0.0
                for s in range(S):
                    k = idx[b, s]
                    acc += probs[s] * ((1.0 - w[b, s]) * V[k] + w[b, s] * V[k + 1])
                Vn[j] = umat[j, b] + beta * acc
            for j in range(N):
                V[j] = Vn[j]
    return V, choice, it, gap


def oracle_dp(cfg: EconomyConfig, prices: PriceSystem, grid: Optional[WealthGrid] = None,
              oc: OracleConfig = OracleConfig(), b_points: Optional[int] = None,
              initial: Optional[np.ndarray] = None,
              x_unit: Optional[np.ndarray] = None) -> PolicySolution:
    """Value iteration with savings restricted to ``linspace(b_lo, cap, B)``.

    ``x_unit`` is the optimal bundle at unit expenditure; it is recomputed
    with :func:`oracle_demand` when omitted.
    """
    if cfg.n != 2:
        raise ValueError("oracle handles two goods")
    grid = grid or oracle_grid(cfg, prices, cfg.grid_points)
    if len(grid.nodes) > oc.max_nodes:
        raise ValueError(f"oracle grid limited to {oc.max_nodes} nodes")
    B = b_points or oc.b_grid_points
    b_lo, cap, _ = oracle_bounds(cfg, prices)
    nodes = np.asarray(grid.nodes)
    bgrid = np.linspace(b_lo, cap, B)
    if x_unit is None:
        x_unit = oracle_demand(cfg.utility, 1.0, prices.p, oc.dps)
    u = _unit_utility(cfg.utility, x_unit)
    floor = 1e-12 * (nodes[-1] - nodes[0])
    cons = nodes[:, None] - bgrid[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        umat = np.where(cons >= 0, u(np.maximum(cons, floor)), -np.inf)
    # the lowest node can only choose the lowest savings level
    umat[0, 0] = u(np.maximum(nodes[0] - bgrid[0], floor))
    dest = (1.0 + prices.r) * bgrid[:, None] + np.array(
        [float(np.dot(prices.p, y)) for y in cfg.endowments.support])[None, :]
    dest = np.clip(dest, nodes[0], nodes[-1])
    idx = np.clip(np.searchsorted(nodes, dest, side="right") - 1, 0, len(nodes) - 2)
    w = (dest - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    V0 = np.zeros(len(nodes)) if initial is None else np.array(initial, dtype=float)
    V, choice, it, gap = _discrete_vfi(np.ascontiguousarray(umat), idx.astype(np.int64),
                                       np.ascontiguousarray(w), np.asarray(cfg.endowments.probs),
                                       float(cfg.beta), oc.vfi_tol, V0, 100_000,
                                       oc.eval_sweeps)
    savings = bgrid[choice]
    return PolicySolution(
        cfg=cfg, prices=prices, grid=grid, values=V.copy(), savings=savings,
        euler_residuals=np.full(len(nodes), np.nan), iterations=it, sup_norm_gap=gap,
        gaps=np.array([gap]), b_lower=b_lo, cap=cap)


# ---------------------------------------------------------------------------
# invariant distribution
# ---------------------------------------------------------------------------

def transition_matrix(cfg: EconomyConfig, prices: PriceSystem,
                      policy: PolicySolution) -> np.ndarray:
    """Row-stochastic matrix of the lottery push-forward."""
    nodes = policy.grid.nodes
    N = len(nodes)
    P = np.zeros((N, N))
    for j in range(N):
        for y, e in zip(cfg.endowments.support, cfg.endowments.probs):
            a_next = (1.0 + prices.r) * policy.savings[j] + float(np.dot(prices.p, y))
            a_next = min(max(a_next, nodes[0]), nodes[-1])
            k = int(np.searchsorted(nodes, a_next, side="right")) - 1
            k = min(max(k, 0), N - 2)
            lam = (a_next - nodes[k]) / (nodes[k + 1] - nodes[k])
            P[j, k] += e * (1.0 - lam)
            P[j, k + 1] += e * lam
    return P


def oracle_invariant(cfg: EconomyConfig, prices: PriceSystem, policy: PolicySolution,
                     oc: OracleConfig = OracleConfig()) -> WealthDistribution:
    """Stationary vector from ``[P^T - I; 1^T] mu = [0; 1]`` by least squares."""
    N = len(policy.grid.nodes)
    if N > oc.max_nodes:
        raise ValueError(f"oracle grid limited to {oc.max_nodes} nodes")
    P = transition_matrix(cfg, prices, policy)
    A = np.vstack([P.T - np.eye(N), np.ones((1, N))])
    rhs = np.zeros(N + 1)
    rhs[-1] = 1.0
    mu, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    mu = np.clip(mu, 0.0, None)
    return WealthDistribution(policy.grid, mu / mu.sum())


def oracle_excess_demand(cfg: EconomyConfig, prices: PriceSystem, policy: PolicySolution,
                         mu: WealthDistribution, oc: OracleConfig = OracleConfig(),
                         x_unit: Optional[np.ndarray] = None) -> np.ndarray:
    """``zeta`` from the oracle policy and distribution (demand via the oracle bundle)."""
    if x_unit is None:
        x_unit = oracle_demand(cfg.utility, 1.0, prices.p, oc.dps)
    spend = float(mu.mass @ (policy.grid.nodes - policy.savings))
    goods = spend * x_unit - cfg.endowments.mean
    return np.append(goods, -float(mu.mass @ policy.savings))


# ---------------------------------------------------------------------------
# equilibrium lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LatticeResult:
    ratios: np.ndarray
    rates: np.ndarray
    residual: np.ndarray
    euclidean: np.ndarray
    best_ratio: float
    best_r: float
    best_residual: float

    @property
    def ratio_cell(self) -> float:
        return float(self.ratios[1] - self.ratios[0])

    @property
    def r_cell(self) -> float:
        return float(self.rates[1] - self.rates[0])

    def prices(self, ratio: float, r: float) -> PriceSystem:
        p = np.array([1.0, ratio])
        return PriceSystem(p * (1.0 - r) / p.sum(), r)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["ratio", "r", "residual", "residual_l2"])
            for i, q in enumerate(self.ratios):
                for j, r in enumerate(self.rates):
                    wr.writerow([repr(float(q)), repr(float(r)), repr(float(self.residual[i, j])),
                                 repr(float(self.euclidean[i, j]))])


def oracle_equilibrium(cfg: EconomyConfig, oc: OracleConfig = OracleConfig(),
                       ratios: Optional[np.ndarray] = None,
                       rates: Optional[np.ndarray] = None,
                       tie_rtol: float = 1e-9) -> LatticeResult:
    """Evaluate ``|zeta|_inf`` on every lattice point and return the minimizer.

    Prices on the lattice are ``p = (1, q)`` rescaled so that
    ``p_1 + p_2 + r = 1``; ``q`` is the price ratio ``p_2 / p_1``. Cells whose
    sup norm equals the minimum up to ``tie_rtol`` count as tied, and the one
    with the smallest Euclidean norm is returned.
    """
    if cfg.n != 2:
        raise ValueError("oracle handles two goods")
    M = oc.price_lattice
    if ratios is None:
        ratios = np.linspace(oc.ratio_range[0], oc.ratio_range[1], M)
    if rates is None:
        r_lo, r_hi = oc.r_range or (1e-3, 1.0 / cfg.beta - 1.0 - 1e-3)
        rates = np.linspace(r_lo, r_hi, M)
    field_ = np.empty((len(ratios), len(rates)))
    l2 = np.empty_like(field_)
    for i, q in enumerate(ratios):
        p = np.array([1.0, q])
        # demand is homogeneous of degree -1 in prices: one search per ratio
        x_ref = oracle_demand(cfg.utility, 1.0, p, oc.dps)
        V = None
        for j, r in enumerate(rates):
            scale = (1.0 - r) / p.sum()
            prices = PriceSystem(p * scale, r)
            x_unit = x_ref / scale
            pol = oracle_dp(cfg, prices, oc=oc, b_points=oc.lattice_b_points, initial=V,
                            x_unit=x_unit)
            V = pol.values
            mu = oracle_invariant(cfg, prices, pol, oc)
            z = oracle_excess_demand(cfg, prices, pol, mu, oc, x_unit=x_unit)
            field_[i, j] = np.max(np.abs(z))
            l2[i, j] = np.sqrt(np.sum(z * z))
    tied = field_ <= field_.min() * (1.0 + tie_rtol)
    i, j = np.unravel_index(np.argmin(np.where(tied, l2, np.inf)), field_.shape)
    return LatticeResult(np.asarray(ratios), np.asarray(rates), field_, l2,
                         float(ratios[i]), float(rates[j]), float(field_[i, j]))
