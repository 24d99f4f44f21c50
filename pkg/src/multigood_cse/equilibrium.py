"""Stationary equilibrium: prices that clear every goods market and the bond market.

Nested scheme: an outer bracketed root-find on ``r`` using the sign of the
savings excess demand, and an inner damped tatonnement on goods prices at
fixed ``r``. With common prices and demand linear in expenditure, aggregate
demand is ``C * z(p)``. The inner fixed point (equal proportional excess
demand across goods) therefore does not depend on aggregate expenditure
``C``. The tatonnement is run on that frozen-``C`` predictor and confirmed
with a full evaluation.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import IO, Optional

import numpy as np
from scipy.optimize import brentq

from .bellman import (
    ConvergenceError,
    PolicySolution,
    solve_value_function,
)
from .demand import expenditure_shares
from .distribution import (
    CapWarning,
    WealthDistribution,
    stationarity_residual,
)
from .economy import (
    EconomyConfig,
    PriceSystem,
    WealthGrid,
    ensure_valid,
    savings_cap,
)
from .excess_demand import ExcessDemand, SolutionCache, compute_excess_demand

CAP_ERROR_MASS = 1e-4
CAP_WARN_MASS = 1e-6


class EquilibriumError(RuntimeError):
    """The equilibrium search failed; ``details`` carries diagnostics."""

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message)
        self.details = details or {}


class BracketError(EquilibriumError):
    pass


class _Converged(Exception):
    pass


@dataclass(frozen=True)
class EquilibriumOptions:
    """Solver settings.

    ``tol=None`` selects ``1e-6 * max(1, max_i s_i)`` with ``s_i`` the
    per-good supply. ``r_bracket=None`` selects ``[1e-3, 1/beta - 1 - 1e-3]``;
    with ``expand_bracket`` the ends are moved towards ``0`` and
    ``1/beta - 1`` (halving the remaining distance) until the savings excess
    demand changes sign.
    """

    tol: Optional[float] = None
    r_bracket: Optional[tuple[float, float]] = None
    expand_bracket: bool = True
    max_expand: int = 16
    eta: float = 0.5
    max_inner: int = 500
    max_outer: int = 100
    p0: Optional[tuple[float, ...]] = None
    vfi_tol: float = 1e-9
    dist_tol: float = 1e-12
    howard: bool = True
    warm_start: bool = True


def default_tol(cfg: EconomyConfig) -> float:
    return 1e-6 * max(1.0, float(np.max(cfg.supply)))


def default_bracket(cfg: EconomyConfig) -> tuple[float, float]:
    return 1e-3, (1.0 / cfg.beta - 1.0) - 1e-3


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    cfg: EconomyConfig
    prices_normalized: PriceSystem
    excess: ExcessDemand
    residual: float
    tol: float
    trace: list = field(repr=False)
    cap_mass: float = 0.0

    @property
    def prices_numeraire(self) -> PriceSystem:
        return self.prices_normalized.numeraire()

    @property
    def policy(self) -> PolicySolution:
        return self.excess.policy

    @property
    def distribution(self) -> WealthDistribution:
        return self.excess.distribution

    @property
    def policies(self) -> tuple[PolicySolution, ...]:
        return tuple(o.policy for o in self.excess.outcomes)

    @property
    def distributions(self) -> tuple[WealthDistribution, ...]:
        return tuple(o.distribution for o in self.excess.outcomes)

    def to_dict(self) -> dict:
        z = self.excess
        return {
            "prices_normalized": self.prices_normalized.to_dict(),
            "prices_numeraire": self.prices_numeraire.to_dict(),
            "zeta": z.vector.tolist(),
            "residual": self.residual,
            "tol": self.tol,
            "walras": z.walras,
            "aggregate_savings": z.aggregate_savings,
            "cap_mass": self.cap_mass,
            "types": [
                {
                    "weight": o.weight,
                    "vfi_iterations": o.policy.iterations,
                    "vfi_gap": o.policy.sup_norm_gap,
                    "dist_iterations": o.distribution.iterations,
                    "dist_residual": o.distribution.residual,
                    "borrowing_capped": o.policy.grid.borrowing_capped,
                    "mean_wealth": o.distribution.mean,
                    "gini": o.distribution.gini,
                }
                for o in z.outcomes
            ],
            "trace": self.trace,
        }

    def save(self, out_dir, stem: str = "equilibrium") -> list[Path]:
        """Write JSON plus per-type policy and distribution CSV sidecars."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.json"]
        paths[0].write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        for k, o in enumerate(self.excess.outcomes):
            suffix = "" if len(self.excess.outcomes) == 1 else f"_type{k}"
            pol = out / f"policy{suffix}.csv"
            dist = out / f"distribution{suffix}.csv"
            o.policy.to_csv(pol)
            o.distribution.to_csv(dist)
            paths += [pol, dist]
        return paths


class _Evaluator:
    """Excess-demand evaluations with warm starts and a trace."""

    def __init__(self, cfg: EconomyConfig, opts: EquilibriumOptions, log: Optional[IO[str]]):
        self.cfg = cfg
        self.opts = opts
        self.log = log
        self.cache = SolutionCache() if opts.warm_start else None
        self.trace: list[dict] = []
        self.count = 0

    def __call__(self, p: np.ndarray, r: float, stage: str) -> ExcessDemand:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CapWarning)
            z = compute_excess_demand(self.cfg, PriceSystem(p, r), cache=self.cache,
                                      vfi_tol=self.opts.vfi_tol, dist_tol=self.opts.dist_tol,
                                      howard=self.opts.howard, log=self.log)
        self.count += 1
        self.trace.append({"stage": stage, "p": z.prices.p.tolist(), "r": r,
                           "zeta": z.vector.tolist()})
        return z


def _normalize(p: np.ndarray, r: float) -> np.ndarray:
    return p * ((1.0 - r) / p.sum())


def _proportional_gap(zeta: np.ndarray, p: np.ndarray, s: np.ndarray) -> tuple[float, np.ndarray]:
    """Deviation of each goods excess demand from a common multiple of supply."""
    kappa = float(p @ zeta) / float(p @ s)
    d = zeta - kappa * s
    return float(np.max(np.abs(d))), d


def _predictor(cfg: EconomyConfig, z: ExcessDemand):
    """Goods demand at other prices holding each type's expenditure fixed."""
    terms = [(o.weight * o.aggregates.consumption, prof.utility)
             for o, prof in zip(z.outcomes, cfg.profiles())]

    def demand(p: np.ndarray) -> np.ndarray:
        out = np.zeros(cfg.n)
        for spend, utility in terms:
            out = out + spend * expenditure_shares(utility, p)
        return out

    return demand


def _tatonnement(demand, p, r, s, eta, max_iter, tol, trace):
    """Damped tatonnement ``p_i <- p_i (1 + eta zeta_i / s_i)`` on a demand predictor."""
    prev_sign = np.zeros_like(s)
    flips = np.zeros(len(s), dtype=int)
    for it in range(max_iter):
        zeta = demand(p) - s
        gap, d = _proportional_gap(zeta, p, s)
        if gap < tol:
            return p, it
        # halve the step when a component oscillates two steps running
        sign = np.sign(d)
        flips = np.where(sign * prev_sign < 0, flips + 1, 0)
        if np.any(flips >= 2):
            eta *= 0.5
            flips[:] = 0
        prev_sign = sign
        step = np.clip(1.0 + eta * zeta / s, 0.5, 2.0)
        p = _normalize(p * step, r)
    trace.append({"stage": "inner_failure", "p": p.tolist(), "r": r})
    raise EquilibriumError("inner tatonnement did not converge",
                           {"p": p.tolist(), "r": r, "eta": eta})


def _goods_prices_at(evaluate: _Evaluator, cfg: EconomyConfig, r: float, p_start: np.ndarray,
                     opts: EquilibriumOptions, tol: float) -> tuple[np.ndarray, ExcessDemand]:
    """Goods prices with equal proportional excess demands at fixed ``r``."""
    s = cfg.supply
    p = _normalize(np.asarray(p_start, dtype=float), r)
    inner_tol = tol / 10.0
    for _ in range(opts.max_inner):
        z = evaluate(p, r, "inner")
        gap, _ = _proportional_gap(z.goods, p, s)
        if gap < inner_tol:
            return p, z
        p, _ = _tatonnement(_predictor(cfg, z), p, r, s, opts.eta, opts.max_inner,
                            inner_tol / 100.0, evaluate.trace)
    raise EquilibriumError("inner price loop did not converge",
                           {"p": p.tolist(), "r": r, "gap": gap})


def solve_equilibrium(cfg: EconomyConfig, options: Optional[EquilibriumOptions] = None,
                      log: Optional[IO[str]] = None) -> EquilibriumResult:
    """Find normalized prices ``(p, r)`` with ``|zeta(p, r)|_inf < tol``.

    Raises
    ------
    BracketError
        ``zeta_{n+1}`` has the same sign at both ends of the (expanded) bracket.
    EquilibriumError
        The inner loop or the outer root-find failed, or the savings cap
        binds at the solution.
    """
    ensure_valid(cfg)
    opts = options or EquilibriumOptions()
    tol = opts.tol if opts.tol is not None else default_tol(cfg)
    evaluate = _Evaluator(cfg, opts, log)
    r_lo, r_hi = opts.r_bracket if opts.r_bracket is not None else default_bracket(cfg)
    r_max = 1.0 / cfg.beta - 1.0
    if not (0.0 < r_lo < r_hi < 1.0):
        raise ValueError(f"invalid interest-rate bracket ({r_lo}, {r_hi})")

    p_state = {"p": np.asarray(opts.p0 if opts.p0 is not None else np.ones(cfg.n), dtype=float)}
    best: dict = {}

    def at_rate(r: float, stage: str) -> ExcessDemand:
        p, z = _goods_prices_at(evaluate, cfg, r, p_state["p"], opts, tol)
        p_state["p"] = p
        evaluate.trace.append({"stage": stage, "r": r, "p": p.tolist(), "zeta": z.vector.tolist()})
        if not best or z.sup_norm < best["z"].sup_norm:
            best["z"] = z
        return z

    z_lo = at_rate(r_lo, "bracket")
    z_hi = at_rate(r_hi, "bracket")
    # aggregate savings rise with r: zeta_{n+1} > 0 at r_lo and < 0 at r_hi
    expansions = 0
    while opts.expand_bracket and expansions < opts.max_expand:
        if z_hi.savings >= 0 and z_lo.savings > 0 and r_hi < r_max:
            r_lo, z_lo = r_hi, z_hi
            r_hi = r_hi + 0.5 * (r_max - r_hi)
            z_hi = at_rate(r_hi, "bracket_expand_hi")
        elif z_lo.savings <= 0 and z_hi.savings < 0:
            r_hi, z_hi = r_lo, z_lo
            r_lo = 0.5 * r_lo
            z_lo = at_rate(r_lo, "bracket_expand_lo")
        else:
            break
        expansions += 1
    if z_lo.sup_norm < tol:
        return _finish(cfg, z_lo, tol, evaluate.trace)
    if z_hi.sup_norm < tol:
        return _finish(cfg, z_hi, tol, evaluate.trace)
    if not (z_lo.savings > 0 > z_hi.savings):
        raise BracketError(
            "savings excess demand does not change sign over the interest-rate bracket",
            {"r_lo": r_lo, "r_hi": r_hi, "zeta_lo": z_lo.vector.tolist(),
             "zeta_hi": z_hi.vector.tolist()})

    def f(r: float) -> float:
        z = at_rate(r, "outer")
        if z.sup_norm < tol:
            raise _Converged
        return z.savings

    try:
        brentq(f, r_lo, r_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
               maxiter=opts.max_outer)
    except _Converged:
        return _finish(cfg, best["z"], tol, evaluate.trace)
    except RuntimeError as exc:
        raise EquilibriumError(f"outer root-find failed: {exc}",
                               {"best": best["z"].vector.tolist()}) from exc
    z = best["z"]
    if z.sup_norm < tol:
        return _finish(cfg, z, tol, evaluate.trace)
    raise EquilibriumError(
        f"root-find converged in r but |zeta|_inf = {z.sup_norm:.3e} exceeds tol {tol:.1e}",
        {"r": z.prices.r, "p": z.prices.p.tolist(), "zeta": z.vector.tolist()})


def _finish(cfg, z: ExcessDemand, tol: float, trace: list) -> EquilibriumResult:
    at_cap = max(o.distribution.mass_at_top() for o in z.outcomes)
    near_cap = max(o.distribution.mass_near_top() for o in z.outcomes)
    if at_cap > CAP_ERROR_MASS:
        raise EquilibriumError(f"savings cap binds: mass {at_cap:.3e} at the upper bound",
                               {"r": z.prices.r, "p": z.prices.p.tolist()})
    if near_cap > CAP_WARN_MASS:
        warnings.warn(f"mass {near_cap:.3e} within one cell of the upper wealth bound",
                      CapWarning, stacklevel=3)
    return EquilibriumResult(cfg, z.prices, z, z.sup_norm, tol, trace, near_cap)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionCheck:
    name: str
    residual: float
    tol: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.residual < self.tol)


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[ConditionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [dict(asdict(c), passed=c.passed) for c in self.checks]}


def verify_cse(result: EquilibriumResult, cfg: Optional[EconomyConfig] = None,
               tol: Optional[float] = None, policy_tol: float = 1e-6,
               stationarity_tol: float = 1e-8) -> VerificationReport:
    """Re-derive the four equilibrium conditions from scratch.

    (i) optimality: the stored policy matches a fresh cold-start solve at the
    stored prices within ``policy_tol`` (relative to the grid span), and the
    stored values are a Bellman fixed point to the same tolerance;
    (ii) stationarity: ``|M mu - mu|_1`` with ``M`` built from the fresh
    policy; (iii) goods clearing and (iv) savings clearing from a fresh
    excess-demand evaluation.
    """
    cfg = cfg or result.cfg
    tol = tol if tol is not None else result.tol
    prices = result.prices_normalized
    notes = {"optimality": [], "stationarity": []}
    opt_res = 0.0
    stat_res = 0.0
    for k, o in enumerate(result.excess.outcomes):
        sub = cfg.for_type(k) if cfg.types else cfg
        stored = o.policy
        try:
            fresh = solve_value_function(sub, prices, stored.grid, tol=1e-10)
        except (ConvergenceError, ValueError, RuntimeError) as exc:
            notes["optimality"].append(f"type {k}: {exc}")
            notes["stationarity"].append(f"type {k}: no fresh policy")
            opt_res = stat_res = np.inf
            continue
        dev = float(np.max(np.abs(fresh.savings - stored.savings))) / stored.grid.scale
        vscale = max(1.0, float(np.max(np.abs(fresh.values))))
        vdev = float(np.max(np.abs(fresh.values - stored.values))) / vscale
        opt_res = max(opt_res, dev, vdev)
        try:
            stat_res = max(stat_res, stationarity_residual(sub, prices, fresh, o.distribution))
        except (ValueError, RuntimeError) as exc:
            notes["stationarity"].append(f"type {k}: {exc}")
            stat_res = np.inf
    goods_res, sav_res, clearing_note = np.inf, np.inf, ""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CapWarning)
            z = compute_excess_demand(cfg, prices)
        goods_res, sav_res = float(np.max(np.abs(z.goods))), abs(z.savings)
    except (ConvergenceError, ValueError, RuntimeError) as exc:
        clearing_note = str(exc)
    return VerificationReport((
        ConditionCheck("optimality", opt_res, policy_tol, "; ".join(notes["optimality"])),
        ConditionCheck("stationarity", stat_res, stationarity_tol,
                       "; ".join(notes["stationarity"])),
        ConditionCheck("goods_clearing", goods_res, tol, clearing_note),
        ConditionCheck("savings_clearing", sav_res, tol, clearing_note),
    ))


def with_prices(result: EquilibriumResult, prices: PriceSystem) -> EquilibriumResult:
    """Copy of ``result`` claiming different prices (for perturbation checks)."""
    return replace(result, prices_normalized=prices)


def with_distribution(result: EquilibriumResult, k: int,
                      dist: WealthDistribution) -> EquilibriumResult:
    outcomes = list(result.excess.outcomes)
    outcomes[k] = replace(outcomes[k], distribution=dist)
    return replace(result, excess=replace(result.excess, outcomes=tuple(outcomes)))


# ---------------------------------------------------------------------------
# uniqueness probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class UniquenessReport:
    clusters: list
    results: list
    failures: list
    resolution: float

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def to_dict(self) -> dict:
        return {"n_clusters": self.n_clusters, "resolution": self.resolution,
                "clusters": self.clusters,
                "starts": [r for r in self.results],
                "failures": self.failures}


def _probe_one(cfg, opts, start):
    p0, bracket = start
    o = replace(opts, p0=tuple(p0), r_bracket=bracket)
    res = solve_equilibrium(cfg, o)
    return res.prices_numeraire.as_vector()


def uniqueness_probe(cfg: EconomyConfig, n_starts: int = 10, seed: int = 0,
                     options: Optional[EquilibriumOptions] = None,
                     resolution: float = 1e-5, threads: int = 1) -> UniquenessReport:
    """Solve from randomized starting prices and brackets; cluster the results.

    Starting goods prices are uniform on ``[0.2, 1]`` per good; bracket ends
    are drawn within 30% of the default bracket's width from each end. A
    failed start is recorded and does not abort the probe.
    """
    opts = options or EquilibriumOptions()
    rng = np.random.default_rng(seed)
    lo, hi = opts.r_bracket if opts.r_bracket is not None else default_bracket(cfg)
    width = hi - lo
    starts = []
    for _ in range(n_starts):
        p0 = rng.uniform(0.2, 1.0, cfg.n)
        b = (lo + 0.3 * width * rng.random(), hi - 0.3 * width * rng.random())
        starts.append((p0, b))

    def run(start):
        try:
            return _probe_one(cfg, opts, start), None
        except (EquilibriumError, ConvergenceError, ValueError) as exc:
            return None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outcomes = list(ex.map(run, starts))
    else:
        outcomes = [run(s) for s in starts]

    clusters: list[list[float]] = []
    results, failures = [], []
    for (p0, b), (vec, err) in zip(starts, outcomes):
        entry = {"p0": p0.tolist(), "bracket": list(b)}
        if vec is None:
            failures.append(dict(entry, error=err))
            continue
        results.append(dict(entry, solution=vec.tolist()))
        for c in clusters:
            if np.max(np.abs(np.asarray(c) - vec)) < resolution:
                break
        else:
            clusters.append(vec.tolist())
    return UniquenessReport(clusters, results, failures, resolution)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def load_policy_csv(path, cfg: EconomyConfig, prices: PriceSystem) -> PolicySolution:
    data = np.genfromtxt(path, delimiter=",", names=True)
    nodes = np.asarray(data["a"], dtype=float)
    grid = WealthGrid(nodes, float(nodes[0]), float(nodes[-1]))
    return PolicySolution(
        cfg=cfg, prices=prices, grid=grid, values=np.asarray(data["V"], dtype=float),
        savings=np.asarray(data["g"], dtype=float),
        euler_residuals=np.asarray(data["euler_residual"], dtype=float),
        iterations=0, sup_norm_gap=float("nan"), gaps=np.empty(0),
        b_lower=float(nodes[0]), cap=savings_cap(cfg, prices))


def load_distribution_csv(path, grid: WealthGrid) -> WealthDistribution:
    data = np.genfromtxt(path, delimiter=",", names=True)
    if not np.array_equal(np.asarray(data["a"], dtype=float), grid.nodes):
        raise ValueError("distribution nodes do not match the policy grid")
    return WealthDistribution(grid, np.asarray(data["mass"], dtype=float))


def load_result(path, cfg: EconomyConfig) -> EquilibriumResult:
    """Rebuild a saved result from ``equilibrium.json`` and its CSV sidecars.

    ``path`` is the JSON file or the directory holding it. Aggregates are
    recomputed from the stored policies and distributions.
    """
    from .distribution import aggregate
    from .excess_demand import TypeOutcome, combine

    path = Path(path)
    if path.is_dir():
        path = path / "equilibrium.json"
    doc = json.loads(path.read_text())
    pn = doc["prices_normalized"]
    prices = PriceSystem(np.asarray(pn["p"], dtype=float), float(pn["r"]))
    profiles = cfg.profiles()
    outcomes = []
    for k, prof in enumerate(profiles):
        suffix = "" if len(profiles) == 1 else f"_type{k}"
        sub = cfg.for_type(k) if cfg.types else cfg
        pol = load_policy_csv(path.parent / f"policy{suffix}.csv", sub, prices)
        mu = load_distribution_csv(path.parent / f"distribution{suffix}.csv", pol.grid)
        outcomes.append(TypeOutcome(prof.weight, pol, mu, aggregate(sub, prices, pol, mu)))
    z = combine(prices, cfg.supply, tuple(outcomes))
    return EquilibriumResult(cfg, prices, z, float(doc["residual"]), float(doc["tol"]),
                             doc.get("trace", []), float(doc.get("cap_mass", 0.0)))
