"""Eisenberg-Gale program for linear Fisher markets.

The solver runs proportional-response dynamics on the buyers' bids and,
every few iterations, tries to snap the iterate to an exact equilibrium:
it guesses the equality graph (buyer-good pairs with maximal bang-per-buck),
solves the price ratios that graph forces, and recovers money flows by
nonnegative least squares. A snapped point is accepted only if the KKT
conditions hold at the configured tolerance, so the snap can never make the
answer worse than the plain dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import nnls

from .market import (
    DEFAULT_TOL,
    EquilibriumReport,
    MarketError,
    MarketInstance,
    _check_shapes,
    linear_utilities,
)

# Relative tolerance under which two bang-per-buck ratios count as equal.
TIE_RTOL = 1e-9

_SUPPORT_GAPS = (1e-10, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 5e-2)


class ZeroUtilityError(ValueError):
    """Some buyer has zero utility, so ``log u_i`` is undefined."""


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20000
    tolerance: float = DEFAULT_TOL
    damping: float = 1.0
    polish_every: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.polish_every < 1:
            raise ValueError("polish_every must be >= 1")


@dataclass(frozen=True)
class KktReport:
    """Residuals of the four optimality conditions.

    ``positivity``: how far the smallest price is below zero.
    ``clearing``: largest supply gap over goods with positive price.
    ``dominance``: largest excess of ``v_ij / p_j`` over ``u_i / B_i``.
    ``equality``: largest ``|v_ij / p_j - u_i / B_i|`` over held pairs.
    """

    positivity: float
    clearing: float
    dominance: float
    equality: float
    tolerance: float

    @property
    def max_residual(self) -> float:
        return max(self.positivity, self.clearing, self.dominance, self.equality)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tolerance

    def as_dict(self) -> dict:
        return {
            "positivity": self.positivity,
            "clearing": self.clearing,
            "dominance": self.dominance,
            "equality": self.equality,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class DemandSet:
    """Utility-maximizing goods of one buyer at given prices.

    ``goods`` are the bang-per-buck maximizers among positively priced goods.
    ``free_goods`` are zero-priced goods the buyer values; when non-empty the
    buyer takes the whole supply of them and the demand is unbounded in money
    terms.
    """

    buyer: int
    goods: tuple[int, ...]
    budget: float
    free_goods: tuple[int, ...] = ()

    @property
    def unbounded(self) -> bool:
        return bool(self.free_goods)


def bang_per_buck(valuations, prices) -> np.ndarray:
    """``v_ij / p_j`` with ``0/0 = 0`` and ``v/0 = inf`` for ``v > 0``."""
    v = np.asarray(valuations, dtype=float)
    p = np.asarray(prices, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = v / p
    return np.where(v == 0, 0.0, np.where(p == 0, np.inf, r))


def eg_objective(alloc, inst: MarketInstance) -> float:
    """Money-weighted log utility ``sum_i B_i log u_i``."""
    u = linear_utilities(alloc, inst)
    if np.any(u <= 0):
        raise ZeroUtilityError(f"buyer {int(np.argmax(u <= 0))} has zero utility")
    return float(np.dot(inst.budgets, np.log(u)))


def extract_prices(alloc, inst: MarketInstance) -> np.ndarray:
    """Prices implied by an allocation: buyers split money by utility share.

    ``p_j = sum_i B_i v_ij x_ij / u_i / C_j``. At an Eisenberg-Gale optimum
    these coincide with the equilibrium prices.
    """
    x = _check_shapes(alloc, inst)
    u = linear_utilities(x, inst)
    if np.any(u <= 0):
        raise ZeroUtilityError(f"buyer {int(np.argmax(u <= 0))} has zero utility")
    money = inst.budgets[:, None] * inst.valuations * x / u[:, None]
    return money.sum(axis=0) / inst.capacities


def kkt_verify(alloc, prices, inst: MarketInstance, tol: float = DEFAULT_TOL) -> KktReport:
    """Evaluate the KKT residuals of ``(alloc, prices)`` for the EG program.

    A zero price on a good some buyer values makes the dominance residual
    infinite rather than raising.
    """
    x, p = _check_shapes(alloc, inst, prices)
    v = inst.valuations
    u = linear_utilities(x, inst)
    level = u / inst.budgets
    r = bang_per_buck(v, p)

    positivity = max(0.0, -float(p.min()))
    priced = p > 0
    gaps = np.abs(x.sum(axis=0) - inst.capacities)
    clearing = float(gaps[priced].max()) if priced.any() else 0.0
    with np.errstate(invalid="ignore"):
        dominance = float(np.max(np.maximum(r - level[:, None], 0.0)))
        held = x > 0
        equality = float(np.max(np.abs(r - level[:, None]), where=held, initial=0.0))
    return KktReport(positivity, clearing, dominance, equality, tol)


def demand_set(i: int, prices, inst: MarketInstance, rel_tol: float = TIE_RTOL) -> DemandSet:
    """All bang-per-buck maximizing goods of buyer ``i`` (ties kept)."""
    p = np.asarray(prices, dtype=float)
    if np.any(p < 0):
        raise ValueError("prices must be nonnegative")
    v = inst.valuations[i]
    free = tuple(int(j) for j in np.flatnonzero((p == 0) & (v > 0)))
    priced = p > 0
    goods: tuple[int, ...] = ()
    if priced.any():
        r = np.where(priced, v / np.where(priced, p, 1.0), -np.inf)
        best = r.max()
        if best > 0:
            goods = tuple(int(j) for j in np.flatnonzero(priced & (r >= best * (1 - rel_tol))))
    return DemandSet(int(i), goods, float(inst.budgets[i]), free)


def _initial_bids(inst: MarketInstance, initial_bids) -> np.ndarray:
    v = inst.valuations
    if initial_bids is None:
        w = v.copy()
    else:
        w = np.array(initial_bids, dtype=float)
        if w.shape != v.shape:
            raise MarketError(f"initial bids shape {w.shape}, expected {v.shape}")
        if np.any(w < 0):
            raise MarketError("initial bids must be nonnegative")
        w = np.where(v > 0, w, 0.0)
    if np.any(w.sum(axis=1) <= 0):
        raise MarketError("every buyer needs a positive bid on some valued good")
    b = inst.budgets[:, None] * w / w.sum(axis=1, keepdims=True)
    if np.any(b.sum(axis=0) <= 0):
        raise MarketError("initial bids leave some good without any bid")
    return b


def _components(edges: np.ndarray, n: int, m: int) -> np.ndarray:
    """Connected-component id for each node (buyers 0..n-1, goods n..n+m-1)."""
    parent = list(range(n + m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        ra, rb = find(int(i)), find(n + int(j))
        if ra != rb:
            parent[ra] = rb
    return np.array([find(a) for a in range(n + m)])


def _snap(support: np.ndarray, inst: MarketInstance):
    """Exact equilibrium candidate for a guessed equality graph, or None."""
    n, m = inst.n, inst.m
    v, B, C = inst.valuations, inst.budgets, inst.capacities
    edges = np.argwhere(support)
    if not support.any(axis=0).all() or not support.any(axis=1).all():
        return None

    # On every edge v_ij / p_j equals the buyer's level beta_i:
    # log p_j + log beta_i = log v_ij, one gauge freedom per component.
    k = len(edges)
    A = np.zeros((k, m + n))
    A[np.arange(k), edges[:, 1]] = 1.0
    A[np.arange(k), m + edges[:, 0]] = 1.0
    rhs = np.log(v[edges[:, 0], edges[:, 1]])
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    p = np.exp(sol[:m] - sol[:m].max())

    comp = _components(edges, n, m)
    for c in np.unique(comp):
        buyers = comp[:n] == c
        goods = comp[n:] == c
        p[goods] *= B[buyers].sum() / np.dot(p[goods], C[goods])

    # Money flows f_ij >= 0 on edges: rows = buyer spend, then good revenue.
    M = np.zeros((n + m, k))
    M[edges[:, 0], np.arange(k)] = 1.0
    M[n + edges[:, 1], np.arange(k)] = 1.0
    target = np.concatenate([B, p * C])
    f, _ = nnls(M, target)
    x = np.zeros((n, m))
    x[edges[:, 0], edges[:, 1]] = f / p[edges[:, 1]]
    return x, p


def _try_snap(bids: np.ndarray, inst: MarketInstance, tol: float):
    p = bids.sum(axis=0) / inst.capacities
    x = bids / p
    u = linear_utilities(x, inst)
    rel = bang_per_buck(inst.valuations, p) * (inst.budgets / u)[:, None]
    top = rel.max(axis=1, keepdims=True)
    tried = set()
    for gap in _SUPPORT_GAPS:
        support = (inst.valuations > 0) & (rel >= top * (1 - gap))
        key = support.tobytes()
        if key in tried:
            continue
        tried.add(key)
        cand = _snap(support, inst)
        if cand is None:
            continue
        kkt = kkt_verify(cand[0], cand[1], inst, tol)
        if kkt.passed:
            return cand[0], cand[1], kkt
    return None


def solve_eg(
    inst: MarketInstance,
    cfg: Optional[SolverConfig] = None,
    initial_bids=None,
) -> EquilibriumReport:
    """Compute an equilibrium of a divisible linear Fisher market.

    Returns a report flagged ``converged=False`` (best effort, not an error)
    when the KKT residuals do not drop below ``cfg.tolerance`` within
    ``cfg.max_iterations`` iterations. ``report.history`` holds the EG
    objective per iteration under ``"objective"``.
    """
    cfg = cfg or SolverConfig()
    if not inst.divisible:
        raise MarketError("solve_eg needs a divisible market")
    v, B, C = inst.valuations, inst.budgets, inst.capacities
    if np.any(v.max(axis=1) <= 0):
        raise MarketError("a buyer values no good; the EG objective is unbounded below")

    bids = _initial_bids(inst, initial_bids)
    objective: list[float] = []
    residual: list[float] = []
    d = cfg.damping
    for it in range(1, cfg.max_iterations + 1):
        p = bids.sum(axis=0) / C
        x = bids / p
        u = np.einsum("ij,ij->i", v, x)
        objective.append(float(np.dot(B, np.log(u))))

        if it % cfg.polish_every == 1 or cfg.polish_every == 1:
            snapped = _try_snap(bids, inst, cfg.tolerance)
            if snapped is not None:
                xs, ps, kkt = snapped
                residual.append(kkt.max_residual)
                return EquilibriumReport.from_solution(
                    xs, ps, inst, kkt.max_residual, True, cfg.tolerance,
                    converged=True, iterations=it,
                    history={"objective": objective, "kkt_residual": residual},
                )
            residual.append(kkt_verify(x, p, inst, cfg.tolerance).max_residual)

        new = B[:, None] * v * x / u[:, None]
        bids = new if d == 1.0 else (1 - d) * bids + d * new

    p = bids.sum(axis=0) / C
    x = bids / p
    kkt = kkt_verify(x, p, inst, cfg.tolerance)
    return EquilibriumReport.from_solution(
        x, p, inst, kkt.max_residual, kkt.passed, cfg.tolerance,
        converged=kkt.passed, iterations=cfg.max_iterations,
        history={"objective": objective, "kkt_residual": residual},
    )


def eg_optimality_gap(alloc, prices, inst: MarketInstance) -> float:
    """Duality gap of the EG program at a primal-dual pair.

    Dual objective: ``sum_j p_j C_j + sum_i B_i (log(r_i B_i) - 1)`` with
    ``r_i = max_j v_ij / p_j``. Zero exactly at equilibrium.
    """
    x, p = _check_shapes(alloc, inst, prices)
    B = inst.budgets
    r = bang_per_buck(inst.valuations, p).max(axis=1)
    if np.any(~np.isfinite(r)) or np.any(r <= 0):
        return math.inf
    dual = np.dot(p, inst.capacities) + np.dot(B, np.log(r * B) - 1.0)
    return float(dual - eg_objective(x, inst))
