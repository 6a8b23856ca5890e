"""Tiny indivisible markets: approximate clearing and brute-force CEEI.

Goods come in integral units. A competitive equilibrium with equal incomes
here means prices plus an integral allocation where every good is fully
sold, every buyer spends their whole budget (up to the price grid's
resolution) and every buyer's bundle is a best affordable integral bundle.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .market import MarketError, MarketInstance

ENUMERATION_LIMIT = 10**7


class UnequalBudgetsError(MarketError):
    pass


class EnumerationTooLargeError(ValueError):
    pass


def _integral(a: np.ndarray, what: str) -> np.ndarray:
    r = np.rint(a)
    if not np.array_equal(r, a):
        raise MarketError(f"{what} must be integral")
    return r.astype(np.int64)


@dataclass(frozen=True)
class DiscreteAllocation:
    x: np.ndarray
    capacities: np.ndarray

    def __post_init__(self):
        x = _integral(np.asarray(self.x, dtype=float), "allocation")
        caps = _integral(np.asarray(self.capacities, dtype=float), "capacities")
        if x.ndim != 2 or x.shape[1] != caps.shape[0]:
            raise MarketError(f"allocation shape {x.shape} does not fit {caps.shape[0]} goods")
        if np.any(x < 0):
            raise MarketError("allocation has negative entries")
        if np.any(x.sum(axis=0) > caps):
            raise MarketError("allocation exceeds supply")
        x.setflags(write=False)
        caps.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "capacities", caps)

    @property
    def sold(self) -> np.ndarray:
        return self.x.sum(axis=0)


def epsilon_clearing(alloc: DiscreteAllocation, inst: MarketInstance, eps: float) -> bool:
    """``(1 - eps) C_j <= sold_j <= C_j`` for every good, in exact arithmetic.

    ``eps`` is read through its shortest decimal form, so ``0.3`` means 3/10
    rather than the binary double nearest to it.
    """
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    e = Fraction(str(float(eps)))
    caps = _integral(inst.capacities, "capacities")
    if alloc.x.shape != (inst.n, inst.m):
        raise MarketError(f"allocation shape {alloc.x.shape}, market is ({inst.n}, {inst.m})")
    return all(
        (1 - e) * int(c) <= int(s) <= int(c) for s, c in zip(alloc.sold, caps)
    )


@dataclass
class CeeiResult:
    """Outcome of a brute-force search.

    ``found`` false only means no witness exists on the searched price grid
    of the given ``resolution``; it is not a proof that no CEEI exists.
    """

    found: bool
    resolution: int
    prices: Optional[np.ndarray] = None
    allocation: Optional[DiscreteAllocation] = None
    allocations_searched: int = 0
    prices_searched: int = 0

    @property
    def statement(self) -> str:
        if self.found:
            return "competitive equilibrium found"
        return f"no competitive equilibrium on the price grid of resolution {self.resolution}"

    def to_payload(self) -> dict:
        return {
            "found": self.found,
            "resolution": self.resolution,
            "statement": self.statement,
            "prices": None if self.prices is None else self.prices.tolist(),
            "allocation": None if self.allocation is None else self.allocation.x.tolist(),
            "allocations_searched": self.allocations_searched,
            "prices_searched": self.prices_searched,
        }


def spend_tolerance(inst: MarketInstance, resolution: int) -> float:
    """Half a grid step of money on each good."""
    return inst.m * float(inst.budgets.sum()) / (2 * resolution)


def _grid_prices(inst: MarketInstance, resolution: int) -> np.ndarray:
    money = float(inst.budgets.sum())
    rows = []
    for head in itertools.product(range(resolution + 1), repeat=inst.m - 1):
        rest = resolution - sum(head)
        if rest >= 0:
            rows.append(head + (rest,))
    a = np.asarray(rows, dtype=float)
    return a / resolution * money / inst.capacities[None, :]


def _full_sale_allocations(n: int, caps: np.ndarray):
    """Integral allocations selling every unit, lexicographic in row-major order."""
    per_good = []
    for c in caps:
        cols = [t for t in itertools.product(range(int(c) + 1), repeat=n) if sum(t) == c]
        per_good.append(cols)
    # row-major lexicographic order: sort full matrices after building
    mats = [np.array(cols).T for cols in itertools.product(*per_good)]
    mats.sort(key=lambda x: tuple(x.ravel()))
    return mats


def ceei_exists_bruteforce(inst: MarketInstance, resolution: int) -> CeeiResult:
    """Search integral allocations and grid prices for a CEEI witness.

    Prices range over ``p_j = (a_j / r) (sum B) / C_j`` for nonnegative
    integers ``a`` summing to ``r``. Allocations are tried in lexicographic
    order and, for each, prices in lexicographic order of ``a``; the first
    pair passing all three conditions is returned.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    if not np.all(inst.budgets == inst.budgets[0]):
        raise UnequalBudgetsError("CEEI needs equal budgets")
    caps = _integral(inst.capacities, "capacities")
    size = float(np.prod((caps + 1.0) ** inst.n))
    if size > ENUMERATION_LIMIT:
        raise EnumerationTooLargeError(f"{size:.3g} allocations exceeds limit {ENUMERATION_LIMIT}")

    budget = float(inst.budgets[0])
    tol = spend_tolerance(inst, resolution)
    prices = _grid_prices(inst, resolution)
    bundles = np.array(list(itertools.product(*(range(int(c) + 1) for c in caps))), dtype=float)
    if len(bundles) * len(prices) > 10 * ENUMERATION_LIMIT:
        raise EnumerationTooLargeError(
            f"{len(bundles)} bundles at {len(prices)} prices is too many to tabulate"
        )
    utils = bundles @ inst.valuations.T  # (bundles, n)
    costs = bundles @ prices.T  # (bundles, prices)
    affordable = costs <= budget + tol
    # best affordable utility per price and buyer
    best = np.stack(
        [np.where(affordable, utils[:, i : i + 1], -np.inf).max(axis=0) for i in range(inst.n)],
        axis=1,
    )  # (prices, n)

    allocs = _full_sale_allocations(inst.n, caps)
    for x in allocs:
        spend = x @ prices.T  # (n, prices)
        ok = np.all(np.abs(spend - budget) <= tol, axis=0)
        u = (x @ inst.valuations.T).diagonal()
        ok &= np.all(u[None, :] >= best - 1e-12 * np.maximum(1.0, np.abs(best)), axis=1)
        hit = np.flatnonzero(ok)
        if hit.size:
            t = int(hit[0])
            return CeeiResult(
                True, resolution, prices[t], DiscreteAllocation(x, caps), len(allocs), len(prices)
            )
    return CeeiResult(False, resolution, None, None, len(allocs), len(prices))


def check_ceei_witness(
    inst: MarketInstance, prices, alloc: DiscreteAllocation, tol: float
) -> tuple[bool, str]:
    """Re-check a witness one buyer and one bundle at a time."""
    p = [float(v) for v in prices]
    x = alloc.x
    caps = [int(c) for c in alloc.capacities]
    for j in range(inst.m):
        if sum(int(x[i][j]) for i in range(inst.n)) != caps[j]:
            return False, f"good {j} is not fully sold"
    for i in range(inst.n):
        budget = float(inst.budgets[i])
        spend = sum(int(x[i][j]) * p[j] for j in range(inst.m))
        if abs(spend - budget) > tol:
            return False, f"buyer {i} spends {spend!r} of {budget!r}"
        mine = sum(int(x[i][j]) * float(inst.valuations[i][j]) for j in range(inst.m))
        for bundle in itertools.product(*(range(c + 1) for c in caps)):
            cost = sum(b * pj for b, pj in zip(bundle, p))
            if cost > budget + tol:
                continue
            value = sum(b * float(inst.valuations[i][j]) for j, b in enumerate(bundle))
            if value > mine + 1e-12 * max(1.0, abs(mine)):
                return False, f"buyer {i} prefers affordable bundle {bundle}"
    return True, "witness verified"
