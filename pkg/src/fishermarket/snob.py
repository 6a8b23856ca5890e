"""Markets with a snob effect.

Buyer ``i`` values holding ``x_ij`` of good ``j`` at
``x_ij * v_ij * (x_ij / sum_k x_kj) ** alpha_i``: the larger the share of the
good held by rivals, the less it is worth. ``alpha_i == 0`` gives back linear
utility. Terms for unallocated goods count as zero and ``0 ** 0`` is 1.

Everything here is exhaustive grid search; sizes are meant to be tiny.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .market import MarketError, MarketInstance, _check_shapes

GRID_LIMIT = 10**8
_TIE = 1e-12


class GridTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class SnobMarket:
    market: MarketInstance
    alphas: np.ndarray

    def __post_init__(self):
        a = np.array(self.alphas, dtype=float)
        if a.shape != (self.market.n,):
            raise MarketError(f"alphas has shape {a.shape}, expected ({self.market.n},)")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise MarketError("alphas must be finite and nonnegative")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    @classmethod
    def from_instance(cls, inst: MarketInstance, alphas=None) -> "SnobMarket":
        if alphas is None:
            alphas = inst.alphas
        if alphas is None:
            raise MarketError("instance has no alphas field")
        return cls(inst, alphas)

    @property
    def n(self) -> int:
        return self.market.n

    @property
    def m(self) -> int:
        return self.market.m


def _shares(x: np.ndarray, denom: np.ndarray) -> np.ndarray:
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, x / safe, 0.0)


def snob_share_utility(alloc, i: int) -> float:
    """Sum over goods of buyer ``i``'s ownership share."""
    x = np.asarray(alloc, dtype=float)
    return float(_shares(x[i], x.sum(axis=0)).sum())


def _denominators(snob: SnobMarket, x: np.ndarray, by_capacity: bool) -> np.ndarray:
    return snob.market.capacities if by_capacity else x.sum(axis=0)


def snob_utilities(snob: SnobMarket, alloc, by_capacity: bool = False) -> np.ndarray:
    """All buyers' utilities. ``by_capacity`` measures shares against ``C_j``
    instead of the amount actually allocated."""
    x = _check_shapes(alloc, snob.market)
    share = _shares(x, _denominators(snob, x, by_capacity)[None, :])
    # share ** 0 == 1 in numpy, including 0 ** 0, so alpha = 0 is exactly linear
    return np.sum(x * snob.market.valuations * share ** snob.alphas[:, None], axis=1)


def snob_utility(snob: SnobMarket, alloc, i: int, by_capacity: bool = False) -> float:
    return float(snob_utilities(snob, alloc, by_capacity)[i])


def snob_objective(snob: SnobMarket, alloc, by_capacity: bool = False) -> float:
    return float(snob_utilities(snob, alloc, by_capacity).sum())


@dataclass
class SnobOptimum:
    allocation: np.ndarray
    value: float
    maximizers: list[np.ndarray]
    evaluated: int


def _column_choices(n: int, cap: float, points: int) -> np.ndarray:
    """Grid columns ``(x_1j, ..., x_nj)`` with ``sum <= cap``, lexicographic."""
    step = cap / (points - 1)
    ticks = [t for t in itertools.product(range(points), repeat=n) if sum(t) <= points - 1]
    return np.asarray(ticks, dtype=float).reshape(-1, n) * step


def brute_force_snob_optimum(
    snob: SnobMarket,
    prices,
    grid_points: int,
    by_capacity: bool = False,
    tie_tol: float = 1e-9,
) -> SnobOptimum:
    """Best grid allocation for the planner's sum of snob utilities.

    Each ``x_ij`` ranges over ``grid_points`` evenly spaced values in
    ``[0, C_j]``; points violating supply or budgets are skipped. The returned
    allocation is the lexicographically smallest exact maximizer (row-major);
    ``maximizers`` lists every grid point within ``tie_tol`` of the maximum.
    """
    inst = snob.market
    p = np.asarray(prices, dtype=float)
    if p.shape != (inst.m,):
        raise MarketError(f"price vector shape {p.shape}, expected ({inst.m},)")
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    if float(grid_points) ** (inst.n * inst.m) > GRID_LIMIT:
        raise GridTooLargeError(
            f"{grid_points}^{inst.n * inst.m} grid points exceeds limit {GRID_LIMIT}"
        )
    cols = [_column_choices(inst.n, inst.capacities[j], grid_points) for j in range(inst.m)]

    # The objective separates over goods: value(x) = sum_j g_j(column j).
    gains = []
    for j, c in enumerate(cols):
        denom = np.full(len(c), inst.capacities[j]) if by_capacity else c.sum(axis=1)
        share = _shares(c, denom[:, None])
        gains.append(np.sum(c * inst.valuations[:, j] * share ** snob.alphas, axis=1))

    best = -np.inf
    near: list[tuple[float, tuple]] = []
    evaluated = 0
    last = inst.m - 1
    slack = inst.budgets + 1e-12 * np.maximum(1.0, inst.budgets)
    for head in itertools.product(*(range(len(c)) for c in cols[:last])):
        spend = np.zeros(inst.n)
        value = 0.0
        for j, t in enumerate(head):
            spend = spend + cols[j][t] * p[j]
            value += gains[j][t]
        total_spend = spend[None, :] + cols[last] * p[last]
        ok = np.all(total_spend <= slack, axis=1)
        evaluated += len(ok)
        if not ok.any():
            continue
        vals = np.where(ok, value + gains[last], -np.inf)
        top = vals.max()
        if top < best - tie_tol:
            continue
        best = max(best, top)
        for t in np.flatnonzero(vals >= best - tie_tol):
            near.append((float(vals[t]), head + (int(t),)))
        near = [(v, h) for v, h in near if v >= best - tie_tol]

    def matrix(h):
        return np.column_stack([cols[j][t] for j, t in enumerate(h)])

    mats = [(v, matrix(h)) for v, h in near]
    exact = [x for v, x in mats if v >= best - _TIE * max(1.0, abs(best))]
    alloc = min(exact, key=lambda x: tuple(x.ravel()))
    maximizers = sorted((x for _, x in mats), key=lambda x: tuple(x.ravel()))
    return SnobOptimum(alloc, float(best), maximizers, evaluated)


@dataclass
class CornerVerdict:
    passed: bool
    grid_points: int
    budget: float
    value: float
    allocation: np.ndarray
    maximizers: list[np.ndarray]
    interior_maximizers: list[np.ndarray]
    reason: str


def theorem_market(budget: float = 1.0) -> SnobMarket:
    """One unit good, two buyers valuing it at 1, sensitivity 1, price 1."""
    from .market import validate_market

    inst = validate_market(
        {"valuations": [[1.0], [1.0]], "budgets": [budget, budget], "capacities": [1.0]}
    )
    return SnobMarket(inst, np.ones(2))


def corner_theorem_check(grid_points: int, budget: float = 1.0, tol: float = 1e-9) -> CornerVerdict:
    """Planner optimum of the one-good, two-buyer snob market sits on an axis.

    Passes when the maximum equals ``min(budget, 1)`` within ``tol``, every
    near-maximizer gives the whole affordable amount to one buyer (within one
    grid cell) and no grid point with both holdings positive comes within
    ``tol`` of the maximum.
    """
    snob = theorem_market(budget)
    opt = brute_force_snob_optimum(snob, [1.0], grid_points, tie_tol=tol)
    expected = min(budget, 1.0)
    cell = 1.0 / (grid_points - 1)
    interior = [x for x in opt.maximizers if np.all(x > 0)]
    corners = [
        x
        for x in opt.maximizers
        if min(x[0, 0], x[1, 0]) <= cell and abs(max(x[0, 0], x[1, 0]) - expected) <= cell
    ]
    if abs(opt.value - expected) > tol:
        ok, reason = False, f"maximum {opt.value!r} differs from {expected!r}"
    elif interior:
        ok, reason = False, f"{len(interior)} interior grid point(s) attain the maximum"
    elif len(corners) != len(opt.maximizers):
        ok, reason = False, "a maximizer is not at a corner"
    else:
        ok, reason = True, "every maximizer gives the good to a single buyer"
    return CornerVerdict(
        ok, grid_points, budget, opt.value, opt.allocation, opt.maximizers, interior, reason
    )


@dataclass
class SnobCandidate:
    prices: np.ndarray
    allocation: np.ndarray
    unspent: np.ndarray
    unsold: np.ndarray
    residual: float
    utilities: np.ndarray = field(repr=False, default=None)
    distortion: float = 0.0

    def to_payload(self) -> dict:
        return {
            "prices": self.prices.tolist(),
            "allocation": self.allocation.tolist(),
            "unspent": self.unspent.tolist(),
            "unsold": self.unsold.tolist(),
            "residual": self.residual,
            "distortion": self.distortion,
            "utilities": None if self.utilities is None else self.utilities.tolist(),
        }


def price_simplex(inst: MarketInstance, resolution: int) -> list[np.ndarray]:
    """Prices ``p_j = (a_j / r) * sum(B) / C_j`` over compositions ``a`` of ``r``.

    These are exactly the grid prices whose total worth ``sum p_j C_j`` equals
    the money in the market.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    money = float(inst.budgets.sum())
    out = []
    for head in itertools.product(range(resolution + 1), repeat=inst.m - 1):
        rest = resolution - sum(head)
        if rest >= 0:
            a = np.asarray(head + (rest,), dtype=float)
            out.append(a / resolution * money / inst.capacities)
    return out


def _lattice(m: int, points: int, priced: np.ndarray) -> np.ndarray:
    """Integer tuples ``t`` in ``[0, points-1]^m`` whose priced part sums to at
    most ``points - 1``; lexicographic."""
    top = points - 1
    rows = [
        t for t in itertools.product(range(points), repeat=m)
        if sum(tj for tj, pj in zip(t, priced) if pj) <= top
    ]
    return np.asarray(rows, dtype=float).reshape(-1, m) / top


def _residuals(x: np.ndarray, p: np.ndarray, inst: MarketInstance):
    unspent = inst.budgets - x @ p
    unsold = inst.capacities - x.sum(axis=0)
    # A free good may stay unsold but must not be oversold.
    excess = np.where(p > 0, np.abs(unsold), np.maximum(-unsold, 0.0))
    return unspent, unsold, float(max(np.abs(unspent).max(), excess.max()))


def grid_halfwidth(inst: MarketInstance, resolution: int) -> np.ndarray:
    """How far an equilibrium price can sit from its nearest point of
    :func:`price_simplex`, per good.

    ``(1 - 1/m)`` grid steps is the covering radius of the simplex lattice in
    the max norm.
    """
    step = float(inst.budgets.sum()) / resolution / inst.capacities
    return (1.0 - 1.0 / inst.m) * step


def _transfer_gains(
    snob: SnobMarket, i: int, frac: np.ndarray, rivals: np.ndarray, p: np.ndarray,
    cheap: np.ndarray, dear: np.ndarray, by_capacity: bool,
):
    """Utility of each lattice bundle at ``p``, and for every ordered pair
    ``(j, k)`` of priced goods the gain from moving the share spent on ``j``
    onto ``k``, with ``j`` bought at ``cheap[j]`` and ``k`` at ``dear[k]``."""
    inst = snob.market
    v, a, C = inst.valuations[i], snob.alphas[i], inst.capacities
    priced = p > 0

    def term(j, share, q):
        b = share * (inst.budgets[i] / q if priced[j] else 2.0 * C[j])
        denom = C[j] if by_capacity else b + rivals[j]
        return b * v[j] * _shares(b, denom) ** a

    util = sum(term(j, frac[:, j], p[j] if priced[j] else 1.0) for j in range(inst.m))
    gains = {}
    for j in np.flatnonzero(priced):
        for k in np.flatnonzero(priced):
            if j != k:
                gains[j, k] = (
                    term(k, frac[:, k] + frac[:, j], dear[k])
                    - term(k, frac[:, k], dear[k])
                    - term(j, frac[:, j], cheap[j])
                )
    free = {k: term(k, frac[:, k], 1.0) for k in np.flatnonzero(~priced)}
    return util, gains, free


def snob_clearing_search(
    snob: SnobMarket,
    price_grid: Union[int, Sequence[Sequence[float]]],
    alloc_grid: int = 11,
    by_capacity: bool = False,
    slack: Optional[float] = None,
    max_rounds: int = 25,
    halfwidth=None,
) -> list[SnobCandidate]:
    """Explore price vectors for snob markets by best responses.

    ``price_grid`` is either a resolution for :func:`price_simplex` or an
    explicit list of price vectors. At each price, buyers take turns picking
    an affordable bundle that maximizes their snob utility with rivals'
    bundles held fixed. Bundles come from a lattice on budget shares: buyer
    ``i`` spends a multiple of ``B_i / (alloc_grid - 1)`` on each priced good,
    so demand is not capped by supply. Holdings of free goods step through
    ``[0, 2 C_j]``, enough for unbounded demand to show up as overselling.

    A grid price only locates equilibrium prices up to ``halfwidth`` per good
    (by default :func:`grid_halfwidth` for a resolution and zero for an
    explicit list), so near-best is judged good by good: a bundle qualifies
    when moving the whole budget share of any good it buys onto another
    priced good gains at most ``slack`` times that share of the best
    attainable utility, with prices taken at the ends of the box most
    favourable to the bundle (its good cheap, the other dear). For linear
    utilities this is exactly "every good bought has the top bang per buck at
    some price in the box". Holdings of a free good must be within ``slack``
    of the best holding of it. Without the box, linear demand flips between
    corners from one grid point to the next and nothing clears. Among
    near-best responses the one leaving the smallest sum of squared clearing
    residuals is chosen. Turns repeat until no bundle changes or
    ``max_rounds`` pass.

    Each candidate's ``distortion`` is the largest such gain, per unit of
    share moved and of best utility, at the grid price itself: zero means
    every bundle is an exact best response there. Candidates are sorted by
    the largest clearing residual, then distortion, then price
    (lexicographic). Nothing is claimed about existence of clearing prices.
    """
    inst = snob.market
    if isinstance(price_grid, (int, np.integer)):
        prices = price_simplex(inst, int(price_grid))
        if halfwidth is None:
            halfwidth = grid_halfwidth(inst, int(price_grid))
    else:
        prices = [np.asarray(p, dtype=float) for p in price_grid]
    if not prices:
        return []
    if alloc_grid < 2:
        raise ValueError("alloc_grid must be at least 2")
    h = np.zeros(inst.m) if halfwidth is None else np.broadcast_to(np.asarray(halfwidth, dtype=float), (inst.m,))
    if np.any(h < 0):
        raise ValueError("halfwidth must be nonnegative")
    work = len(prices) * min(alloc_grid**inst.m, 10**9) * inst.n * inst.m
    if work > GRID_LIMIT:
        raise GridTooLargeError(f"search needs {work} bundle evaluations, limit {GRID_LIMIT}")
    if slack is None:
        slack = 0.5 / (alloc_grid - 1)

    C = inst.capacities
    out = []
    for p in prices:
        if p.shape != (inst.m,):
            raise MarketError(f"price vector shape {p.shape}, expected ({inst.m},)")
        priced = p > 0
        frac = _lattice(inst.m, alloc_grid, priced)
        safe = np.where(priced, p, 1.0)
        cheap = np.maximum(p - h, 0.5 * p)
        dear = p + h
        x = np.zeros((inst.n, inst.m))
        for _ in range(max_rounds):
            changed = False
            for i in range(inst.n):
                rivals = x.sum(axis=0) - x[i]
                util, gains, free = _transfer_gains(snob, i, frac, rivals, p, cheap, dear, by_capacity)
                scale = max(abs(util.max()), 1e-300)
                near = np.ones(len(frac), dtype=bool)
                for (j, k), g in gains.items():
                    near &= (frac[:, j] == 0) | (g <= slack * frac[:, j] * scale)
                for g in free.values():
                    near &= g >= g.max() - slack * scale
                good = np.flatnonzero(near)
                if good.size == 0:
                    good = np.array([int(np.argmax(util))])
                bundles = frac[good] * np.where(priced, inst.budgets[i] / safe, 2.0 * C)
                # squared error: a turn that shrinks any residual counts, which the max norm hides
                unsold = C - rivals - bundles
                excess = np.where(priced, unsold, np.minimum(unsold, 0.0))
                unspent_i = inst.budgets[i] - bundles @ p
                score = np.sum(excess**2, axis=1) + unspent_i**2
                pick = bundles[int(np.argmin(score))]
                if not np.array_equal(pick, x[i]):
                    x[i] = pick
                    changed = True
            if not changed:
                break
        distortion = 0.0
        for i in range(inst.n):
            rivals = x.sum(axis=0) - x[i]
            share = np.where(priced, x[i] * p / inst.budgets[i], x[i] / (2.0 * C))
            util, _, _ = _transfer_gains(snob, i, frac, rivals, p, safe, safe, by_capacity)
            _, gains, _ = _transfer_gains(snob, i, share[None, :], rivals, p, safe, safe, by_capacity)
            scale = max(abs(util.max()), 1e-300)
            for (j, k), g in gains.items():
                if share[j] > 0:
                    distortion = max(distortion, float(g[0]) / (share[j] * scale))
        unspent, unsold, res = _residuals(x, p, inst)
        out.append(
            SnobCandidate(p, x, unspent, unsold, res, snob_utilities(snob, x, by_capacity), distortion)
        )
    out.sort(key=lambda c: (c.residual, c.distortion, tuple(c.prices)))
    return out
