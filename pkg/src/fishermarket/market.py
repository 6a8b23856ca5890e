"""Core market types, validation, feasibility predicates and objectives.

Allocations are ``n x m`` float arrays (``x[i, j]`` = amount of good ``j`` held
by buyer ``i``) and price vectors are length-``m`` float arrays. The only
structured record is :class:`MarketInstance`, which is immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

DEFAULT_TOL = 1e-8


class MarketError(ValueError):
    """Base class for invalid market instances."""


class DimensionMismatchError(MarketError):
    pass


class NegativeValuationError(MarketError):
    pass


class NonpositiveBudgetError(MarketError):
    pass


class NonpositiveCapacityError(MarketError):
    pass


class NoPotentialBuyerError(MarketError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MarketInstance:
    """A Fisher market: ``n`` buyers with budgets, ``m`` goods with supplies.

    Build instances through :func:`validate_market`; the constructor itself
    only freezes the arrays.
    """

    valuations: np.ndarray
    budgets: np.ndarray
    capacities: np.ndarray
    divisible: bool = True
    alphas: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "valuations", _frozen(self.valuations))
        object.__setattr__(self, "budgets", _frozen(self.budgets))
        object.__setattr__(self, "capacities", _frozen(self.capacities))
        if self.alphas is not None:
            object.__setattr__(self, "alphas", _frozen(self.alphas))

    @property
    def n(self) -> int:
        return self.valuations.shape[0]

    @property
    def m(self) -> int:
        return self.valuations.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MarketInstance):
            return NotImplemented
        same_alphas = (self.alphas is None and other.alphas is None) or (
            self.alphas is not None
            and other.alphas is not None
            and np.array_equal(self.alphas, other.alphas)
        )
        return (
            np.array_equal(self.valuations, other.valuations)
            and np.array_equal(self.budgets, other.budgets)
            and np.array_equal(self.capacities, other.capacities)
            and self.divisible == other.divisible
            and same_alphas
        )

    __hash__ = None

    def with_valuations(self, valuations) -> "MarketInstance":
        return validate_market(
            {**self.to_record(), "valuations": np.asarray(valuations).tolist()}
        )

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "n": self.n,
            "m": self.m,
            "valuations": self.valuations.tolist(),
            "budgets": self.budgets.tolist(),
            "capacities": self.capacities.tolist(),
            "divisible": bool(self.divisible),
        }
        if self.alphas is not None:
            rec["alphas"] = self.alphas.tolist()
        return rec


def validate_market(raw: Mapping[str, Any]) -> MarketInstance:
    """Check a raw instance record and return a :class:`MarketInstance`.

    ``raw`` needs ``valuations``, ``budgets`` and ``capacities``; ``n`` and
    ``m`` are optional but must agree with the arrays when given. Nothing is
    rescaled here, see :func:`normalize` for that.
    """
    try:
        v = np.array(raw["valuations"], dtype=float)
        budgets = np.array(raw["budgets"], dtype=float)
        caps = np.array(raw["capacities"], dtype=float)
    except KeyError as exc:
        raise MarketError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise DimensionMismatchError(f"ragged or non-numeric array: {exc}") from None

    if v.ndim != 2:
        raise DimensionMismatchError(f"valuations must be a matrix, got ndim={v.ndim}")
    n, m = v.shape
    if n == 0 or m == 0:
        raise DimensionMismatchError("need at least one buyer and one good")
    if raw.get("n", n) != n or raw.get("m", m) != m:
        raise DimensionMismatchError(
            f"declared n={raw.get('n')}, m={raw.get('m')} but valuations are {n}x{m}"
        )
    if budgets.shape != (n,):
        raise DimensionMismatchError(f"budgets has shape {budgets.shape}, expected ({n},)")
    if caps.shape != (m,):
        raise DimensionMismatchError(f"capacities has shape {caps.shape}, expected ({m},)")
    for name, arr in (("valuations", v), ("budgets", budgets), ("capacities", caps)):
        if not np.all(np.isfinite(arr)):
            raise MarketError(f"{name} contains non-finite values")

    if np.any(v < 0):
        i, j = np.argwhere(v < 0)[0]
        raise NegativeValuationError(f"valuation v[{i}][{j}] = {v[i, j]} is negative")
    if np.any(budgets <= 0):
        i = int(np.argmax(budgets <= 0))
        raise NonpositiveBudgetError(f"budget B[{i}] = {budgets[i]} must be positive")
    if np.any(caps <= 0):
        j = int(np.argmax(caps <= 0))
        raise NonpositiveCapacityError(f"capacity C[{j}] = {caps[j]} must be positive")
    unwanted = np.flatnonzero(~np.any(v > 0, axis=0))
    if unwanted.size:
        raise NoPotentialBuyerError(f"good {int(unwanted[0])} has no buyer with positive value")

    alphas = raw.get("alphas")
    if alphas is not None:
        alphas = np.array(alphas, dtype=float)
        if alphas.shape != (n,):
            raise DimensionMismatchError(f"alphas has shape {alphas.shape}, expected ({n},)")
        if np.any(alphas < 0) or not np.all(np.isfinite(alphas)):
            raise MarketError("alphas must be finite and nonnegative")

    divisible = raw.get("divisible", True)
    if not isinstance(divisible, (bool, np.bool_)):
        raise MarketError(f"divisible must be a boolean, got {divisible!r}")
    return MarketInstance(v, budgets, caps, bool(divisible), alphas)


def normalize(inst: MarketInstance) -> MarketInstance:
    """Rescale to unit supplies and budgets summing to one.

    Valuations are rescaled per good so that utilities of corresponding
    allocations are unchanged (``x_normalized = x / C``).
    """
    return MarketInstance(
        inst.valuations * inst.capacities[None, :],
        inst.budgets / inst.budgets.sum(),
        np.ones(inst.m),
        inst.divisible,
        inst.alphas,
    )


def is_normalized(inst: MarketInstance, tol: float = 1e-12) -> bool:
    return abs(inst.budgets.sum() - 1.0) <= tol and bool(np.all(inst.capacities == 1.0))


def _check_shapes(alloc, inst: MarketInstance, prices=None):
    alloc = np.asarray(alloc, dtype=float)
    if alloc.shape != (inst.n, inst.m):
        raise DimensionMismatchError(
            f"allocation shape {alloc.shape} does not match market ({inst.n}, {inst.m})"
        )
    if prices is None:
        return alloc
    prices = np.asarray(prices, dtype=float)
    if prices.shape != (inst.m,):
        raise DimensionMismatchError(f"price vector shape {prices.shape}, expected ({inst.m},)")
    return alloc, prices


def matching_feasible(alloc, inst: MarketInstance, tol: float = DEFAULT_TOL) -> bool:
    """Unit-demand matching: every buyer gets exactly one unit in total."""
    x = _check_shapes(alloc, inst)
    return bool(
        np.all(np.abs(x.sum(axis=1) - 1.0) <= tol)
        and np.all(x.sum(axis=0) <= inst.capacities + tol)
        and np.all(x >= -tol)
    )


def spending(alloc, prices) -> np.ndarray:
    return np.asarray(alloc, dtype=float) @ np.asarray(prices, dtype=float)


def fisher_feasible(alloc, prices, inst: MarketInstance, tol: float = DEFAULT_TOL) -> bool:
    """Nonnegativity, supply and budget constraints of the Fisher market."""
    x, p = _check_shapes(alloc, inst, prices)
    return bool(
        np.all(x >= -tol)
        and np.all(x.sum(axis=0) <= inst.capacities + tol)
        and np.all(x @ p <= inst.budgets + tol)
    )


def clearing_residuals(alloc, prices, inst: MarketInstance) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(unspent budget per buyer, unsold amount per good)``."""
    x, p = _check_shapes(alloc, inst, prices)
    return inst.budgets - x @ p, inst.capacities - x.sum(axis=0)


def is_clearing(alloc, prices, inst: MarketInstance, tol: float = DEFAULT_TOL) -> bool:
    """All money spent and every priced good sold out.

    Goods priced at zero may remain unsold, consistent with complementary
    slackness of the Eisenberg-Gale program.
    """
    unspent, unsold = clearing_residuals(alloc, prices, inst)
    priced = np.asarray(prices, dtype=float) > 0
    return bool(np.all(np.abs(unspent) <= tol) and np.all(np.abs(unsold[priced]) <= tol))


def linear_utility(bundle, valuations_row) -> float:
    """Utility ``sum_j v_j x_j`` of one buyer's bundle."""
    return float(np.dot(np.asarray(valuations_row, dtype=float), np.asarray(bundle, dtype=float)))


def linear_utilities(alloc, inst: MarketInstance) -> np.ndarray:
    x = _check_shapes(alloc, inst)
    return np.einsum("ij,ij->i", inst.valuations, x)


def welfare(alloc, inst: MarketInstance) -> float:
    """Total value ``sum_ij x_ij v_ij``."""
    return float(linear_utilities(alloc, inst).sum())


@dataclass
class EquilibriumReport:
    """Outcome of an equilibrium computation plus its verification data."""

    allocation: np.ndarray
    prices: np.ndarray
    utilities: np.ndarray
    spend: np.ndarray
    sold: np.ndarray
    kkt_residual: float
    unspent: np.ndarray
    unsold: np.ndarray
    kkt_ok: bool
    clearing_ok: bool
    flow_ok: Optional[bool] = None
    converged: bool = False
    iterations: int = 0
    history: dict[str, list] = field(default_factory=dict, repr=False)

    @classmethod
    def from_solution(
        cls,
        alloc,
        prices,
        inst: MarketInstance,
        kkt_residual: float,
        kkt_ok: bool,
        tol: float,
        **kwargs,
    ) -> "EquilibriumReport":
        x, p = _check_shapes(alloc, inst, prices)
        unspent, unsold = clearing_residuals(x, p, inst)
        return cls(
            allocation=x,
            prices=p,
            utilities=linear_utilities(x, inst),
            spend=x @ p,
            sold=x.sum(axis=0),
            kkt_residual=float(kkt_residual),
            unspent=unspent,
            unsold=unsold,
            kkt_ok=bool(kkt_ok),
            clearing_ok=is_clearing(x, p, inst, tol),
            **kwargs,
        )

    def to_payload(self) -> dict[str, Any]:
        return {
            "allocation": self.allocation.tolist(),
            "prices": self.prices.tolist(),
            "utilities": self.utilities.tolist(),
            "spend": self.spend.tolist(),
            "sold": self.sold.tolist(),
            "kkt_residual": self.kkt_residual,
            "unspent": self.unspent.tolist(),
            "unsold": self.unsold.tolist(),
            "kkt_ok": self.kkt_ok,
            "clearing_ok": self.clearing_ok,
            "flow_ok": self.flow_ok,
            "converged": self.converged,
            "iterations": self.iterations,
        }
