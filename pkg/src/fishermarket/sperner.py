"""Clearing prices by Sperner labelling of a triangulated price simplex.

Vertices of the grid are integer ``m``-tuples ``a`` with ``sum(a) == k``,
standing for the price vector ``a / k``. Cells come from the Kuhn (Freudenthal)
triangulation, enumerated in cumulative coordinates ``z_t = a_1 + ... + a_t``
where the simplex becomes the order simplex ``0 <= z_1 <= ... <= z_{m-1} <= k``.
A cell is a base point ``b`` plus a permutation ``pi``: its vertices are
``b, b + e_pi[0], b + e_pi[0] + e_pi[1], ...``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .flow import build_equilibrium_network, max_flow
from .market import MarketError, MarketInstance, is_normalized

Vertex = tuple[int, ...]

MAX_RESOLUTION = 2**20
# Refinement rounds scan the whole simplex while it has at most this many vertices.
SCAN_LIMIT = 300_000
# Window scans label at most this many vertices.
WINDOW_LIMIT = 2_000_000
_LABEL_BATCH = 50_000
_LABEL_SLACK = 1e-12
SMOOTHING = 1.0
SMOOTHING_EXPONENT = 0.75


def default_smoothing(k: int, p_ref: float) -> float:
    """Logit temperature for resolution ``k`` near prices of size ``p_ref``.

    Smoothing acts on log prices, where a cell spans about
    ``diameter / p_ref``. The temperature is that span raised to a power
    below one, so it vanishes as the grid refines while growing relative to
    what a single cell resolves. Too small a ratio leaves long ridges of
    spurious fully labelled cells where a buyer's tie is nearly balanced; too
    large a temperature biases the smoothed equilibrium.
    """
    span = math.sqrt(2.0) / k / max(p_ref, 1.0 / k)
    return SMOOTHING * span**SMOOTHING_EXPONENT


class NotNormalizedError(MarketError):
    pass


class ResolutionOverflowError(RuntimeError):
    pass


class ScanLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimplexGrid:
    m: int
    k: int

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ValueError("need m >= 1 and k >= 1")

    @property
    def dimension(self) -> int:
        return self.m - 1

    def vertices(self) -> Iterator[Vertex]:
        """All compositions of ``k`` into ``m`` nonnegative parts, lexicographic."""
        for head in itertools.product(range(self.k + 1), repeat=self.m - 1):
            rest = self.k - sum(head)
            if rest >= 0:
                yield head + (rest,)

    def price(self, vertex: Sequence[int]) -> np.ndarray:
        return np.asarray(vertex, dtype=float) / self.k


@dataclass(frozen=True)
class Cell:
    base: tuple[int, ...]
    perm: tuple[int, ...]
    vertices: tuple[Vertex, ...]
    k: int
    labels: tuple[int, ...] = ()

    def barycenter(self) -> np.ndarray:
        return np.mean(np.asarray(self.vertices, dtype=float), axis=0) / self.k

    def diameter(self) -> float:
        pts = np.asarray(self.vertices, dtype=float) / self.k
        if len(pts) < 2:
            return 0.0
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff**2).sum(axis=-1)).max())


@dataclass
class RoundTrace:
    k: int
    cell: Cell
    diameter: float
    barycenter: np.ndarray
    scanned: str

    def line(self) -> str:
        verts = ";".join(",".join(str(c) for c in v) for v in self.cell.vertices)
        labels = ",".join(str(lab) for lab in self.cell.labels)
        bary = ",".join(repr(float(c)) for c in self.barycenter)
        return (
            f"round k={self.k} scan={self.scanned} diameter={self.diameter!r} "
            f"cell={verts} labels={labels} barycenter={bary}"
        )


@dataclass
class SpernerResult:
    prices: np.ndarray
    k: int
    diameter: float
    history: list[RoundTrace] = field(default_factory=list)

    def trace(self) -> str:
        return "".join(r.line() + "\n" for r in self.history)


def _require_normalized(inst: MarketInstance):
    if not is_normalized(inst):
        raise NotNormalizedError("Sperner search needs unit supplies and budgets summing to 1")
    if np.any(inst.valuations <= 0):
        raise NotNormalizedError("Sperner search needs every valuation strictly positive")


def _demand_rows(inst: MarketInstance, p: np.ndarray, smoothing: float) -> np.ndarray:
    """Aggregate demand for each row of ``p`` (shape ``(P, m)``)."""
    P = p.shape[0]
    demand = np.ones((P, inst.m))
    priced = p > 0
    safe = np.where(priced, p, 1.0)
    ratio = inst.valuations[None, :, :] / safe[:, None, :]
    mask = priced[:, None, :]
    if smoothing == 0:
        r = np.where(mask, ratio, -np.inf)
        choice = np.argmax(r, axis=2)
        spend = np.zeros((P, inst.m))
        rows = np.repeat(np.arange(P), inst.n)
        np.add.at(spend, (rows, choice.ravel()), np.tile(inst.budgets, P))
    else:
        with np.errstate(divide="ignore"):
            logits = np.where(mask, np.log(ratio) / smoothing, -np.inf)
        logits = logits - logits.max(axis=2, keepdims=True)
        w = np.exp(logits)
        share = w / w.sum(axis=2, keepdims=True)
        spend = (inst.budgets[None, :, None] * share).sum(axis=1)
    demand = np.where(priced, spend / safe, 1.0)
    # a buyer facing only free goods has nothing to spend on
    demand[~priced.any(axis=1)] = 1.0
    return demand


def aggregate_demand(inst: MarketInstance, prices, smoothing: float = 0.0) -> np.ndarray:
    """Total demand per good at ``prices``; free goods are demanded in full.

    With ``smoothing == 0`` every buyer spends the whole budget on the
    lowest-index bang-per-buck maximizer among positively priced goods.
    With ``smoothing = tau > 0`` buyer ``i`` splits the budget over priced
    goods in proportion to ``(v_ij / p_j) ** (1 / tau)``, a continuous
    demand that tends to the exact one as ``tau -> 0``.
    """
    _require_normalized(inst)
    p = np.asarray(prices, dtype=float)
    if p.shape != (inst.m,):
        raise MarketError(f"price vector shape {p.shape}, expected ({inst.m},)")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    return _demand_rows(inst, p[None, :], smoothing)[0]


def _label_rows(inst: MarketInstance, p: np.ndarray, smoothing: float) -> np.ndarray:
    demand = _demand_rows(inst, p, smoothing)
    ok = (p > 0) & (demand <= 1.0 + _LABEL_SLACK)
    assert ok.any(axis=1).all(), "no expensive good; spending identity violated"
    return np.argmax(ok, axis=1)


def expensive_label(inst: MarketInstance, prices, smoothing: float = 0.0) -> int:
    """Lowest-index positively priced good whose demand is at most its supply."""
    p = np.asarray(prices, dtype=float)
    aggregate_demand(inst, p, smoothing)  # validates
    return int(_label_rows(inst, p[None, :], smoothing)[0])


def is_sperner_labelling(grid: SimplexGrid, label: Callable[[Vertex], int]) -> bool:
    """No vertex with ``a_j == 0`` carries label ``j``."""
    return all(v[label(v)] != 0 for v in grid.vertices())


def _to_simplex(z: Sequence[int], k: int) -> Vertex:
    a = []
    prev = 0
    for zt in z:
        a.append(zt - prev)
        prev = zt
    a.append(k - prev)
    return tuple(a)


def _cell_vertices(base, perm, k) -> Optional[tuple[Vertex, ...]]:
    z = list(base)
    out = [z.copy()]
    for t in perm:
        z[t] += 1
        out.append(z.copy())
    for w in out:
        if w and (w[0] < 0 or w[-1] > k or any(w[t] > w[t + 1] for t in range(len(w) - 1))):
            return None
    return tuple(_to_simplex(w, k) for w in out)


def _bases(d: int, k: int, lo=None, hi=None) -> Iterator[tuple[int, ...]]:
    lo = lo or [0] * d
    hi = hi or [k - 1] * d
    ranges = [range(max(0, lo[t]), min(k - 1, hi[t]) + 1) for t in range(d)]
    for b in itertools.product(*ranges):
        if all(b[t] <= b[t + 1] for t in range(d - 1)):
            yield b


def kuhn_cells(grid: SimplexGrid, lo=None, hi=None) -> Iterator[Cell]:
    """Elementary simplices of the Kuhn triangulation, in lexicographic order.

    ``lo``/``hi`` optionally restrict base points (cumulative coordinates) to
    a box, which is how refinement rounds scan a window.
    """
    d, k = grid.dimension, grid.k
    if d == 0:
        yield Cell((), (), ((k,),), k)
        return
    perms = list(itertools.permutations(range(d)))
    for b in _bases(d, k, lo, hi):
        for perm in perms:
            verts = _cell_vertices(b, perm, k)
            if verts is not None:
                yield Cell(b, perm, verts, k)


def _labelled(cell: Cell, label: Callable[[Vertex], int]) -> Cell:
    return Cell(cell.base, cell.perm, cell.vertices, cell.k, tuple(label(v) for v in cell.vertices))


def fully_labelled_cells(grid: SimplexGrid, label: Callable[[Vertex], int], lo=None, hi=None):
    full = set(range(grid.m))
    for cell in kuhn_cells(grid, lo, hi):
        c = _labelled(cell, label)
        if set(c.labels) == full:
            yield c


def market_labeller(
    inst: MarketInstance, grid: SimplexGrid, smoothing: float = 0.0
) -> Callable[[Vertex], int]:
    cache: dict[Vertex, int] = {}

    def label(v: Vertex) -> int:
        if v not in cache:
            cache[v] = expensive_label(inst, grid.price(v), smoothing)
        return cache[v]

    return label


def find_fully_labeled(inst: MarketInstance, grid: SimplexGrid, label=None) -> Cell:
    """First fully labelled cell in scan order (guaranteed to exist)."""
    if grid.m != inst.m:
        raise ValueError(f"grid has m={grid.m}, market has m={inst.m}")
    label = label or market_labeller(inst, grid)
    cell = next(fully_labelled_cells(grid, label), None)
    assert cell is not None, "no fully labelled cell; the labelling is not a Sperner labelling"
    return cell


def count_fully_labeled(grid: SimplexGrid, label: Callable[[Vertex], int]) -> int:
    return sum(1 for _ in fully_labelled_cells(grid, label))


def _widest_radius(d: int) -> int:
    return int((WINDOW_LIMIT ** (1.0 / d) - 2) // 2)


def market_cells(inst: MarketInstance, k: int, smoothing: float = 0.0, lo=None, hi=None) -> list[Cell]:
    """Fully labelled cells of the market labelling, vectorised.

    Same cells, labels and order as :func:`fully_labelled_cells` with
    :func:`market_labeller`, computed by labelling the whole box of vertices
    at once.
    """
    m, d = inst.m, inst.m - 1
    if d == 0:
        return [Cell((), (), ((k,),), k, (0,))]
    lo = [0] * d if lo is None else [max(0, c) for c in lo]
    hi = [k - 1] * d if hi is None else [min(k - 1, c) for c in hi]
    nb = [hi[t] - lo[t] + 1 for t in range(d)]
    if min(nb) <= 0:
        return []
    axes = [np.arange(lo[t], hi[t] + 2) for t in range(d)]
    z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    full_z = np.concatenate([np.zeros((len(z), 1), int), z, np.full((len(z), 1), k)], axis=1)
    a = np.diff(full_z, axis=1)
    valid = (a >= 0).all(axis=1)
    labels = np.full(len(z), -1)
    idx = np.flatnonzero(valid)
    for start in range(0, len(idx), _LABEL_BATCH):
        part = idx[start : start + _LABEL_BATCH]
        labels[part] = _label_rows(inst, a[part] / k, smoothing)
    labels = labels.reshape([n + 1 for n in nb])

    found = []
    want = (1 << m) - 1
    for pi, perm in enumerate(itertools.permutations(range(d))):
        offset = [0] * d
        seen = np.zeros(nb, dtype=np.int64)
        ok = np.ones(nb, dtype=bool)
        for step in range(d + 1):
            lab = labels[tuple(slice(o, o + n) for o, n in zip(offset, nb))]
            ok &= lab >= 0
            seen |= np.left_shift(1, np.maximum(lab, 0))
            if step < d:
                offset[perm[step]] += 1
        for b in np.argwhere(ok & (seen == want)):
            found.append((tuple(int(b[t]) + lo[t] for t in range(d)), pi, perm))
    found.sort()
    out = []
    for base, _, perm in found:
        verts = _cell_vertices(base, perm, k)
        labs = tuple(int(_label_rows(inst, np.asarray([v]) / k, smoothing)[0]) for v in verts)
        out.append(Cell(base, perm, verts, k, labs))
    return out


def clearing_gap(inst: MarketInstance, prices, smoothing: float = 0.0) -> float:
    """Largest deviation of aggregate demand from unit supply."""
    return float(np.abs(aggregate_demand(inst, prices, smoothing) - 1.0).max())


def flow_deficit(inst: MarketInstance, prices, rel_tol: float) -> float:
    """Budget that cannot be routed to bang-per-buck maximizers at ``prices``.

    Uses the set-valued demand: goods within ``rel_tol`` (relative) of a
    buyer's best ratio count as tied. Zero at equilibrium prices.
    """
    p = np.asarray(prices, dtype=float)
    if np.any(p <= 0):
        return math.inf
    total = inst.budgets.sum()
    net = build_equilibrium_network(inst, p / p.dot(inst.capacities) * total, rel_tol)
    return float(total - max_flow(net).value)


def _closest(inst, cells, tau, rel_tol) -> Optional[Cell]:
    """Cell whose barycenter looks most like an equilibrium.

    Ranked by :func:`flow_deficit` with ties up to ``rel_tol``, then by the
    smoothed clearing gap, then by scan order. The smoothed gap alone is a
    poor guide: it is steep across tie-breaking directions and flat along
    the income direction, so tiny label noise hides large price errors.
    """
    best, best_key = None, (math.inf, math.inf)
    for c in cells:
        bary = c.barycenter()
        key = (flow_deficit(inst, bary, rel_tol), clearing_gap(inst, bary, tau))
        if key < best_key:
            best, best_key = c, key
    return best


def refine_clearing_prices(
    inst: MarketInstance,
    k0: int = 2,
    target_diameter: float = 1e-4,
    smoothing: Callable[[int, float], float] | float | None = default_smoothing,
) -> SpernerResult:
    """Double the grid resolution until the fully labelled cell is small enough.

    Labels come from logit-smoothed demand whose temperature shrinks with the
    cell size (see :func:`default_smoothing`). The search stops at the first
    round whose cell has diameter at most ``target_diameter`` and whose
    barycenter moved by at most ``target_diameter`` (max norm) since the
    previous round; the barycenter is returned. When a round has several
    fully labelled cells, the one whose barycenter comes closest to an
    equilibrium by the flow test wins (see :func:`_closest`).

    Rounds scan the whole simplex while it has at most ``SCAN_LIMIT``
    vertices. Later rounds scan a box around the previous cell (scaled to the
    new grid) sized by how far the barycenter moved last round, doubling the
    box until a fully labelled cell turns up.
    """
    _require_normalized(inst)
    if k0 < 1:
        raise ValueError("k0 must be >= 1")
    if not target_diameter > 0:
        raise ValueError("target_diameter must be positive")
    m, d = inst.m, inst.m - 1
    if m == 1:
        cell = Cell((), (), ((k0,),), k0, (0,))
        return SpernerResult(np.ones(1), k0, 0.0, [RoundTrace(k0, cell, 0.0, np.ones(1), "global")])

    history: list[RoundTrace] = []
    k = k0
    prev: Optional[Cell] = None
    drift = math.inf
    while True:
        if k > MAX_RESOLUTION:
            raise ResolutionOverflowError(f"resolution {k} exceeds {MAX_RESOLUTION}")
        p_ref = 1.0 / m if prev is None else float(prev.barycenter().min())
        tau = float(smoothing(k, p_ref)) if callable(smoothing) else float(smoothing or 0.0)
        # ties a cell barycenter cannot resolve: the smoothing bias plus the cell span
        rel_tol = min(0.5, 4.0 * tau + 2.0 * math.sqrt(2.0) / k / max(p_ref, 1.0 / k))
        if prev is None or (k + 1) ** d <= SCAN_LIMIT:
            cell = _closest(inst, market_cells(inst, k, tau), tau, rel_tol)
            scanned = "global"
        else:
            centre = [2 * c for c in prev.base]
            radius = k if math.isinf(drift) else 2 + math.ceil(d * drift * k)
            widest = _widest_radius(d)
            while True:
                radius = min(radius, widest)
                lo = [c - radius for c in centre]
                hi = [c + 1 + radius for c in centre]
                cell = _closest(inst, market_cells(inst, k, tau, lo, hi), tau, rel_tol)
                scanned = f"window{radius}"
                if cell is not None or radius >= k:
                    break
                if radius == widest:
                    raise ScanLimitError(f"no fully labelled cell within {radius} steps at k={k}")
                radius *= 2
        assert cell is not None, "no fully labelled cell; the labelling is not a Sperner labelling"
        diam = cell.diameter()
        history.append(RoundTrace(k, cell, diam, cell.barycenter(), scanned))
        drift = math.inf if prev is None else float(np.abs(cell.barycenter() - prev.barycenter()).max())
        if diam <= target_diameter and drift <= target_diameter:
            return SpernerResult(cell.barycenter(), k, diam, history)
        prev = cell
        k *= 2
