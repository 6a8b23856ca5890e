"""Max-flow certificate for equilibrium prices.

For prices ``p`` the network is ``s -> good j`` (capacity ``p_j C_j``),
``good j -> buyer i`` (unbounded, only when ``j`` maximizes buyer ``i``'s
bang-per-buck) and ``buyer i -> t`` (capacity ``B_i``). Prices are an
equilibrium exactly when both the source cut and the sink cut are minimum,
i.e. the max flow saturates every arc out of ``s`` and into ``t``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from .eg import TIE_RTOL, bang_per_buck
from .market import DEFAULT_TOL, MarketError, MarketInstance

SOURCE = "s"
SINK = "t"


def good_node(j: int) -> str:
    return f"g{j}"


def buyer_node(i: int) -> str:
    return f"b{i}"


class ZeroPriceError(MarketError):
    """Bang-per-buck is undefined for a good with price zero."""


@dataclass
class FlowNetwork:
    nodes: list[Hashable]
    arcs: list[tuple[Hashable, Hashable, float]]
    source: Hashable = SOURCE
    sink: Hashable = SINK
    infinity: float = float("inf")

    def demand_arcs(self) -> list[tuple[Hashable, Hashable]]:
        return [(a, b) for a, b, _ in self.arcs if a != self.source and b != self.sink]

    def dump(self) -> str:
        """Plain-text listing: ``node <name>`` lines then ``arc <tail> <head> <capacity>``.

        Unbounded arcs print ``inf``.
        """
        lines = [f"node {v}" for v in self.nodes]
        for a, b, c in self.arcs:
            cap = "inf" if c >= self.infinity else repr(float(c))
            lines.append(f"arc {a} {b} {cap}")
        return "\n".join(lines) + "\n"


@dataclass
class FlowResult:
    value: float
    flows: dict[tuple[Hashable, Hashable], float]
    source_side: frozenset
    cut_capacity: float = 0.0

    def flow(self, tail, head) -> float:
        return self.flows.get((tail, head), 0.0)


@dataclass
class FlowVerdict:
    ok: bool
    reason: str
    flow: Optional[FlowResult] = None
    allocation: Optional[np.ndarray] = field(default=None, repr=False)
    network: Optional[FlowNetwork] = field(default=None, repr=False)


def build_equilibrium_network(
    inst: MarketInstance, prices, rel_tol: float = TIE_RTOL
) -> FlowNetwork:
    p = np.asarray(prices, dtype=float)
    if p.shape != (inst.m,):
        raise MarketError(f"price vector shape {p.shape}, expected ({inst.m},)")
    if np.any(p <= 0):
        raise ZeroPriceError(f"good {int(np.argmax(p <= 0))} has nonpositive price")
    B, C = inst.budgets, inst.capacities
    infinity = 1.0 + float(B.sum()) + float(np.dot(p, C))

    nodes: list[Hashable] = [SOURCE]
    nodes += [good_node(j) for j in range(inst.m)]
    nodes += [buyer_node(i) for i in range(inst.n)]
    nodes.append(SINK)

    arcs = [(SOURCE, good_node(j), float(p[j] * C[j])) for j in range(inst.m)]
    r = bang_per_buck(inst.valuations, p)
    for j in range(inst.m):
        for i in range(inst.n):
            best = r[i].max()
            if r[i, j] > 0 and r[i, j] >= best * (1 - rel_tol):
                arcs.append((good_node(j), buyer_node(i), infinity))
    arcs += [(buyer_node(i), SINK, float(B[i])) for i in range(inst.n)]
    return FlowNetwork(nodes, arcs, infinity=infinity)


def max_flow(net: FlowNetwork, eps: float = 0.0) -> FlowResult:
    """Edmonds-Karp (shortest augmenting paths, BFS in arc insertion order).

    Residual capacities at or below ``eps`` are treated as saturated.
    """
    index = {v: k for k, v in enumerate(net.nodes)}
    size = len(net.nodes)
    cap = [dict() for _ in range(size)]
    order: list[list[int]] = [[] for _ in range(size)]
    for a, b, c in net.arcs:
        u, w = index[a], index[b]
        if w not in cap[u]:
            order[u].append(w)
            cap[u][w] = 0.0
        if u not in cap[w]:
            order[w].append(u)
            cap[w][u] = 0.0
        cap[u][w] += float(c)
    residual = [dict(row) for row in cap]
    s, t = index[net.source], index[net.sink]

    value = 0.0
    while True:
        parent = [-1] * size
        parent[s] = s
        queue = deque([s])
        while queue and parent[t] < 0:
            u = queue.popleft()
            for w in order[u]:
                if parent[w] < 0 and residual[u][w] > eps:
                    parent[w] = u
                    queue.append(w)
        if parent[t] < 0:
            break
        push = float("inf")
        w = t
        while w != s:
            push = min(push, residual[parent[w]][w])
            w = parent[w]
        w = t
        while w != s:
            u = parent[w]
            residual[u][w] -= push
            residual[w][u] += push
            w = u
        value += push

    flows = {}
    for a, b, _ in net.arcs:
        u, w = index[a], index[b]
        f = cap[u][w] - residual[u][w]
        flows[(a, b)] = max(f, 0.0)

    # Nodes still reachable from s in the residual graph form a minimum cut.
    seen = {s}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for w in order[u]:
            if w not in seen and residual[u][w] > eps:
                seen.add(w)
                queue.append(w)
    source_side = frozenset(net.nodes[k] for k in seen)
    cut = sum(c for a, b, c in net.arcs if a in source_side and b not in source_side)
    return FlowResult(value, flows, source_side, cut)


def verify_equilibrium(
    inst: MarketInstance,
    prices,
    tol: float = DEFAULT_TOL,
    rel_tol: float = TIE_RTOL,
) -> FlowVerdict:
    """Certify ``prices`` via the min-cut characterization.

    On success ``verdict.allocation`` holds the equilibrium allocation read
    off the flow on good-to-buyer arcs.
    """
    p = np.asarray(prices, dtype=float)
    if p.shape != (inst.m,):
        raise MarketError(f"price vector shape {p.shape}, expected ({inst.m},)")
    if np.any(p <= 0):
        raise ZeroPriceError(f"good {int(np.argmax(p <= 0))} has nonpositive price")
    money = float(inst.budgets.sum())
    worth = float(np.dot(p, inst.capacities))
    if abs(worth - money) > tol:
        return FlowVerdict(False, f"price mass {worth!r} differs from total budget {money!r}")

    net = build_equilibrium_network(inst, p, rel_tol)
    res = max_flow(net)
    alloc = np.zeros((inst.n, inst.m))
    for j in range(inst.m):
        for i in range(inst.n):
            alloc[i, j] = res.flow(good_node(j), buyer_node(i)) / p[j]
    if res.value < money - tol:
        return FlowVerdict(
            False, f"max flow {res.value!r} short of total budget {money!r}", res, alloc, net
        )
    return FlowVerdict(True, "both trivial cuts are minimum", res, alloc, net)


def permuted(net: FlowNetwork, perm: Sequence[int]) -> FlowNetwork:
    """Same network with nodes and arcs re-inserted in another order."""
    nodes = [net.nodes[k] for k in perm]
    rank = {v: k for k, v in enumerate(nodes)}
    arcs = sorted(net.arcs, key=lambda a: (rank[a[0]], rank[a[1]]))
    return FlowNetwork(nodes, arcs, net.source, net.sink, net.infinity)
