import numpy as np
from hypothesis import strategies as st

from fishermarket.market import validate_market

unit = st.floats(min_value=1e-3, max_value=1.0, allow_nan=False)


@st.composite
def markets(draw, max_n=4, max_m=4, positive=False, normalized=False):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(1, max_m))
    vals = unit if positive else st.one_of(st.just(0.0), unit)
    v = np.array(draw(st.lists(st.lists(vals, min_size=m, max_size=m), min_size=n, max_size=n)))
    # every good needs somebody who wants it, and every buyer wants something
    for j in range(m):
        if not np.any(v[:, j] > 0):
            v[draw(st.integers(0, n - 1)), j] = draw(unit)
    for i in range(n):
        if not np.any(v[i] > 0):
            v[i, draw(st.integers(0, m - 1))] = draw(unit)
    B = np.array(draw(st.lists(unit, min_size=n, max_size=n)))
    C = np.ones(m) if normalized else np.array(draw(st.lists(unit, min_size=m, max_size=m)))
    if normalized:
        B = B / B.sum()
    return validate_market({"valuations": v, "budgets": B, "capacities": C})


@st.composite
def allocations_for(draw, inst):
    cells = st.floats(min_value=0.0, max_value=2.0, allow_nan=False)
    x = draw(st.lists(st.lists(cells, min_size=inst.m, max_size=inst.m), min_size=inst.n, max_size=inst.n))
    return np.array(x, dtype=float)


def random_market(rng, n, m, normalized=False):
    """v in (0, 1], B in (0, 1], C = 1."""
    v = 1.0 - rng.uniform(0.0, 1.0, (n, m))
    B = 1.0 - rng.uniform(0.0, 1.0, n)
    if normalized:
        B = B / B.sum()
    return validate_market({"valuations": v, "budgets": B, "capacities": np.ones(m)})
