import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fishermarket.eg import solve_eg
from fishermarket.market import MarketError, linear_utility, validate_market
from fishermarket.snob import (
    GridTooLargeError,
    SnobMarket,
    brute_force_snob_optimum,
    corner_theorem_check,
    grid_halfwidth,
    price_simplex,
    snob_clearing_search,
    snob_objective,
    snob_share_utility,
    snob_utilities,
    snob_utility,
    theorem_market,
)

from .strategies import allocations_for, markets, random_market


def one_good(alphas=(1.0, 1.0), budget=1.0):
    inst = validate_market({"valuations": [[1.0], [1.0]], "budgets": [budget, budget], "capacities": [1.0]})
    return SnobMarket(inst, alphas)


def test_share_utility_examples():
    assert snob_share_utility(np.eye(2), 0) == 1
    assert snob_share_utility([[0.5], [0.5]], 1) == 0.5
    # sole owner of two of three goods, the third unallocated
    assert snob_share_utility([[3.0, 0.2, 0.0], [0.0, 0.0, 0.0]], 0) == 2


def test_snob_utility_examples():
    snob = one_good()
    assert snob_utility(snob, [[1.0], [0.0]], 0) == 1
    assert snob_utility(snob, [[1.0], [0.0]], 1) == 0
    assert np.allclose(snob_utilities(snob, [[0.5], [0.5]]), [0.25, 0.25])
    assert snob_objective(snob, [[0.5], [0.5]]) == 0.5
    assert snob_objective(snob, [[0.0], [0.0]]) == 0


@pytest.mark.parametrize("x, y", [(1, 0), (0.3, 0.7), (0.5, 0.5), (0.2, 0.1), (2, 3)])
def test_objective_two_buyer_rewrite(x, y):
    assert snob_objective(one_good(), [[x], [y]]) == pytest.approx((x * x + y * y) / (x + y), rel=1e-12)


def test_by_capacity_variant():
    snob = one_good()
    half = [[0.5], [0.0]]
    # as written the lone holder owns the whole allocated amount
    assert snob_utility(snob, half, 0) == 0.5
    assert snob_utility(snob, half, 0, by_capacity=True) == 0.25


def test_alphas_validation():
    inst = one_good().market
    with pytest.raises(MarketError):
        SnobMarket(inst, [1.0])
    with pytest.raises(MarketError):
        SnobMarket(inst, [1.0, -0.5])
    with pytest.raises(MarketError):
        SnobMarket.from_instance(inst)
    with_alphas = validate_market(
        {"valuations": [[1.0], [1.0]], "budgets": [1, 1], "capacities": [1], "alphas": [0.5, 2]}
    )
    assert SnobMarket.from_instance(with_alphas).alphas.tolist() == [0.5, 2]


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_alpha_zero_is_linear(data):
    inst = data.draw(markets())
    x = data.draw(allocations_for(inst))
    snob = SnobMarket(inst, np.zeros(inst.n))
    for i in range(inst.n):
        assert snob_utility(snob, x, i) == pytest.approx(linear_utility(x[i], inst.valuations[i]), rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_alpha_continuity_at_zero(data):
    inst = data.draw(markets())
    x = data.draw(allocations_for(inst)) + 0.05
    snob = SnobMarket(inst, np.full(inst.n, 1e-6))
    for i in range(inst.n):
        assert abs(snob_utility(snob, x, i) - linear_utility(x[i], inst.valuations[i])) <= 1e-4


@settings(max_examples=60, deadline=None)
@given(
    own=st.floats(0.01, 5.0), rival=st.floats(0.0, 5.0), more=st.floats(0.01, 5.0),
    alpha=st.floats(0.01, 4.0), v=st.floats(0.01, 2.0),
)
def test_rival_holding_strictly_penalizes(own, rival, more, alpha, v):
    inst = validate_market({"valuations": [[v], [1.0]], "budgets": [1, 1], "capacities": [1]})
    snob = SnobMarket(inst, [alpha, 0.0])
    before = snob_utility(snob, [[own], [rival]], 0)
    after = snob_utility(snob, [[own], [rival + more]], 0)
    assert after < before


@settings(max_examples=60, deadline=None)
@given(data=st.data(), c=st.floats(1e-3, 1e3))
def test_share_utility_homogeneous(data, c):
    inst = data.draw(markets())
    x = data.draw(allocations_for(inst))
    for i in range(inst.n):
        assert snob_share_utility(c * x, i) == pytest.approx(snob_share_utility(x, i), rel=1e-9, abs=1e-12)


def test_brute_force_theorem_instance():
    opt = brute_force_snob_optimum(theorem_market(), [1.0], 101)
    assert opt.value == pytest.approx(1.0, abs=1e-12)
    assert opt.allocation.ravel().tolist() == [0.0, 1.0]
    assert sorted(x.ravel().tolist() for x in opt.maximizers) == [[0.0, 1.0], [1.0, 0.0]]


def test_brute_force_linear_any_full_split():
    opt = brute_force_snob_optimum(one_good((0.0, 0.0)), [1.0], 11)
    assert opt.value == pytest.approx(1.0)
    # every split of the whole unit is optimal: 11 grid points on x + y = 1
    assert len(opt.maximizers) == 11
    assert all(x.sum() == pytest.approx(1.0) for x in opt.maximizers)


def test_brute_force_two_goods_exclusive_ownership():
    inst = validate_market({"valuations": [[1, 1], [1, 1]], "budgets": [1, 1], "capacities": [1, 1]})
    opt = brute_force_snob_optimum(SnobMarket(inst, [1, 1]), [1, 1], 11)
    assert opt.value == pytest.approx(2.0)
    for x in opt.maximizers:
        # each good wholly owned by one buyer, each buyer owning one good
        assert sorted(np.count_nonzero(x, axis=0).tolist()) == [1, 1]
        assert np.allclose(np.sort(x.sum(axis=1)), [1, 1])
    assert [x.tolist() for x in opt.maximizers] == [[[0, 1], [1, 0]], [[1, 0], [0, 1]]]


def test_brute_force_respects_budgets():
    opt = brute_force_snob_optimum(one_good(budget=0.3), [1.0], 11)
    assert np.all(opt.allocation.sum(axis=1) <= 0.3 + 1e-12)
    assert opt.value == pytest.approx(0.3)


def test_brute_force_guards():
    with pytest.raises(GridTooLargeError):
        brute_force_snob_optimum(one_good(), [1.0], 10**5)
    with pytest.raises(ValueError):
        brute_force_snob_optimum(one_good(), [1.0], 1)
    with pytest.raises(MarketError):
        brute_force_snob_optimum(one_good(), [1.0, 1.0], 5)


@pytest.mark.parametrize("points", [11, 101, 1001])
def test_corner_theorem(points):
    v = corner_theorem_check(points)
    assert v.passed, v.reason
    assert abs(v.value - 1) <= 1e-9
    assert v.interior_maximizers == []


def test_half_budget_ties_interior_point():
    # (x^2 + y^2) / (x + y) is 0.5 at (0.5, 0), (0, 0.5) and (0.5, 0.5) alike,
    # so with budgets of 0.5 the axis optimum is not unique
    v = corner_theorem_check(11, budget=0.5)
    assert v.value == pytest.approx(0.5)
    got = sorted(x.ravel().tolist() for x in v.maximizers)
    assert got == [[0.0, 0.5], [0.5, 0.0], [0.5, 0.5]]
    assert not v.passed and "interior" in v.reason


def test_price_simplex():
    inst = validate_market({"valuations": [[1, 1]], "budgets": [2], "capacities": [1, 4]})
    grid = price_simplex(inst, 4)
    assert len(grid) == 5
    assert all(p @ inst.capacities == pytest.approx(2) for p in grid)
    assert np.allclose(grid[0], [0, 0.5])
    assert np.allclose(grid_halfwidth(inst, 4), [0.25, 0.0625])
    with pytest.raises(ValueError):
        price_simplex(inst, 0)


def test_search_empty_grid():
    assert snob_clearing_search(one_good(), []) == []


def test_search_guards():
    with pytest.raises(ValueError):
        snob_clearing_search(one_good(), 5, alloc_grid=1)
    two = validate_market({"valuations": [[1, 1], [1, 1]], "budgets": [1, 1], "capacities": [1, 1]})
    with pytest.raises(GridTooLargeError):
        snob_clearing_search(SnobMarket(two, [1, 1]), 10**4, alloc_grid=200)
    with pytest.raises(MarketError):
        snob_clearing_search(one_good(), [[1.0, 1.0]])


def test_search_theorem_instance_clears_at_full_money():
    # one good: the only price worth the money is 2, and any split clears it
    cands = snob_clearing_search(one_good(), 4)
    assert len(cands) == 1
    assert cands[0].prices.tolist() == [2.0]
    assert cands[0].residual == pytest.approx(0.0, abs=1e-12)


def test_search_sorted_by_residual():
    inst = validate_market({"valuations": [[2, 1], [1, 2]], "budgets": [1, 1], "capacities": [1, 1]})
    cands = snob_clearing_search(SnobMarket(inst, [0, 0]), 10, 11)
    keys = [(c.residual, c.distortion) for c in cands]
    assert keys == sorted(keys)
    assert np.allclose(cands[0].prices, [1, 1])
    assert cands[0].residual == 0 and cands[0].distortion == 0
    assert set(cands[0].to_payload()) >= {"prices", "allocation", "residual", "distortion"}


@pytest.mark.parametrize("seed", range(3))
def test_search_linear_reduction(seed):
    rng = np.random.default_rng(seed)
    inst = random_market(rng, 2, 2)
    r = 20
    best = snob_clearing_search(SnobMarket(inst, np.zeros(2)), r, 21)[0]
    step = inst.budgets.sum() / r / inst.capacities
    assert np.all(np.abs(best.prices - solve_eg(inst).prices) <= step)


def test_search_without_box_misses_linear_equilibrium():
    # equilibrium (1.5, 1.5), midway between points of the resolution-7 grid;
    # without the box neither neighbour makes buyer 2 content to split
    inst = validate_market({"valuations": [[1, 0], [1, 1]], "budgets": [1, 2], "capacities": [1, 1]})
    eg = solve_eg(inst).prices
    assert np.allclose(eg, [1.5, 1.5])
    step = 3 / 7
    boxed = snob_clearing_search(SnobMarket(inst, [0, 0]), 7, 21)[0]
    assert np.abs(boxed.prices - eg).max() <= step
    assert boxed.residual <= 0.05
    bare = snob_clearing_search(SnobMarket(inst, [0, 0]), 7, 21, halfwidth=0.0)[0]
    assert bare.residual > 0.3
