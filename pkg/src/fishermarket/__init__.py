"""Linear Fisher markets: equilibrium solver, certificates and exploratory tools."""

from .ceei import (
    CeeiResult,
    DiscreteAllocation,
    ceei_exists_bruteforce,
    check_ceei_witness,
    epsilon_clearing,
)
from .eg import KktReport, SolverConfig, bang_per_buck, demand_set, eg_objective, kkt_verify, solve_eg
from .flow import build_equilibrium_network, max_flow, verify_equilibrium
from .io import load_instance, load_report, save_instance, save_report
from .market import (
    EquilibriumReport,
    MarketError,
    MarketInstance,
    clearing_residuals,
    fisher_feasible,
    is_clearing,
    linear_utility,
    matching_feasible,
    normalize,
    validate_market,
    welfare,
)
from .snob import (
    SnobMarket,
    brute_force_snob_optimum,
    corner_theorem_check,
    snob_clearing_search,
    snob_objective,
    snob_share_utility,
    snob_utility,
)
from .sperner import (
    SimplexGrid,
    aggregate_demand,
    expensive_label,
    find_fully_labeled,
    kuhn_cells,
    refine_clearing_prices,
)

__version__ = "0.1.0"
