"""Withdrawal-success optimization and simulation for closed pooled annuity funds.

A pool of same-aged members each contributes P at time 0 and withdraws a
scheduled amount every period while alive; a deceased member's share stays in
the fund. This package computes, by backward induction, the maximum
probability that a member completes the schedule until death over stock/bond
portfolio weight policies, extracts the optimal policy, and validates it by
forward Monte-Carlo simulation of the pooled fund.
"""

from .market import ReturnModel, DEFAULT_MU, DEFAULT_SIGMA
from .market_data import (MarketDataError, MarketSeries, fit_return_model,
                          load_market_csv, real_returns)
from .mortality import (TERMINAL_AGE, CohortMortality, LifeTableError,
                        MortalityTable, cohort, default_life_table_path,
                        load_default_life_table, load_life_table,
                        sample_deaths)
from .schedule import (FloorMatrix, WithdrawalPlan, compute_floors,
                       constant_plan, present_value_individual)
from .solver import (PolicyGrid, SolvedGrids, SolverConfig, SolverError,
                     ValueGrid, last_step_success_probability, load_grids,
                     required_contribution, risky_continuation_value,
                     save_grids, solve, solve_all_annuitants, terminal_value)
from .simulate import (SimConfig, SimResult, SimulationError,
                       check_liquidity_bound, simulate_all_annuitants,
                       simulate_liquidity_bound, simulate_success_probability,
                       trace_paths)

__version__ = "0.1.0"

__all__ = [
    "ReturnModel", "DEFAULT_MU", "DEFAULT_SIGMA",
    "MarketSeries", "MarketDataError", "load_market_csv", "real_returns",
    "fit_return_model",
    "MortalityTable", "CohortMortality", "LifeTableError", "TERMINAL_AGE",
    "load_life_table", "load_default_life_table", "default_life_table_path",
    "cohort", "sample_deaths",
    "WithdrawalPlan", "FloorMatrix", "constant_plan", "compute_floors",
    "present_value_individual",
    "SolverConfig", "SolverError", "ValueGrid", "PolicyGrid", "SolvedGrids",
    "solve", "solve_all_annuitants", "terminal_value",
    "risky_continuation_value", "last_step_success_probability",
    "required_contribution", "save_grids", "load_grids",
    "SimConfig", "SimResult", "SimulationError",
    "simulate_success_probability", "simulate_all_annuitants",
    "simulate_liquidity_bound", "check_liquidity_bound", "trace_paths",
    "__version__",
]
