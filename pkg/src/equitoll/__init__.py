"""Multi-class tolling equilibria, revenue refunds and inequality measures."""

from .network import (Edge, LatencyFn, Path, Scenario, UserGroup, builtin, dump_scenario,
                      enumerate_paths, load_scenario, travel_time, validate_scenario)
from .assignment import (EquilibriumSolution, FlowPattern, TollVector, beckmann_potential,
                         solve_exogenous_equilibrium, solve_parallel_affine_closed_form,
                         total_revenue, total_system_cost)
from .inequality import IncomeDistribution, ex_post_income, gini, mean_income
from .cprr import (MaxMinPolicy, max_min_transfers, optimal_cprr_pipeline, pareto_refund,
                   transfers_to_refunds)
from .verify import (verify_cost_identity, verify_endogenous_equilibrium,
                     verify_exogenous_equilibrium)

__version__ = "0.1.0"
