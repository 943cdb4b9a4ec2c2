"""Sequential distributed MPC for periodic cooperation of multi-agent systems."""
from .agent import AgentModel, CooperationReference, check_constraints, reference_maps, validate_admissible
from .cooperation import CooperationCostSpec, Graph, eval_combined_cost, eval_global_cost, eval_pair_cost
from .coordinator import FleetState, Simulation, add_agent, drop_agent, initialize, run, step
from .diagnostics import (SimTrace, feasibility_report, lyapunov_value, monotonicity_violations,
                          periodicity_residual, sync_error)
from .local_mpc import InfeasibleInitialization, LocalInfeasible, candidate_shift, solve_local_problem
from .qp import QpProblem, QpSettings, QpSolver, solve_qp
from .scenario import Scenario, ScenarioError, parse_scenario
from .trajectory import PeriodicTrajectory, shift, shifted_distance

__version__ = "0.1.0"

__all__ = [
    "AgentModel", "CooperationReference", "check_constraints", "reference_maps", "validate_admissible",
    "CooperationCostSpec", "Graph", "eval_combined_cost", "eval_global_cost", "eval_pair_cost",
    "FleetState", "Simulation", "add_agent", "drop_agent", "initialize", "run", "step",
    "SimTrace", "feasibility_report", "lyapunov_value", "monotonicity_violations", "periodicity_residual",
    "sync_error", "InfeasibleInitialization", "LocalInfeasible", "candidate_shift", "solve_local_problem",
    "QpProblem", "QpSettings", "QpSolver", "solve_qp", "Scenario", "ScenarioError", "parse_scenario",
    "PeriodicTrajectory", "shift", "shifted_distance",
]
