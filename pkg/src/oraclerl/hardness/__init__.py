"""OLIVE, its 3-SAT gadget and the counterexamples for decoupled learning rules."""
from .barriers import (Barrier, BackupResult, NeedleTrace, backup_failure_probability, backup_failure_rate,
                       bellman_backup, build_backup_chain, build_needle_env, build_rare_reward_env,
                       needle_constraint, needle_explorer, rare_reward_table, sample_threshold, sqloss)
from .olive import (ConstraintData, OliveProblem, OliveSolution, average_bellman_error, exact_constraint,
                    grid_value_class, olive_opt, olive_run, sampled_constraint)
from .sat import (SatFormula, SatMdp, SearchBudgetExceeded, adversarial_olive_trace, brute_force_sat,
                  olive_sat_constraints, parse_dimacs, random_formula, sat_decision_via_olive, sat_to_mdp)

__all__ = [
    "Barrier", "BackupResult", "NeedleTrace", "backup_failure_probability", "backup_failure_rate",
    "bellman_backup", "build_backup_chain", "build_needle_env", "build_rare_reward_env", "needle_constraint",
    "needle_explorer", "rare_reward_table", "sample_threshold", "sqloss",
    "ConstraintData", "OliveProblem", "OliveSolution", "average_bellman_error", "exact_constraint",
    "grid_value_class", "olive_opt", "olive_run", "sampled_constraint",
    "SatFormula", "SatMdp", "SearchBudgetExceeded", "adversarial_olive_trace", "brute_force_sat",
    "olive_sat_constraints", "parse_dimacs", "random_formula", "sat_decision_via_olive", "sat_to_mdp",
]
