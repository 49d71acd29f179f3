"""Preference-based planning over LTLf goals with weighted automata."""

from prefplan.formula import (
    Formula, Preference, dissatisfaction_score, optionality, parse_formula, parse_trace,
    prefer, satisfaction_degree_oracle,
)
from prefplan.ltlf import Dfa, build_dfa, ltlf_holds, minimize
from prefplan.mdp import GridConfig, LabeledMdp, gridworld, load_mdp, save_mdp, validate
from prefplan.planner import (
    Policy, ProductMdp, expected_dissatisfaction, extract_policy, policy_evaluate, product,
    satisfaction_probability, simulate, solve, value_iteration,
)
from prefplan.wdfa import (
    Wdfa, compile_formula, degree_via_wdfa, export_dot, is_empty, lift, max_trace_weight, max_weight,
    ordered_disjunction,
    prioritized_conjunction, run_weight,
)

__version__ = "0.1.0"
