"""Assign threshold-rule experts to sequential binary decisions, optionally under disparate-impact bands."""

from .domain import BenefitConvention, CostParam, DecisionCase, Expert, FairThresholds
from .matching import AssignmentGraph, Matching, build_graph, max_weight_matching
from .fairmatch import BandConstraint, Infeasible, compute_bands, solve_constrained
from .belief import BeliefSet, ThresholdBelief
from .simulate import PolicyKind, SyntheticConfig, adversarial_instance, run_simulation

__version__ = "0.1.0"
