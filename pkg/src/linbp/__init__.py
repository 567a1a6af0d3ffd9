"""Linearized belief propagation for cooperative spectrum sensing."""

from .blind import AdaptationConfig, adaptive_linear_bp, calibrate_network, calibrate_threshold
from .bp import BpVariant, boxplus, bp_iterate, learn_couplings, optimal_eap
from .fusion import (
    deflection,
    detection_prob,
    estimate_conditional_stats,
    maximize_deflection,
    optimize_network,
    threshold_for_alpha,
)
from .graph import FactorGraph, GraphError, build_graph, chain_graph, degree_stats, set_coupling
from .linear import (
    DivergenceError,
    FusionWeights,
    NoFixedPointError,
    check_contraction,
    coefficient_from_coupling,
    convergence_bound,
    fixed_point_weights,
    linear_iterate,
    scale_weights,
)
from .radio import Scenario, occupancy_chain, default_scenario, sense_window, simulate_occupancy, tau0

__all__ = [
    "AdaptationConfig", "BpVariant", "DivergenceError", "FactorGraph", "FusionWeights",
    "GraphError", "NoFixedPointError", "Scenario", "adaptive_linear_bp", "boxplus",
    "bp_iterate", "build_graph", "calibrate_network", "calibrate_threshold", "chain_graph",
    "check_contraction", "coefficient_from_coupling", "convergence_bound", "degree_stats",
    "deflection", "detection_prob", "estimate_conditional_stats", "fixed_point_weights",
    "learn_couplings", "linear_iterate", "maximize_deflection", "occupancy_chain",
    "optimal_eap", "optimize_network", "default_scenario", "scale_weights", "sense_window",
    "set_coupling", "simulate_occupancy", "tau0", "threshold_for_alpha",
]
