"""Monotone flow dynamics on gas pipeline networks.

Graph refinement, steady-state solves, lumped transient simulation, order
(monotonicity) checks between paired runs, and envelope feasibility tools.
"""
from .errors import MonoflowError
from .io import GasSpec, Network, load_envelope, load_network, load_scenario
from .monotone import OrderReport, check_order, jacobian_check, localize_first_crossing, verify_theorem3
from .netgraph import (
    CompatibilitySchedule,
    MetricGraph,
    RefinedGraph,
    Scenario,
    build_graph,
    lift_scenario,
    make_scenario,
    refine,
    restrict_scenario,
)
from .physics import gas_models, ideal_gas
from .robust import Envelope, certify_envelope, run_nmp, verify_corollary1
from .steady import aquarius_path, solve_steady, uniqueness_probe, verify_theorem1
from .transient import IntegratorOptions, Trajectory, assemble, integrate, simulate, steady_init

__version__ = "0.1.0"

__all__ = [
    "CompatibilitySchedule",
    "Envelope",
    "GasSpec",
    "IntegratorOptions",
    "MetricGraph",
    "MonoflowError",
    "Network",
    "OrderReport",
    "RefinedGraph",
    "Scenario",
    "Trajectory",
    "aquarius_path",
    "assemble",
    "build_graph",
    "certify_envelope",
    "check_order",
    "gas_models",
    "ideal_gas",
    "integrate",
    "jacobian_check",
    "lift_scenario",
    "load_envelope",
    "load_network",
    "load_scenario",
    "localize_first_crossing",
    "make_scenario",
    "refine",
    "restrict_scenario",
    "run_nmp",
    "simulate",
    "solve_steady",
    "steady_init",
    "uniqueness_probe",
    "verify_corollary1",
    "verify_theorem1",
    "verify_theorem3",
]
