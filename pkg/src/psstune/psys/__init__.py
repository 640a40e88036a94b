"""Concrete power-system hybrid models: network, machines, builder, cases."""

from .builder import PowerSystemModel, StateLayout, build_hybrid_model, init_dynamic_states
from .cases import case_from_dict, load_case
from .machines import ExciterParams, GeneratorParams, PssParams, pss_dynamics
from .network import (
    Branch,
    Bus,
    FaultScenario,
    NetworkCase,
    PowerFlowResult,
    build_ybus,
    solve_power_flow,
)

__all__ = [
    "Branch",
    "Bus",
    "ExciterParams",
    "FaultScenario",
    "GeneratorParams",
    "NetworkCase",
    "PowerFlowResult",
    "PowerSystemModel",
    "PssParams",
    "StateLayout",
    "build_hybrid_model",
    "build_ybus",
    "case_from_dict",
    "init_dynamic_states",
    "load_case",
    "pss_dynamics",
    "solve_power_flow",
]
