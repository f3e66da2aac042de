"""Sampling-based model-predictive trajectory planner with learned noise distributions."""

from .costs import CostWeights, EllipseParams, LocalPath
from .dynamics import ControlInput, ModelParams, VehicleState
from .mppi import PlannerConfig, RunLog, plan_step, run_receding_horizon, shift_warm_start
from .sampling import SamplerConfig, SamplerKind
from .scenario import Scenario, TrafficVehicle, build_dynamic_scenario, build_static_scenario

__all__ = [
    "ControlInput",
    "CostWeights",
    "EllipseParams",
    "LocalPath",
    "ModelParams",
    "PlannerConfig",
    "RunLog",
    "SamplerConfig",
    "SamplerKind",
    "Scenario",
    "TrafficVehicle",
    "VehicleState",
    "build_dynamic_scenario",
    "build_static_scenario",
    "plan_step",
    "run_receding_horizon",
    "shift_warm_start",
]

__version__ = "0.1.0"
