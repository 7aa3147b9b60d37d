"""Shared-control teleoperation simulator: the operator steers, an
adaptive cruise controller that understands steering caps the speed."""

from .controller import (AccController, AccOutput, OperatorCommand,
                         compute_command, fallback_command)
from .scenario import Scenario, ScenarioError, list_bundled, load_scenario, resolve_scenario
from .sim import Plant, SimLog, plant_step, run_scenario, summarize, write_run
from .tree import ControllerConfig, Obstacle, TreeResult, plan_tree
from .vehicle import ControlInput, VehicleParams, VehicleState, euler_step
from .velocity import VelocityProblem, VelocitySolution, VelocityWeights, solve

__version__ = "0.1.0"

__all__ = [
    "AccController", "AccOutput", "OperatorCommand", "compute_command",
    "fallback_command", "Scenario", "ScenarioError", "list_bundled",
    "load_scenario", "resolve_scenario", "Plant", "SimLog", "plant_step",
    "run_scenario", "summarize", "write_run", "Obstacle", "TreeResult",
    "plan_tree", "ControllerConfig", "ControlInput", "VehicleParams",
    "VehicleState", "euler_step", "VelocityProblem", "VelocitySolution",
    "VelocityWeights", "solve", "__version__",
]
