"""Adaptive tuning of a trusted resolution logic for UAV collision avoidance.

The package models a two-aircraft horizontal encounter, a rule-based
resolution logic parameterized by a separation distance ``D``, and an
offline approximate-dynamic-programming solver that picks ``D`` per state
through a post-decision value function.

Modules
-------
geometry   vehicle kinematics and angle helpers
states     encounter states and vectorized state batches
trl        closest-approach geometry, resolution logic, heading controller
mdp        reward, transition and post-decision maps
features   grid-interpolation features and the linear value architecture
adp        projected value iteration and post-decision weight fitting
policies   control laws, episode simulation and evaluation
config     flat key/value configuration files
io         manifests, weight/scenario files, CSV exports
cli        command-line driver (``adaptive-trl``)
"""
from .adp import SolverConfig, solve
from .geometry import VehicleParams, VehicleState
from .mdp import ScenarioConfig
from .states import EncounterState, PostDecisionState

__all__ = [
    "EncounterState",
    "PostDecisionState",
    "ScenarioConfig",
    "SolverConfig",
    "VehicleParams",
    "VehicleState",
    "solve",
]
__version__ = "0.1.0"
