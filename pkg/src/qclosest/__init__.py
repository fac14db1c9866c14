"""Simulation and verification toolkit for q-closest alignment dynamics.

Modules: :mod:`kernel` (mollifiers and the ball-mass function),
:mod:`radius` (perception radius), :mod:`dynamics` (fuzzy system),
:mod:`classical` (sharp q-closest system), :mod:`transport` (empirical
measures and exact Wasserstein distances), :mod:`experiments` (drivers),
:mod:`scenario` and :mod:`cli`.
"""

__version__ = "0.1.0"

from .classical import ClassicalModel, CommWeight, TieRule, neighbor_set, simulate_classical
from .dynamics import FuzzyModel, PhaseState, TrajectoryRecord, integrate, simulate
from .geometry import DomainGeometry
from .kernel import BallMassKernel, MollifierSpec, ball_mass, evaluate_phi, radial_cdf
from .radius import RadiusProblem, TargetExceedsTotalMass, aggregate_mass, solve_radius
from .scenario import ParseError, Scenario, ValidationError, parse_scenario, serialize
from .transport import EmpiricalMeasure, pushforward, w1, w2

__all__ = [
    "BallMassKernel",
    "ClassicalModel",
    "CommWeight",
    "DomainGeometry",
    "EmpiricalMeasure",
    "FuzzyModel",
    "MollifierSpec",
    "ParseError",
    "PhaseState",
    "RadiusProblem",
    "Scenario",
    "TargetExceedsTotalMass",
    "TieRule",
    "TrajectoryRecord",
    "ValidationError",
    "aggregate_mass",
    "ball_mass",
    "evaluate_phi",
    "integrate",
    "neighbor_set",
    "parse_scenario",
    "pushforward",
    "radial_cdf",
    "serialize",
    "simulate",
    "simulate_classical",
    "solve_radius",
    "w1",
    "w2",
]
