"""Simultaneous stage sizing and ascent trajectory optimisation for multistage launch vehicles."""

from .baseline import BaselineResult, attribute_losses, solve_sequential
from .config import load_mission, load_vehicle, save_vehicle
from .dynamics import Phase, StageSpec, VehicleSpec, default_schedule, simulate
from .earth import EarthModel, GeodeticPoint, atmosphere_at, gravity_at
from .optimizer import IipBound, MissionSpec, Options, OptimizationResult, solve_simultaneous
from .outputs import derive_outputs, iip_predict, orbital_elements
from .staging import StagingProblem, optimal_staging, required_dv

__version__ = "0.1.0"

__all__ = [
    "BaselineResult", "EarthModel", "GeodeticPoint", "IipBound", "MissionSpec", "OptimizationResult",
    "Options", "Phase", "StageSpec", "StagingProblem", "VehicleSpec", "atmosphere_at", "attribute_losses",
    "default_schedule", "derive_outputs", "gravity_at", "iip_predict", "load_mission", "load_vehicle",
    "optimal_staging", "orbital_elements", "required_dv", "save_vehicle", "simulate", "solve_sequential",
    "solve_simultaneous",
]
