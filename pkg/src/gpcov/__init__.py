"""Distributed coverage control with online, time-decayed Gaussian-process
estimation of the density."""

from .geometry import Environment, SensingGeometry, VoronoiCell, cell_mass_centroid, limited_voronoi_cell
from .gp import DecayParams, GpModel, GpPosterior, Hyperparams, HyperparamBounds, Sample
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .experiment import demo_1d, emit, run, sweep

__all__ = [
    "DecayParams",
    "Environment",
    "GpModel",
    "GpPosterior",
    "HyperparamBounds",
    "Hyperparams",
    "Sample",
    "Scenario",
    "ScenarioError",
    "SensingGeometry",
    "VoronoiCell",
    "cell_mass_centroid",
    "demo_1d",
    "emit",
    "limited_voronoi_cell",
    "load_scenario",
    "parse_scenario",
    "run",
    "sweep",
]
