"""Particle descent for minimum-dispersion control of SDE ensembles."""

from mindisp.costs import (CostFunction, MomentIndex, central_moment_cost, doubled_model, pairwise_dispersion_cost,
                           product_model, spike_cost, squared_distance_cost, trace_covariance)
from mindisp.descent import DescentConfig, DescentReport, EnsembleControl, ks_synthesize, run_descent
from mindisp.errors import (ConfigError, ControlSpaceError, DescentAborted, GridError, IntegrationBlowupError,
                            MinDispError, UnsupportedControlStructureError)
from mindisp.hamiltonian import ControlSpace
from mindisp.models import ThetaParams, theta_model
from mindisp.sde_core import ModelDefinition, NoiseStream, TimeGrid

__all__ = [
    "CostFunction", "MomentIndex", "central_moment_cost", "doubled_model", "pairwise_dispersion_cost",
    "product_model", "spike_cost", "squared_distance_cost", "trace_covariance",
    "DescentConfig", "DescentReport", "EnsembleControl", "ks_synthesize", "run_descent",
    "ConfigError", "ControlSpaceError", "DescentAborted", "GridError", "IntegrationBlowupError",
    "MinDispError", "UnsupportedControlStructureError",
    "ControlSpace", "ThetaParams", "theta_model", "ModelDefinition", "NoiseStream", "TimeGrid",
]
