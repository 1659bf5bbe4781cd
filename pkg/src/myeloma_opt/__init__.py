"""Regimen optimisation for a multiple-myeloma / immune-system ODE model
under pomalidomide, dexamethasone and elotuzumab."""
from .dynamics import (
    ModelParameters,
    PatientState,
    PharmacodynamicsParameters,
    ValidationError,
    emax,
    rhs_controlled,
    rhs_uncontrolled,
)
from .integrator import IntegratorSettings, Trajectory, simulate, steady_state_check
from .objective import ObjectiveValue, ObjectiveWeights, build_weights, evaluate
from .regimens import Constant, DoseGrid, PiecewiseConstant, Sampled, enumerate_grid, pc_approximate
from .scenario import Scenario, SolverSettings

__version__ = "0.1.0"
