"""Incompressible miscible displacement with a velocity-dependent dispersion tensor.

Identity checks for the tensor and its velocity Jacobian, a cell-centred
finite-volume forward solver, the adjoint system, and projected gradient
descent for a zero-mean source control.
"""
from .errors import (CompatibilityError, ConfigError, FormatError, InvalidArgumentError,
                     IterationLimitError, MiscibleError, SingularVelocityError, StagnationError)
from .grid import Grid
from .tensor import (DispersionParams, eval_dispersion_tensor, eval_velocity_jacobian,
                     kron_apply_E, kron_apply_Ehat)
from .identities import IdentityReport, run_identity_suite
from .solver import FlowSolver, MediumFields, SolverOptions, StateTrajectory, run_forward
from .adjoint import AdjointTrajectory, solve_adjoint
from .optimize import (ControlProblem, ObjectiveSpec, OptimizationReport, OptimizeOptions,
                       gradient_check, optimize, project_admissible)

__version__ = "0.1.0"
