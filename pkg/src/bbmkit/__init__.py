"""Numerics for branching Brownian motion with a compactly supported branching rate.

Spectral engine (critical intensity, growth exponent, ground state,
resolvents), limit-moment recursions, an exact Monte Carlo simulator and a
finite-difference oracle for the moment hierarchy.
"""

__version__ = "0.1.0"

from .errors import ConvergenceError, DomainError, ValidationError
from .potential import Potential, PotentialError, constant_field, eval_v, make_potential
from .greenfn import GreenKernel, green_kernel, heat_kernel, radial_green_apply
from .quadrature import QuadGrid, build_grid
from .spectral import (DiscretizedOperator, GroundState, Resolvent, assemble_K, beta_critical,
                       ground_state, lambda0, principal_eigen, principal_mu, resolvent_apply)
from .moments import (MomentTable, limit_moments_sub, raw_count_moments, stirling2,
                      subcritical_f, supercritical_f, xi_moments)
from .sim import (EnsembleReport, SimConfig, advance_particle, empirical_moments,
                  estimate_growth, martingale_check, run_ensemble, run_replica)
from .pde import PdeProblem, decay_exponent, solve_rho_bar
from ._accel import get_backend, set_backend

__all__ = [
    "__version__",
    "ConvergenceError", "DomainError", "ValidationError",
    "Potential", "PotentialError", "constant_field", "eval_v", "make_potential",
    "GreenKernel", "green_kernel", "heat_kernel", "radial_green_apply",
    "QuadGrid", "build_grid",
    "DiscretizedOperator", "GroundState", "Resolvent", "assemble_K", "beta_critical",
    "ground_state", "lambda0", "principal_eigen", "principal_mu", "resolvent_apply",
    "MomentTable", "limit_moments_sub", "raw_count_moments", "stirling2",
    "subcritical_f", "supercritical_f", "xi_moments",
    "EnsembleReport", "SimConfig", "advance_particle", "empirical_moments",
    "estimate_growth", "martingale_check", "run_ensemble", "run_replica",
    "PdeProblem", "decay_exponent", "solve_rho_bar",
    "get_backend", "set_backend",
]
