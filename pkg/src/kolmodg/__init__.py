"""Space-time discontinuous Galerkin method for the Kolmogorov equation
u_t - u_xx + x u_y = f, with a verification laboratory that certifies the
scheme's long-time stability structure at the matrix level."""

from .mesh import Domain, Mesh, build_rect_mesh, classify, regularity
from .polyspace import (DgSpace, InverseConstants, SlabSpace,
                        compute_inverse_constants, make_quadrature)
from .coeffs import CoeffSet, build_coeffs, spectral_bounds
from .assembly import SlabForms, SpaceTimeForms, SpatialForms
from .march import DecayTrace, TimeGrid, evaluate_solution, march, project_initial
from .hypolab import (Setup, check_fulldiscrete_coercivity, check_semi_positivity,
                      compute_infsup, decay_experiment, estimate_kappa,
                      manufactured_convergence, verify_slab_energy_identity,
                      verify_uw_identity)

__all__ = [
    "Domain", "Mesh", "build_rect_mesh", "classify", "regularity",
    "DgSpace", "SlabSpace", "InverseConstants", "compute_inverse_constants",
    "make_quadrature", "CoeffSet", "build_coeffs", "spectral_bounds",
    "SpatialForms", "SlabForms", "SpaceTimeForms",
    "TimeGrid", "DecayTrace", "march", "project_initial", "evaluate_solution",
    "Setup", "verify_uw_identity", "verify_slab_energy_identity",
    "check_semi_positivity", "check_fulldiscrete_coercivity",
    "estimate_kappa", "compute_infsup", "decay_experiment",
    "manufactured_convergence",
]
