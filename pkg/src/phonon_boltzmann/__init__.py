"""Phonon Boltzmann equation: kinetic solver and microscopic lattice workbench."""
from .collision import (MomentumGrid, WignerState, CollisionKernel, build_kernel_1d,
                        default_epsilon, evaluate_collision, evaluate_collision_3d_mollified,
                        evaluate_collision_nls, load_or_build_kernel)
from .dispersion import (DispersionSpec, build_custom_dispersion, fpu_chain, nls_quadratic,
                         optical_nearest_neighbor, sample_merger_manifold,
                         scan_merger_kinematics, solve_pair_kinematics)
from .invariants import (InvariantCandidate, fit_invariant, pair_invariant_residual,
                         merger_invariant_residual, solve_stationary_parameters,
                         stationary_from_invariant)
from .kinetic import (PhaseSpaceState, duhamel_second_order, entropy, entropy_production,
                      equilibrium_wigner, free_transport_step, solve_homogeneous,
                      solve_inhomogeneous, step_homogeneous)

__version__ = "0.1.0"
