"""Entropic optimal transport on the flat torus and the round sphere.

The package solves the entropically regularized transport problem with
regularization 1/k by the scaling (Sinkhorn) iteration, applying the
kernel through FFT circular convolution on torus lattices and through
spherical harmonic transforms on equiangular sphere grids, with exact
log-domain backends as the reference at every scale. A finite-difference
solver for the parabolic Monge-Ampere flow provides an independent PDE
route to the same limiting potentials, and small-instance oracles (exact
circle transport, dense fixed points) pin the numbers down.
"""

from .measures import (
    DensityField,
    DiscreteMeasure,
    ManifoldPoint,
    check_density_property,
    discretize_sphere,
    discretize_torus,
    load_point_cloud,
)
from .parabolic import (
    ParabolicState,
    c_transform,
    check_quasiconvex,
    circle_ot_oracle,
    exp_convergence_fit,
    ma_residual,
    parabolic_step,
    solve_parabolic,
)
from .phase import local_density_error, shifted_lattice_check, stationary_phase_check
from .sinkhorn import (
    DenseApplicator,
    NumericalAbortError,
    Potential,
    SinkhornState,
    energy_diagnostics,
    entropic_cost,
    hilbert_distance,
    initial_state,
    marginal_errors,
    normalized_potentials,
    plan_entry,
    plan_row,
    rho_density,
    run_until,
    sinkhorn_step,
    softmin_update,
)
from .sphere import (
    SphereDenseApplicator,
    SphereKernelSpec,
    SphereSHTApplicator,
    SphericalGrid,
    antenna_height,
    antenna_kernel_apply,
    antenna_legendre_coeffs,
    assoc_legendre,
    reflector_map,
    sht_adjoint,
    sht_forward,
    sht_inverse,
)
from .torus import (
    FFTUnderflowError,
    TorusGrid,
    TorusKernelSpec,
    TorusLatticeApplicator,
    TorusPointsApplicator,
    torus_cost,
    torus_cost_matrix,
    torus_heat_kernel,
)

__version__ = "0.1.0"
