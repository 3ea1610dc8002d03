"""Reconstruction of small normal perturbations of an inaccessible Robin
boundary from voltage data on the accessible boundary, via a linearized
boundary-to-data map, discretized Tikhonov regularization, and an
a-posteriori balancing-principle parameter choice."""

from .balancing import (
    BalancingConfig,
    BalancingGridError,
    BalancingSelectionError,
    BalancingTrace,
    adaptive_alpha,
    alpha_grid,
    select_alpha_plus,
    select_from_alpha_of_k,
    threshold,
)
from .experiments import (
    ExperimentReport,
    ExperimentSpec,
    PipelineError,
    add_noise,
    default_balancing,
    example1_theta,
    example2_theta,
    example3_theta,
    example4_setup,
    run_experiment,
)
from .fem import (
    BoundaryField,
    NodalField,
    RobinOperator,
    assemble_flux_load,
    assemble_interior,
    assemble_robin,
    boundary_l2_product,
    solve_mixed_bvp,
    solve_sensitivity,
    tangential_derivative,
)
from .geometry import (
    DegenerateMeshError,
    DomainKind,
    DomainSpec,
    GeometryError,
    Mesh,
    ThetaField,
    build_half_annulus_mesh,
    build_rectangle_mesh,
    curvature,
    deform_mesh,
    mesh_fingerprint,
    write_mesh_listing,
)
from .inversion import (
    GalerkinSystem,
    Reconstruction,
    ThetaBasis,
    assemble_operator,
    assemble_rhs,
    discretization_gap,
    h10_gram,
    h10_norm,
    make_hat_basis,
    make_sine_basis,
    solve_tikhonov,
)

__version__ = "0.1.0"
