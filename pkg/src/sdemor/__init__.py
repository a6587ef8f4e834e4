"""Reduction of high-dimensional linear stochastic asset-price models and
Bermudan option pricing on the reduced model."""

__version__ = "0.1.0"

from .linsys import (  # noqa: F401
    InitialExpansion,
    ReducedSystem,
    SystemCoefficients,
    build_bs_model,
    kronecker_matrix,
    lyapunov_apply,
    mean_square_stability,
    orth,
    petrov_galerkin_reduce,
)
from .covariance import (  # noqa: F401
    CovarianceTrajectory,
    GramianSet,
    convolution_integral,
    integrate_trajectory,
    solve_all_gramians,
    solve_covariance,
)
from .mor import (  # noqa: F401
    FixedPointOptions,
    HsvReport,
    ReductionDiagnostics,
    error_bound,
    fixed_point_identity_check,
    hankel_singular_values,
    limit_gramians,
    limit_optimality_residuals,
    optimality_residuals,
    stable_fixed_point,
    sylvester_fixed_point,
    terminal_covariance_error,
)
from .simulate import (  # noqa: F401
    CirParams,
    NoiseSpec,
    PathEnsemble,
    exact_gbm_paths,
    l2_error_estimate,
    mc_covariance,
    simulate_coupled,
    simulate_heston,
)
from .pricing import (  # noqa: F401
    BasisSpec,
    ExerciseSpec,
    PricingResult,
    longstaff_schwartz,
    pathwise_error_bound,
    payoff,
    polynomial_basis,
)
