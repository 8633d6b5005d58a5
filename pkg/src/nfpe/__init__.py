"""Degenerate nonlinear Fokker-Planck flows on truncated grids.

Builds the L1 mild-solution semigroup by eps-regularized resolvent
continuation, checks its structural contracts (contraction, probability
invariance, semigroup law, H^{-1} uniqueness functional) and simulates the
associated density-dependent SDE.
"""

__version__ = "0.1.0"

from .coefficients import (
    CoefficientSet,
    RegularizedCoefficients,
    ValidationReport,
    eval_b_star,
    load_coefficients_csv,
    make_model,
    regularize,
    validate_hypotheses,
)
from .diagnostics import (
    ErrorCurve,
    UniquenessReport,
    barenblatt_oracle,
    compare_l1,
    h_eps_functional,
    heat_oracle,
    uniqueness_gap,
)
from .grid import (
    Field,
    FieldNorms,
    GridSpec,
    divergence_upwind,
    helmholtz_inverse,
    l1_distance,
    laplacian,
    mollify_field,
    norms,
)
from .mckean import (
    EnsembleTrajectory,
    ParticleEnsemble,
    SdeConfig,
    diffusion_coefficient,
    empirical_density,
    marginal_discrepancy,
    self_consistent_simulate,
    simulate_linearized,
)
from .resolvent import (
    ResolventConfig,
    ResolventSolution,
    resolvent,
    resolvent_identity_check,
    solve_regularized,
)
from .semigroup import (
    ConvergenceReport,
    Trajectory,
    exponential_formula_study,
    mild_solution,
    semigroup_law_check,
    step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
