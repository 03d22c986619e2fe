"""splinetool: slope-constrained adaptive linear splines.

Fitting under second-order total-variation regularization with slope box
constraints, conversion of spline maps to (weakly) convex potentials and
proximal operators, and desk-scale iterative reconstruction built on them.
"""

from . import constraints, errors, fit, potentials, pwl, recon, serialize
from .constraints import (
    MonotonicityClass,
    SlopeBounds,
    apply_divided_difference,
    apply_right_inverse,
    classify,
    project_slopes,
)
from .fit import (
    FitProblem,
    FitResult,
    SamplingOperator,
    SolverConfig,
    build_sampling,
    fit as fit_spline,
    objective,
    oracle_fit,
    prune_knots,
)
from .potentials import (
    Convexity,
    PwQuadPotential,
    eval_potential,
    eval_potential_derivative,
    numeric_prox_oracle,
    potential_from_derivative,
    potential_from_prox,
    reweight_prox,
    scale_potential,
)
from .pwl import (
    Grid,
    NodalSpline,
    PwlCurve,
    ReluForm,
    canonical_interpolant,
    eval_basis,
    eval_curve,
    eval_spline,
    eval_spline_slope,
    from_relu_form,
    from_slopes,
    invert_monotone,
    lipschitz,
    make_grid,
    minimal_curve,
    slope_range,
    slopes,
    spline_curve,
    to_relu_form,
    tv2,
)
from .recon import (
    ChannelNonlinearity,
    FilterBank,
    InverseProblem,
    prox_grad_step,
    psnr,
    run_prox_grad,
    run_steepest_descent,
    steepest_descent_step,
    train_unrolled,
)

__version__ = "0.1.0"
