"""Additive kriging: GP regression with additive kernels and relaxed likelihood maximization."""

from .bench import (
    GFunctionSpec,
    g_function,
    g_main_effect,
    lhs_maximin,
    q2,
    run_gfunction_benchmark,
    run_paths_benchmark,
    sample_gp_path,
    sobol_index,
)
from .estimate import (
    Bounds,
    EstimationResult,
    EstimationTrace,
    HyperParams,
    additivity_ratio,
    default_bounds,
    estimate_rlm,
    estimate_ulm,
    neg_log_likelihood,
    nll_gradient,
    optimize_local,
)
from .gp import (
    CholeskyFailure,
    Dataset,
    DegeneracyReport,
    FittedGP,
    centered_effect,
    detect_degenerate_design,
    fit_gp,
    predict_mean,
    predict_var,
    sub_model,
)
from .kernels import (
    AdditiveKernel,
    UnivariateKernel,
    cov_matrix,
    cross_cov,
    double_integral_univariate,
    eval_kernel,
    eval_univariate,
    grad_cov_matrix,
    integral_univariate,
    kernel_from_json,
    kernel_to_json,
    make_kernel,
)

__version__ = "0.1.0"
