"""Bilevel loss-discrepancy control for multi-task optimization.

Library surface: numerical primitives (:mod:`taskbalance.core`), analytic
task suites (:mod:`taskbalance.suites`), the penalized bilevel objective
(:mod:`taskbalance.objective`), training loops (:mod:`taskbalance.solvers`),
evaluation metrics (:mod:`taskbalance.metrics`), and the experiment harness
(:mod:`taskbalance.harness`) driven by the ``taskbalance`` CLI.
"""

from .core import (
    GAMMA_CHECK,
    GAMMA_TRAIN,
    EvaluationError,
    InvalidInputError,
    finite_diff_grad,
    project_simplex,
    soft_abs,
    soft_abs_grad,
    softmax,
    softmax_jacobian,
)
from .metrics import delta_m, grad_cosine_matrix, loss_stats, norm_ratio, pareto_residual
from .objective import (
    BilevelConfig,
    ConfigurationError,
    UpperLevelConfig,
    lower_value_and_grads,
    penalty_value,
    stationarity_residual,
    upper_value_and_grads,
)
from .solvers import (
    DivergenceError,
    RunConfig,
    Stepper,
    TrajectoryRecord,
    inner_z_loop,
    ldc_double_step,
    ldc_single_step,
    ls_step,
    mgda_step,
    min_norm_weights,
    run,
)
from .suites import (
    NormalizationState,
    TaskSuite,
    capture_baseline,
    fresh_normalization,
    get_suite,
    normalize,
    quad_suite,
    random_quad_suite,
    scaled_suite,
    toy2_eval,
    toy2_suite,
)

__version__ = "0.1.0"
