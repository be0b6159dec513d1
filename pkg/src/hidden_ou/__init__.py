"""Parameter estimation for a partially observed Ornstein-Uhlenbeck system.

The observed process ``X`` integrates a hidden Ornstein-Uhlenbeck state ``Y``
plus white noise::

    dX = a Y dt + sigma dW,    dY = -f Y dt + b dV,    Y_0 ~ N(0, d2).

One of ``f``, ``b``, ``a`` (or the pairs ``(f, b)``, ``(f, a)``) is unknown.
The package provides exact simulation, the Kalman-Bucy filter with its
parameter derivatives, moment-based preliminary estimators, one-step and
two-step MLE-processes, independent numerical oracles and a Monte Carlo
harness.
"""

from .model import (
    CASES,
    SCALAR_CASES,
    VECTOR_CASES,
    ParamSpec,
    SystemParams,
    fisher,
    gamma_stationary,
    gamma_transient,
    increment_ratio,
    invert_increment_ratio,
    invert_phi,
    phi,
    r_of,
    xi,
)
from .simulate import SamplePath, SimConfig, make_rng, sigma2_hat, simulate
from .filtering import (
    AdaptiveTrajectory,
    FilterInstability,
    FilterTrajectory,
    adaptive_system,
    recurrent_estimator,
    riccati_ode,
    run_filter,
)
from .prelim import PrelimResult, learning_size, prelim_1d, prelim_2d, stat_R, stat_S
from .mle import (
    EstimatorTrajectory,
    ZetaTrajectory,
    grid_mle,
    log_likelihood,
    one_step_process,
    one_step_vector,
    two_step_process,
    zeta_trajectory,
)
from .oracle import (
    OracleReport,
    fisher_matrix_numeric,
    fisher_mc_oracle,
    lyapunov_fisher_oracle,
    lyapunov_information_matrix,
    quad_phi_oracle,
    quad_xi_oracle,
)
from .harness import (
    CheckSpec,
    ExperimentConfig,
    MCReport,
    covariance_over_tau,
    normality_check,
    run_experiment,
)

__version__ = "0.1.0"
