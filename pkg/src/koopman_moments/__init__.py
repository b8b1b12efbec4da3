"""Lifted linear predictors for nonlinear maps and moment analysis of their
multi-step residuals."""

from .dataset import (
    DataMatrices,
    TrajectoryEnsemble,
    assemble,
    build_ensemble,
    sample_initial_states,
)
from .dictionary import Dictionary, monomial_dictionary
from .dynamics import (
    DiscreteSystem,
    OdeSampledSystem,
    duffing_system,
    identity_system,
    polynomial_map_system,
    rollout,
)
from .errors import (
    ConfigError,
    DivergenceError,
    HorizonError,
    HypothesisError,
    NumericalError,
    RankError,
)
from .moments import (
    MomentReport,
    empirical_moments,
    local_error_samples,
    recursion_check_mean,
    recursion_check_variance,
    residual_samples,
    sigma_approximation_gap,
)
from .predictors import (
    Method,
    Predictor,
    QrSplit,
    fit_edmd,
    fit_edmd_aggregated,
    fit_unbiased,
    predict,
    qr_split,
)

__version__ = "0.1.0"
