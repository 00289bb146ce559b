"""Extended Kalman filtering on Stiefel manifolds with projected-normal measurements."""
from . import matcore, stats, stiefel
from .config import TOL, Tolerances, tolerances
from .exceptions import (
    ConvergenceError,
    CutLocusError,
    FilterStepError,
    LogMapError,
    LogMapNoConvergence,
    NotFullRankError,
    NotOnManifoldError,
    NotSymmetricError,
    NotTangentError,
    ShapeError,
    StiefelError,
    UnreliableEstimateError,
    VarianceError,
)
from .filter import (
    FilterState,
    StiefelEKF,
    SystemModel,
    gain_recursion,
    predict,
    run,
    run_batch,
    update,
)
from .stats import (
    FrechetMean,
    IsotropicNormal,
    ProjectedNormal,
    eta_hat,
    eta_hat_inv,
    frechet_mean,
    intrinsic_scalar_variance_mc,
    max_scalar_variance_mc,
    max_scalar_variance_sphere,
)
from .stiefel import Stiefel, check_stiefel, check_tangent

__version__ = "0.1.0"

__all__ = [
    "matcore",
    "stats",
    "stiefel",
    "TOL",
    "Tolerances",
    "tolerances",
    "ConvergenceError",
    "CutLocusError",
    "FilterStepError",
    "LogMapError",
    "LogMapNoConvergence",
    "NotFullRankError",
    "NotOnManifoldError",
    "NotSymmetricError",
    "NotTangentError",
    "ShapeError",
    "StiefelError",
    "UnreliableEstimateError",
    "VarianceError",
    "FilterState",
    "StiefelEKF",
    "SystemModel",
    "gain_recursion",
    "predict",
    "run",
    "run_batch",
    "update",
    "FrechetMean",
    "IsotropicNormal",
    "ProjectedNormal",
    "eta_hat",
    "eta_hat_inv",
    "frechet_mean",
    "intrinsic_scalar_variance_mc",
    "max_scalar_variance_mc",
    "max_scalar_variance_sphere",
    "Stiefel",
    "check_stiefel",
    "check_tangent",
]
