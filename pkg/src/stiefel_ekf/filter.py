"""Extended Kalman filter with Stiefel-valued measurements.

State model: ``dX_t = A X_t dt + nu dB_t`` on n x k matrices (``A`` skew),
measurements ``z_m`` in St(n, k) with isotropic noise of variance ``xi2``.
The filter tracks a mean on St(n, k) and one scalar variance, kept in two
coordinates: the ambient (normal) variance ``v2`` and the intrinsic variance
``P = eta_hat(v2)``.

One step after elapsed time ``t``::

    F        = expm(t A)
    mean_p   = F mean
    v2_p     = v2 + t nu2;          P_p = eta_hat(v2_p)
    y        = log_{mean_p}(z)
    K        = v2_p / (v2_p + xi2)
    mean     = exp_{mean_p}(K y);   P = (1 - K) P_p;   v2 = eta_hat_inv(P)
"""
from __future__ import annotations

import dataclasses
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import FilterStepError, ShapeError, VarianceError
from .matcore import matrix_exp, transpose
from .stats import _eta, _eta_inv, eta_hat, eta_hat_inv
from .stiefel import (
    LOG_OK,
    Stiefel,
    canonical_norm,
    check_stiefel,
    exp_map,
    log_with_status,
    projection,
)

__all__ = [
    "SystemModel",
    "FilterState",
    "Prediction",
    "StepReport",
    "predict",
    "update",
    "run",
    "gain_recursion",
    "diagnostics",
    "run_batch",
    "BatchResult",
    "StiefelEKF",
]


@dataclasses.dataclass(frozen=True)
class SystemModel:
    manifold: Stiefel
    xi2: float
    nu2: float = 0.0
    drift: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.xi2 > 0:
            raise VarianceError("measurement variance xi2 must be positive")
        if not self.nu2 >= 0:
            raise VarianceError("process variance nu2 must be nonnegative")
        n = self.manifold.n
        A = np.zeros((n, n)) if self.drift is None else np.asarray(self.drift, dtype=float)
        if A.shape != (n, n):
            raise ShapeError(f"drift must be {n} x {n}, got {A.shape}")
        if np.linalg.norm(A + A.T) > 1e-10:
            raise ValueError("drift must be skew-symmetric")
        object.__setattr__(self, "drift", A)
        object.__setattr__(self, "xi2", float(self.xi2))
        object.__setattr__(self, "nu2", float(self.nu2))

    @property
    def is_constant(self):
        return self.nu2 == 0.0 and not np.any(self.drift)


@dataclasses.dataclass(frozen=True)
class FilterState:
    mean: np.ndarray
    ambient_var: float
    intrinsic_var: float
    step_index: int = 0
    last_gain: Optional[float] = None

    @classmethod
    def initial(cls, mean, variance, maxvar):
        mean = check_stiefel(np.asarray(mean, dtype=float))
        if not variance > 0:
            raise VarianceError("prior variance must be positive")
        return cls(mean, float(variance), eta_hat(variance, maxvar))


class Prediction(NamedTuple):
    mean: np.ndarray
    ambient_var: float
    intrinsic_var: float
    step_index: int


@dataclasses.dataclass(frozen=True)
class StepReport:
    mean_pred: np.ndarray
    P_pred: float
    gain: float
    innovation_norm: float
    state: FilterState


def predict(state, model, t=0.0):
    """Propagate the state by elapsed time ``t``."""
    if t < 0:
        raise ValueError("elapsed time must be nonnegative")
    mean = state.mean
    if t > 0 and np.any(model.drift):
        mean = check_stiefel(matrix_exp(t * model.drift) @ mean)
    v2 = state.ambient_var + t * model.nu2
    return Prediction(mean, v2, eta_hat(v2, model.manifold.maxvar), state.step_index)


def update(pred, z, model):
    """Measurement update. Returns ``(state, report)``."""
    maxvar = model.manifold.maxvar
    y, status, _ = log_with_status(pred.mean, z)
    if status != LOG_OK:
        raise FilterStepError(f"log map failed at measurement {pred.step_index}", pred.step_index)
    v2 = pred.ambient_var
    K = v2 / (v2 + model.xi2)
    mean = check_stiefel(exp_map(pred.mean, K * y))
    P = (1.0 - K) * pred.intrinsic_var
    state = FilterState(mean, eta_hat_inv(P, maxvar), P, pred.step_index + 1, K)
    report = StepReport(pred.mean, pred.intrinsic_var, K,
                        float(canonical_norm(pred.mean, y)), state)
    return state, report


def run(initial, model, measurements):
    """Fold predict/update over ``[(t_m, z_m), ...]`` with increasing times.

    ``initial`` is an :class:`IsotropicNormal` whose mean lies on St(n, k).
    The elapsed time for step m is ``t_m - t_{m-1}`` (with ``t_0 = 0``).
    """
    state = FilterState.initial(initial.mean, initial.variance, model.manifold.maxvar)
    reports = []
    t_prev = 0.0
    for t, z in measurements:
        if t <= t_prev and reports:
            raise ValueError("measurement times must be strictly increasing")
        pred = predict(state, model, t - t_prev)
        state, rep = update(pred, z, model)
        reports.append(rep)
        t_prev = t
    return reports


def gain_recursion(sigma0_2, xi2, maxvar, num_steps):
    """Scalar bookkeeping of the constant model, independent of the data.

    ``K_i = v_{i-1} / (v_{i-1} + xi2)``, ``P_i = (1 - K_i) eta_hat(v_{i-1})``,
    ``v_i = eta_hat_inv(P_i)``. Returns ``(gains, ambient_vars, P)`` arrays of
    length ``num_steps``.
    """
    v2 = float(sigma0_2)
    xi2 = float(xi2)
    maxvar = float(maxvar)
    eta_hat(v2, maxvar)  # validates the inputs
    if not xi2 > 0:
        raise VarianceError("measurement variance xi2 must be positive")
    gains, v2s, Ps = [], [], []
    for _ in range(num_steps):
        K = v2 / (v2 + xi2)
        P = (1.0 - K) * _eta(v2, maxvar)
        v2 = _eta_inv(P, maxvar)  # P < eta(v2) < maxvar, so this is defined
        gains.append(K)
        v2s.append(v2)
        Ps.append(P)
    return np.array(gains), np.array(v2s), np.array(Ps)


def diagnostics(reports, truth):
    """Per-step ``P^K_m`` and ``dist^2(mean_m, truth) / dim``.

    Steps where the distance cannot be computed are NaN.
    """
    P = np.array([r.state.intrinsic_var for r in reports])
    if not reports:
        return P, np.empty(0)
    means = np.stack([r.state.mean for r in reports])
    n, k = means.shape[-2:]
    dim = Stiefel(n, k, maxvar=1.0).dim
    V, status, _ = log_with_status(means, truth)
    d2 = canonical_norm(means, V) ** 2 / dim
    return P, np.where(status == LOG_OK, d2, np.nan)


class BatchResult(NamedTuple):
    PK: np.ndarray  # (N,)
    gain: np.ndarray  # (N,)
    innov_norm: np.ndarray  # (R, N), NaN after a failure
    dist2_norm: np.ndarray  # (R, N), NaN where missing
    failed_at: np.ndarray  # (R,), -1 when the run completed
    final_mean: np.ndarray  # (R, n, k)


def run_batch(mean0, sigma0_2, model, Z, truth=None):
    """Run independent constant-model filters in lockstep.

    ``Z`` has shape ``(R, N, n, k)`` (R replicates, N unit-spaced steps).
    Numerically this is :func:`run` applied to each replicate; the scalar
    bookkeeping is shared because it does not depend on the data. A
    replicate whose log map fails stops there and is reported through
    ``failed_at``.
    """
    if not model.is_constant:
        raise ValueError("run_batch supports the constant model only")
    Z = np.asarray(Z, dtype=float)
    R, N, n, k = Z.shape
    dim = model.manifold.dim
    mean = np.broadcast_to(check_stiefel(np.asarray(mean0, dtype=float)), (R, n, k)).copy()
    gains, _, PK = gain_recursion(sigma0_2, model.xi2, model.manifold.maxvar, N)
    innov = np.full((R, N), np.nan)
    dist2 = np.full((R, N), np.nan)
    failed_at = np.full(R, -1)
    alive = np.ones(R, dtype=bool)
    for m in range(N):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        y, status, _ = log_with_status(mean[idx], Z[idx, m])
        bad = status != LOG_OK
        failed_at[idx[bad]] = m
        alive[idx[bad]] = False
        idx, y = idx[~bad], y[~bad]
        innov[idx, m] = canonical_norm(mean[idx], y)
        new = exp_map(mean[idx], gains[m] * y)
        err = np.linalg.norm(transpose(new) @ new - np.eye(k), axis=(-2, -1))
        if np.any(err > 1e-8):
            new = projection(new)
        mean[idx] = new
        if truth is not None:
            T = np.asarray(truth, dtype=float)
            T = T[idx] if T.ndim == 3 else T
            V, st, _ = log_with_status(mean[idx], T)
            dist2[idx, m] = np.where(st == LOG_OK, canonical_norm(mean[idx], V) ** 2 / dim, np.nan)
    return BatchResult(PK, gains, innov, dist2, failed_at, mean)


class StiefelEKF(BaseEstimator):
    """Extended Kalman filter on St(n, k) with an sklearn-style interface.

    Parameters
    ----------
    sigma0_2 : float
        Prior (ambient, per-entry) variance.
    xi2 : float
        Measurement noise variance.
    nu2 : float
        Process noise variance per unit time.
    drift : array (n, n) or None
        Skew-symmetric drift ``A``; None means zero.
    maxvar : float or None
        Maximal scalar variance of the manifold; None resolves it from the
        closed form (spheres) or the shipped Monte Carlo table.
    mean0 : array (n, k) or None
        Prior mean on St(n, k); defaults to ``I_{n,k}``.

    ``fit(Z, times)`` filters a sequence of measurements; ``partial_fit``
    continues from the current state; ``predict(t)`` returns the mean
    propagated by elapsed time ``t``.
    """

    def __init__(self, sigma0_2=1.0, xi2=0.1, nu2=0.0, drift=None, maxvar=None, mean0=None):
        self.sigma0_2 = sigma0_2
        self.xi2 = xi2
        self.nu2 = nu2
        self.drift = drift
        self.maxvar = maxvar
        self.mean0 = mean0

    def _check_measurements(self, Z, times):
        Z = check_stiefel(np.asarray(Z, dtype=float))
        if Z.ndim == 2:
            Z = Z[None]
        if Z.ndim != 3:
            raise ShapeError("expected an (m, n, k) array of measurements")
        if times is None:
            times = np.arange(1, Z.shape[0] + 1, dtype=float)
        times = np.asarray(times, dtype=float)
        if times.shape != (Z.shape[0],):
            raise ShapeError("need one time per measurement")
        return Z, times

    def _init_state(self, n, k):
        self.manifold_ = Stiefel(n, k, maxvar=self.maxvar)
        self.model_ = SystemModel(self.manifold_, self.xi2, self.nu2, self.drift)
        mean0 = np.eye(n, k) if self.mean0 is None else self.mean0
        self.state_ = FilterState.initial(mean0, self.sigma0_2, self.manifold_.maxvar)
        self.time_ = 0.0
        self.reports_ = []

    def fit(self, Z, y=None, times=None):
        Z, times = self._check_measurements(Z, times)
        self._init_state(*Z.shape[1:])
        return self._consume(Z, times)

    def partial_fit(self, Z, y=None, times=None):
        if not hasattr(self, "state_"):
            return self.fit(Z, times=times)
        offset = self.time_ if times is None else 0.0
        Z, times = self._check_measurements(Z, times)
        if Z.shape[1:] != self.manifold_.shape:
            raise ShapeError("measurement shape changed between calls")
        return self._consume(Z, offset + times)

    def _consume(self, Z, times):
        for t, z in zip(times, Z):
            if t <= self.time_ and self.reports_:
                raise ValueError("measurement times must be strictly increasing")
            pred = predict(self.state_, self.model_, t - self.time_)
            self.state_, rep = update(pred, z, self.model_)
            self.reports_.append(rep)
            self.time_ = float(t)
        self.n_features_in_ = self.manifold_.n * self.manifold_.k
        return self

    @property
    def mean_(self):
        check_is_fitted(self, "state_")
        return self.state_.mean

    @property
    def intrinsic_var_(self):
        check_is_fitted(self, "state_")
        return self.state_.intrinsic_var

    @property
    def ambient_var_(self):
        check_is_fitted(self, "state_")
        return self.state_.ambient_var

    @property
    def gains_(self):
        check_is_fitted(self, "state_")
        return np.array([r.gain for r in self.reports_])

    def predict(self, t=0.0):
        check_is_fitted(self, "state_")
        return predict(self.state_, self.model_, t).mean

    def diagnostics(self, truth):
        check_is_fitted(self, "state_")
        return diagnostics(self.reports_, truth)
