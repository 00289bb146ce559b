"""Distributions on M_{n,k}(R) and St(n, k), and the scalar-variance maps.

Contents:

* isotropic matrix normals and projected normals,
* the maximal scalar variance (closed forms on spheres, Monte Carlo on
  St(n, k)) and the frozen table of Monte Carlo constants,
* the intrinsic scalar variance of a projected normal (Monte Carlo),
* the rational map ``eta_hat`` and its inverse used by the filter,
* the Fréchet mean and its estimator wrapper :class:`FrechetMean`.
"""
from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import TOL
from .exceptions import (
    ConvergenceError,
    LogMapError,
    NotFullRankError,
    ShapeError,
    UnreliableEstimateError,
    VarianceError,
)
from .matcore import skew, transpose
from .stiefel import (
    LOG_OK,
    canonical_inner,
    canonical_norm,
    check_stiefel,
    exp_map,
    geodesic_distance,
    log_with_status,
    manifold_dim,
    projection,
    sample_uniform,
)

DEFAULT_MAXVAR_SAMPLES = 100_000
DEFAULT_MAXVAR_SEED = 20250101
MC_CHUNK = 8192
MAX_FAILURE_FRACTION = 0.05


# -- distribution specs -------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class IsotropicNormal:
    """``N(mean, variance * I)`` on n x k matrices (per-entry variance)."""

    mean: np.ndarray
    variance: float
    allow_degenerate: bool = False  # variance == 0, for tests only

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 2:
            raise ShapeError(f"mean must be an n x k matrix, got shape {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean has non-finite entries")
        v = float(self.variance)
        if not (v > 0 or (self.allow_degenerate and v == 0)):
            raise VarianceError(f"variance must be positive, got {v}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", v)


@dataclasses.dataclass(frozen=True)
class ProjectedNormal:
    """Law of ``pr(mean + eps)`` with ``eps ~ N(0, variance * I)``."""

    mean: np.ndarray
    variance: float
    allow_degenerate: bool = False

    def __post_init__(self):
        mean = check_stiefel(np.asarray(self.mean, dtype=float))
        if mean.ndim != 2:
            raise ShapeError("mean must be a single Stiefel point")
        v = float(self.variance)
        if not (v > 0 or (self.allow_degenerate and v == 0)):
            raise VarianceError(f"variance must be positive, got {v}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", v)

    @property
    def shape(self):
        return self.mean.shape


def _size_tuple(size):
    if size is None:
        return ()
    return (int(size),) if np.isscalar(size) else tuple(size)


def sample_normal(law, size=None, rng=None):
    rng = np.random.default_rng(rng)
    shape = _size_tuple(size) + law.mean.shape
    return law.mean + math.sqrt(law.variance) * rng.standard_normal(shape)


def project_resampling(draw, size, rng):
    """``pr`` of ``draw(size, rng)`` redrawing rank-deficient items.

    Rank deficiency has probability zero for a Gaussian draw, so the loop
    almost never runs twice.
    """
    Z = draw(size, rng)
    while True:
        try:
            return projection(Z), Z
        except NotFullRankError:
            gram_min = np.linalg.eigvalsh(transpose(Z) @ Z)[..., 0]
            bad = gram_min <= TOL.rank
            if Z.ndim == 2:
                Z = draw(size, rng)
            else:
                Z[bad] = draw((int(bad.sum()),), rng)


def sample_projected_normal(law, size=None, rng=None):
    rng = np.random.default_rng(rng)
    shape = _size_tuple(size)
    sd = math.sqrt(law.variance)

    def draw(sz, g):
        return law.mean + sd * g.standard_normal(tuple(sz) + law.mean.shape)

    P, _ = project_resampling(draw, shape, rng)
    return P


# -- maximal scalar variance ----------------------------------------------------

def max_scalar_variance_sphere(n):
    """Maximal scalar variance of the unit sphere S^n (``n`` = sphere dimension).

    S^1: pi^2/3; even n: (pi^2 - 4 sum_{j=0}^{(n-2)/2} (2j+1)^-2) / (2n);
    odd n >= 3: (pi^2/3 - 2 sum_{j=1}^{(n-1)/2} (2j)^-2) / n.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"sphere dimension must be >= 1, got {n}")
    if n == 1:
        return math.pi**2 / 3.0
    if n % 2 == 0:
        s = math.fsum(1.0 / (2 * j + 1) ** 2 for j in range((n - 2) // 2 + 1))
        return (math.pi**2 - 4.0 * s) / (2.0 * n)
    s = math.fsum(1.0 / (2 * j) ** 2 for j in range(1, (n - 1) // 2 + 1))
    return (math.pi**2 / 3.0 - 2.0 * s) / n


class MCEstimate(NamedTuple):
    estimate: float
    std_error: float
    samples: int
    failures: int
    failure_fraction: float
    seed: object


def _chunk_rngs(rng, n_chunks):
    if isinstance(rng, np.random.Generator):
        return rng.spawn(n_chunks), None
    ss = np.random.SeedSequence(rng)
    return [np.random.default_rng(c) for c in ss.spawn(n_chunks)], ss.entropy


def _map_chunks(fn, rngs, sizes, n_jobs):
    if n_jobs == 1:
        return [fn(g, m) for g, m in zip(rngs, sizes)]
    with ThreadPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, rngs, sizes))


def _chunk_sizes(samples):
    full, rest = divmod(samples, MC_CHUNK)
    return [MC_CHUNK] * full + ([rest] if rest else [])


def _summarize(values, samples, seed, scale=1.0):
    ok = np.concatenate(values) if values else np.empty(0)
    failures = samples - ok.size
    frac = failures / samples
    if ok.size < 2:
        est = MCEstimate(math.nan, math.nan, samples, failures, frac, seed)
    else:
        mean = math.fsum(ok) / ok.size
        var = math.fsum((ok - mean) ** 2) / (ok.size - 1)
        est = MCEstimate(mean * scale, math.sqrt(var / ok.size) * scale,
                         samples, failures, frac, seed)
    if frac > MAX_FAILURE_FRACTION:
        raise UnreliableEstimateError(
            f"{failures} of {samples} log-map evaluations failed ({frac:.1%})", est)
    return est


def max_scalar_variance_mc(n, k, samples=DEFAULT_MAXVAR_SAMPLES, rng=None, n_jobs=1):
    """Monte Carlo estimate of the maximal scalar variance of St(n, k).

    ``E[dist^2(I_{n,k}, Y)] / dim`` with ``Y`` Haar-uniform; the integral does
    not depend on the base point because the metric is O(n)-invariant.
    Samples whose logarithm fails are excluded and counted; more than 5%
    failures raise :class:`UnreliableEstimateError`.

    Sampling is split into fixed-size chunks with spawned RNG streams, so
    the result does not depend on ``n_jobs``.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    dim = manifold_dim(n, k)
    if dim <= 0:
        raise ShapeError(f"St({n},{k}) has dimension 0")
    base = np.eye(n, k)
    sizes = _chunk_sizes(samples)
    rngs, entropy = _chunk_rngs(rng, len(sizes))

    def chunk(g, m):
        Y = sample_uniform(n, k, size=m, rng=g)
        d, status = geodesic_distance(base, Y, return_status=True)
        return d[status == LOG_OK] ** 2

    values = _map_chunks(chunk, rngs, sizes, n_jobs)
    seed = rng if isinstance(rng, (int, np.integer)) else entropy
    return _summarize(values, samples, seed, scale=1.0 / dim)


def _linearized_sq_norm(mu, eps):
    # canonical norm^2 of the first-order tangent image of eps at mu
    mte = transpose(mu) @ eps
    A = skew(mte)
    return (0.5 * np.sum(A * A, axis=(-2, -1))
            + np.sum(eps * eps, axis=(-2, -1)) - np.sum(mte * mte, axis=(-2, -1)))


def intrinsic_scalar_variance_mc(law, samples, rng=None, control_variate=False, n_jobs=1):
    """Monte Carlo estimate of ``E[dist^2(mu, pr(mu + eps))] / dim``.

    With ``control_variate`` the canonical norm of the linearized tangent
    displacement (whose mean is known exactly) is subtracted per sample;
    the estimator stays unbiased and its variance drops by orders of
    magnitude when the variance is small.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    mu = law.mean
    n, k = mu.shape
    dim = manifold_dim(n, k)
    v2 = law.variance
    sd = math.sqrt(v2)
    sizes = _chunk_sizes(samples)
    rngs, entropy = _chunk_rngs(rng, len(sizes))

    def chunk(g, m):
        def draw(sz, gg):
            return sd * gg.standard_normal(tuple(sz) + (n, k))

        P, E = project_resampling(lambda sz, gg: mu + draw(sz, gg), (m,), g)
        d, status = geodesic_distance(mu, P, return_status=True)
        ok = status == LOG_OK
        vals = d[ok] ** 2
        if control_variate:
            vals = vals - _linearized_sq_norm(mu, E[ok] - mu)
        return vals

    values = _map_chunks(chunk, rngs, sizes, n_jobs)
    seed = rng if isinstance(rng, (int, np.integer)) else entropy
    est = _summarize(values, samples, seed, scale=1.0 / dim)
    if control_variate:
        shift = v2 * ((n - k) * k + k * (k - 1) / 4.0) / dim
        est = est._replace(estimate=est.estimate + shift)
    return est


def linearized_variance_ratio(n, k):
    """Small-variance limit of ``eta(v^2) / v^2`` under the canonical metric.

    The skew block of a tangent vector carries half weight in the canonical
    metric, so the limit is ``((n-k)k + k(k-1)/4) / dim``; it equals 1 only
    for k = 1.
    """
    return ((n - k) * k + k * (k - 1) / 4.0) / manifold_dim(n, k)


# -- Pade map ----------------------------------------------------------------------

def _eta(v2, maxvar):
    return v2 * maxvar / (maxvar + v2)


def _eta_inv(P, maxvar):
    return P * maxvar / (maxvar - P)


def eta_hat(v2, maxvar):
    """``v2 * maxvar / (maxvar + v2)``: ambient variance -> intrinsic variance."""
    v2 = np.asarray(v2, dtype=float)
    if np.any(v2 < 0):
        raise VarianceError("eta_hat needs a nonnegative variance")
    if not maxvar > 0:
        raise VarianceError("maxvar must be positive")
    out = _eta(v2, maxvar)
    return float(out) if out.ndim == 0 else out


def eta_hat_inv(P, maxvar):
    """Inverse of :func:`eta_hat`, ``P * maxvar / (maxvar - P)`` on ``[0, maxvar)``."""
    P = np.asarray(P, dtype=float)
    if not maxvar > 0:
        raise VarianceError("maxvar must be positive")
    if np.any(P < 0):
        raise VarianceError("intrinsic variance must be nonnegative")
    if np.any(P >= maxvar):
        raise VarianceError("variance exceeds manifold maximum")
    out = _eta_inv(P, maxvar)
    return float(out) if out.ndim == 0 else out


# -- frozen Monte Carlo constants --------------------------------------------------

class MaxvarRecord(NamedTuple):
    manifold: str
    n: int
    k: int
    samples: int
    seed: int
    estimate: float
    std_error: float
    failure_fraction: float


TABLE_HEADER = "manifold n k samples seed estimate std_error failure_fraction"


def format_maxvar_record(rec):
    return (f"{rec.manifold} {rec.n} {rec.k} {rec.samples} {rec.seed} "
            f"{rec.estimate!r} {rec.std_error!r} {rec.failure_fraction!r}")


def parse_maxvar_table(text):
    table = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("manifold "):
            continue
        f = line.split()
        if len(f) != 8:
            raise ValueError(f"bad maxvar table line: {raw!r}")
        rec = MaxvarRecord(f[0], int(f[1]), int(f[2]), int(f[3]), int(f[4]),
                           float(f[5]), float(f[6]), float(f[7]))
        table[(rec.n, rec.k)] = rec
    return table


def load_maxvar_table(path=None):
    """Read the frozen table (``manifold n k samples seed estimate std_error
    failure_fraction``); defaults to the copy shipped with the package."""
    if path is None:
        text = resources.files("stiefel_ekf").joinpath("data/maxvar_table.txt").read_text()
    else:
        with open(os.fspath(path)) as fh:
            text = fh.read()
    return parse_maxvar_table(text)


# -- Fréchet mean -----------------------------------------------------------------

def _weighted_logs(p, points, w):
    V, status, _ = log_with_status(p, points)
    if np.any(status != LOG_OK):
        bad = np.flatnonzero(status != LOG_OK)
        raise LogMapError("Fréchet mean: log map failed", index=bad)
    return V, np.einsum("i,ijk->jk", w, V)


def _objective(p, points, w):
    V, _ = _weighted_logs(p, points, w)
    return 0.5 * float(np.dot(w, canonical_inner(p, V, V)))


def _medoid(points, w):
    costs = []
    for i in range(points.shape[0]):
        d, status = geodesic_distance(points[i], points, return_status=True)
        costs.append(np.inf if np.any(status != LOG_OK) else float(np.dot(w, d * d)))
    return points[int(np.argmin(costs))]


MEDOID_MAX_POINTS = 256


def frechet_mean(points, weights=None, init=None, *, return_info=False):
    """Weighted Fréchet mean by Riemannian gradient descent.

    Iterates ``p <- exp_p(tau * sum_i w_i log_p(y_i))`` with ``tau = 1``,
    halving ``tau`` while the objective increases, until the gradient norm
    is below ``TOL.frechet_grad``.

    The start point is the input minimizing the weighted sum of squared
    distances (quadratic cost, used up to ``MEDOID_MAX_POINTS`` points);
    larger inputs start from the projection of the Euclidean weighted mean.
    """
    points = check_stiefel(np.asarray(points, dtype=float))
    if points.ndim == 2:
        points = points[None]
    m = points.shape[0]
    if m == 0:
        raise ValueError("need at least one point")
    if weights is None:
        w = np.full(m, 1.0 / m)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (m,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("weights must be nonnegative, one per point, summing to 1")

    if init is not None:
        p = check_stiefel(np.asarray(init, dtype=float))
    elif m <= MEDOID_MAX_POINTS:
        p = _medoid(points, w)
    else:
        try:
            p = projection(np.einsum("i,ijk->jk", w, points))
        except NotFullRankError:
            p = _medoid(points[:MEDOID_MAX_POINTS], w[:MEDOID_MAX_POINTS] / w[:MEDOID_MAX_POINTS].sum())

    _, g = _weighted_logs(p, points, w)
    f = _objective(p, points, w)
    for it in range(TOL.frechet_max_iter + 1):
        gnorm = float(canonical_norm(p, g))
        if gnorm <= TOL.frechet_grad:
            break
        if it == TOL.frechet_max_iter:
            raise ConvergenceError(f"Fréchet mean: gradient norm {gnorm:.3g} after {it} iterations")
        tau = 1.0
        while True:
            q = projection(exp_map(p, tau * g))
            f_new = _objective(q, points, w)
            if f_new <= f or tau < 1e-6:
                break
            tau *= 0.5
        p, f = q, f_new
        _, g = _weighted_logs(p, points, w)
    if return_info:
        return p, {"n_iter": it, "grad_norm": gnorm, "objective": f}
    return p


class FrechetMean(TransformerMixin, BaseEstimator):
    """Fréchet mean of Stiefel-valued samples, sklearn style.

    ``fit`` takes an ``(m, n, k)`` array of points; ``transform`` maps points
    to tangent vectors at the mean (``log_{mean_}``) and
    ``inverse_transform`` maps tangent vectors back with the exponential.
    """

    def __init__(self, init=None):
        self.init = init

    def fit(self, X, y=None, sample_weight=None):
        X = check_stiefel(np.asarray(X, dtype=float))
        if X.ndim != 3:
            raise ShapeError("expected an (m, n, k) array of points")
        if sample_weight is not None:
            sample_weight = np.asarray(sample_weight, dtype=float)
            sample_weight = sample_weight / sample_weight.sum()
        self.mean_, info = frechet_mean(X, sample_weight, init=self.init, return_info=True)
        self.n_iter_ = info["n_iter"]
        self.grad_norm_ = info["grad_norm"]
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        V, status, _ = log_with_status(self.mean_, check_stiefel(np.asarray(X, dtype=float)))
        if np.any(status != LOG_OK):
            raise LogMapError("log map failed", index=np.flatnonzero(np.atleast_1d(status != LOG_OK)))
        return V

    def inverse_transform(self, V):
        check_is_fitted(self, "mean_")
        return exp_map(self.mean_, np.asarray(V, dtype=float))

    def score_samples(self, X):
        """Negative squared geodesic distance to the mean."""
        check_is_fitted(self, "mean_")
        return -geodesic_distance(self.mean_, X) ** 2
