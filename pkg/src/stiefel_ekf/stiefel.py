"""Geometry of the compact Stiefel manifold St(n, k) under the canonical metric.

Points are ``(..., n, k)`` arrays with orthonormal columns; tangent vectors
at ``X`` are arrays ``V`` of the same shape with ``X^T V`` skew-symmetric.
Every function broadcasts over leading axes.

The canonical metric is ``g_c(X)(V, W) = tr(V^T (I - X X^T / 2) W)``. Its
geodesics are known in closed form; the logarithm is computed by an
iterative matching scheme on the orthogonal completion (see
:func:`log_with_status`).
"""
from __future__ import annotations

import functools

import numpy as np
import scipy.linalg

from .config import TOL
from .exceptions import (
    CutLocusError,
    LogMapNoConvergence,
    NotFullRankError,
    NotOnManifoldError,
    NotTangentError,
    ShapeError,
)
from .matcore import skew, sym, sym_inv_sqrt, thin_qr, transpose

__all__ = [
    "Stiefel",
    "projection",
    "check_stiefel",
    "check_tangent",
    "tangent_project",
    "canonical_inner",
    "canonical_norm",
    "exp_map",
    "log_map",
    "log_with_status",
    "geodesic_distance",
    "sample_uniform",
    "manifold_dim",
    "LOG_OK",
    "LOG_NO_CONVERGENCE",
    "LOG_CUT_LOCUS",
]

LOG_OK = 0
LOG_NO_CONVERGENCE = 1
LOG_CUT_LOCUS = 2


def manifold_dim(n, k):
    return n * k - k * (k + 1) // 2


def _check_shape(X):
    X = np.asarray(X, dtype=float)
    if X.ndim < 2:
        raise ShapeError(f"expected (..., n, k) array, got shape {X.shape}")
    n, k = X.shape[-2:]
    if not 1 <= k <= n:
        raise ShapeError(f"need 1 <= k <= n, got n={n}, k={k}")
    return X


def _orth_error(X):
    k = X.shape[-1]
    return np.linalg.norm(transpose(X) @ X - np.eye(k), axis=(-2, -1))


# -- projection and validation -----------------------------------------------

def projection(X):
    """Polar projection ``X (X^T X)^{-1/2}`` onto St(n, k).

    Raises :class:`NotFullRankError` for rank-deficient input, where the
    closest point is not unique.
    """
    X = _check_shape(X)
    if not np.all(np.isfinite(X)):
        raise ValueError("X has non-finite entries")
    try:
        P = X @ sym_inv_sqrt(transpose(X) @ X)
    except NotFullRankError:
        raise NotFullRankError("projection undefined: X is not of full column rank") from None
    # one Newton-Schulz sweep removes the cond(X)^2 rounding of the Gram route
    # without moving the polar factor
    return 1.5 * P - 0.5 * P @ (transpose(P) @ P)


def check_stiefel(X, *, repair=True):
    """Validate (and if slightly off, re-orthonormalize) a Stiefel point.

    Points within ``TOL.orth`` pass through unchanged; points within
    ``TOL.orth_repair`` are projected back; anything else raises
    :class:`NotOnManifoldError`.
    """
    X = _check_shape(X)
    err = _orth_error(X)
    if np.all(err <= TOL.orth):
        return X
    if repair and np.all(err <= TOL.orth_repair):
        return projection(X)
    raise NotOnManifoldError(
        f"not on St({X.shape[-2]},{X.shape[-1]}): ||X^T X - I|| = {np.max(err):.3g}"
    )


def check_tangent(X, V, tol=None):
    """Raise :class:`NotTangentError` unless ``X^T V + V^T X = 0``."""
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    if X.shape[-2:] != V.shape[-2:]:
        raise ShapeError(f"base {X.shape} and vector {V.shape} differ in shape")
    tol = TOL.tangent if tol is None else tol
    XtV = transpose(X) @ V
    scale = np.maximum(1.0, np.linalg.norm(V, axis=(-2, -1)))
    if np.any(np.linalg.norm(XtV + transpose(XtV), axis=(-2, -1)) > tol * scale):
        raise NotTangentError("vector is not tangent at the base point")
    return V


def tangent_project(X, W):
    """Orthogonal projection of ambient ``W`` onto ``T_X St``.

    ``X skew(X^T W) + (I - X X^T) W``; the same map is orthogonal for both
    the embedded and the canonical metric.
    """
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    if X.shape[-2:] != W.shape[-2:]:
        raise ShapeError(f"shape mismatch {X.shape} vs {W.shape}")
    return W - X @ sym(transpose(X) @ W)


def canonical_inner(X, V, W):
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if not X.shape[-2:] == V.shape[-2:] == W.shape[-2:]:
        raise ShapeError("base and tangent vectors differ in shape")
    XtV = transpose(X) @ V
    XtW = transpose(X) @ W
    return np.sum(V * W, axis=(-2, -1)) - 0.5 * np.sum(XtV * XtW, axis=(-2, -1))


def canonical_norm(X, V):
    return np.sqrt(np.maximum(canonical_inner(X, V, V), 0.0))


# -- skew exponential / orthogonal logarithm ----------------------------------

def _expm_skew(S):
    # S real skew => iS Hermitian; exp(S) = U exp(-i w) U^H
    w, U = np.linalg.eigh(1j * S)
    E = (U * np.exp(-1j * w)[..., None, :]) @ np.conj(transpose(U))
    return E.real


def _logm_orth_schur(Q):
    T, Z = scipy.linalg.schur(Q, output="real")
    m = T.shape[0]
    L = np.zeros_like(T)
    minus = []
    i = 0
    while i < m:
        if i + 1 < m and abs(T[i + 1, i]) > 1e-14:
            ang = np.arctan2(T[i + 1, i] - T[i, i + 1], T[i, i] + T[i + 1, i + 1])
            L[i + 1, i] = ang
            L[i, i + 1] = -ang
            i += 2
        else:
            if T[i, i] < 0:
                minus.append(i)
            i += 1
    for a, b in zip(minus[0::2], minus[1::2]):
        L[b, a] = np.pi
        L[a, b] = -np.pi
    return skew(Z @ L @ Z.T)


def _logm_orth(Q):
    """Principal logarithm of rotation matrices; returns ``(L, max_angle)``.

    Uses the Cayley transform ``W = (Q - I)(Q + I)^{-1}`` (skew, with
    eigenvalues ``i tan(theta/2)``) and a Hermitian eigensolve; matrices with
    a rotation angle too close to pi go through a real Schur form instead.
    """
    m = Q.shape[-1]
    I = np.eye(m)
    L = np.empty_like(Q)
    ang = np.empty(Q.shape[:-2])
    QpI = Q + I
    good = np.abs(np.linalg.det(QpI)) > 1e-10 * 2.0**m
    if np.any(good):
        Qg = Q[good]
        W = transpose(np.linalg.solve(transpose(QpI[good]), transpose(Qg - I)))
        w, U = np.linalg.eigh(1j * skew(W))
        at = np.arctan(w)
        Lg = -2j * (U * at[..., None, :]) @ np.conj(transpose(U))
        L[good] = skew(Lg.real)
        ang[good] = 2.0 * np.max(np.abs(at), axis=-1)
    for idx in zip(*np.nonzero(~good)):
        L[idx] = _logm_orth_schur(Q[idx])
        ang[idx] = np.pi
    return L, ang


# -- exponential and logarithm ------------------------------------------------

def exp_map(X, V):
    """Riemannian exponential for the canonical metric.

    With ``V = X A + Q B`` (``Q`` an orthonormal basis of the normal part),
    ``exp_X(V) = [X Q] expm([[A, -B^T], [B, 0]]) [I; 0]``. For ``n <= 2k``
    the equivalent n x n form ``expm(G X^T - X G^T) X`` with
    ``G = V - X X^T V / 2`` is used.
    """
    X = _check_shape(X)
    V = np.asarray(V, dtype=float)
    X, V = np.broadcast_arrays(X, V)
    n, k = X.shape[-2:]
    A = skew(transpose(X) @ V)
    if n <= 2 * k:
        G = V - 0.5 * X @ A
        return _expm_skew(G @ transpose(X) - X @ transpose(G)) @ X
    Q, B = np.linalg.qr(V - X @ (transpose(X) @ V))
    top = np.concatenate([A, -transpose(B)], axis=-1)
    bottom = np.concatenate([B, np.zeros_like(B)], axis=-1)
    E = _expm_skew(np.concatenate([top, bottom], axis=-2))
    return X @ E[..., :k, :k] + Q @ E[..., k:, :k]


def _normal_frame(X, Y, M):
    """Orthonormal ``Q`` spanning the part of ``Y`` normal to ``X``."""
    n, k = X.shape[-2:]
    Qf, _ = np.linalg.qr(X, mode="complete")
    perp = Qf[..., k:]
    if n < 2 * k:
        return perp
    # QR inside the complement keeps Q orthogonal to X even when Y - X M is
    # rank deficient (e.g. Y = +-X)
    Q1, _ = np.linalg.qr(transpose(perp) @ (Y - X @ M))
    return perp @ Q1


def log_with_status(X, Y, *, tol=None, max_iter=None):
    """Riemannian logarithm ``log_X(Y)`` with per-item status codes.

    Returns ``(V, status, n_iter)``; ``status`` is :data:`LOG_OK`,
    :data:`LOG_NO_CONVERGENCE` or :data:`LOG_CUT_LOCUS`. Failed entries hold
    the last iterate and must not be used as logarithms.

    Write ``[M; N] = [X Q]^T Y`` and complete it to a rotation ``V``. Any
    rotation ``V' = V diag(I, Phi)`` also maps ``X`` to ``Y``; the geodesic
    is found where the lower-right block of ``log(V')`` vanishes. Starting
    from the Procrustes choice of ``Phi`` the block is driven to zero by
    ``Phi <- Phi expm(-alpha C)``, i.e. gradient steps on
    ``||log V'||^2 / 2`` with per-item Barzilai-Borwein step sizes.
    """
    tol = TOL.log_tol if tol is None else tol
    max_iter = TOL.log_max_iter if max_iter is None else max_iter
    X = _check_shape(X)
    Y = _check_shape(Y)
    if X.shape[-2:] != Y.shape[-2:]:
        raise ShapeError(f"shape mismatch {X.shape} vs {Y.shape}")
    X, Y = np.broadcast_arrays(X, Y)
    batch = X.shape[:-2]
    n, k = X.shape[-2:]
    X = X.reshape(-1, n, k)
    Y = Y.reshape(-1, n, k)
    B = X.shape[0]

    M = transpose(X) @ Y
    r = min(k, n - k)
    if r == 0:
        Q = np.zeros((B, n, 0))
        V = M.copy()
    else:
        Q = _normal_frame(X, Y, M)
        MN = np.concatenate([M, transpose(Q) @ Y], axis=-2)
        Qc, _ = np.linalg.qr(MN, mode="complete")
        V = np.concatenate([MN, Qc[..., k:]], axis=-1)
        flip = np.linalg.det(V) < 0
        V[flip, :, -1] *= -1.0
        # Procrustes start: make the lower-right block symmetric positive
        u, _, wt = np.linalg.svd(V[:, k:, k:])
        wt[:, -1, :] *= np.sign(np.linalg.det(transpose(wt) @ transpose(u)))[:, None]
        V[:, :, k:] = V[:, :, k:] @ (transpose(wt) @ transpose(u))

    status = np.full(B, LOG_NO_CONVERGENCE, dtype=np.int8)
    n_iter = np.zeros(B, dtype=np.int64)
    L = np.zeros((B, k + r, k + r))
    if r == 0:
        bad = np.linalg.det(V) < 0
        if np.any(~bad):
            L[~bad], ang = _logm_orth(V[~bad])
            status[~bad] = np.where(ang < np.pi - 1e-6, LOG_OK, LOG_CUT_LOCUS)
        status[bad] = LOG_CUT_LOCUS
        return _assemble(X, Q, L, k, batch, n, status, n_iter)

    active = np.arange(B)
    angle = np.zeros(B)
    alpha = np.ones(B)
    prev_C = prev_step = None
    for it in range(max_iter + 1):
        La, ang = _logm_orth(V[active])
        L[active] = La
        angle[active] = ang
        C = La[:, k:, k:]
        done = np.linalg.norm(C, axis=(-2, -1)) < tol
        status[active[done]] = LOG_OK
        n_iter[active] = it
        if prev_C is not None:
            dC = C - prev_C
            sy = np.sum(prev_step * dC, axis=(-2, -1))
            ss = np.sum(prev_step * prev_step, axis=(-2, -1))
            ok = sy > 1e-300
            alpha[active] = np.clip(np.where(ok, ss / np.where(ok, sy, 1.0), 1.0), 0.1, 10.0)
        keep = ~done
        active = active[keep]
        if active.size == 0 or it == max_iter:
            break
        step = -alpha[active][:, None, None] * C[keep]
        V[active, :, k:] = V[active, :, k:] @ _expm_skew(step)
        prev_C = C[keep]
        prev_step = step

    near_cut = (angle > np.pi - 1e-6) | ~np.isfinite(angle)
    status[near_cut] = LOG_CUT_LOCUS
    return _assemble(X, Q, L, k, batch, n, status, n_iter)


def _assemble(X, Q, L, k, batch, n, status, n_iter):
    V = X @ L[:, :k, :k] + Q @ L[:, k:, :k]
    return (
        V.reshape(batch + (n, k)),
        status.reshape(batch),
        n_iter.reshape(batch),
    )


def log_map(X, Y, *, tol=None, max_iter=None):
    """Riemannian logarithm; raises on failure.

    :class:`CutLocusError` when ``Y`` is (numerically) on the cut locus of
    ``X``, :class:`LogMapNoConvergence` when the iteration cap is reached.
    ``err.index`` lists the failing batch positions.
    """
    V, status, _ = log_with_status(X, Y, tol=tol, max_iter=max_iter)
    if np.any(status == LOG_CUT_LOCUS):
        idx = np.argwhere(np.atleast_1d(status == LOG_CUT_LOCUS))
        raise CutLocusError("log map: target near the cut locus", index=idx)
    if np.any(status != LOG_OK):
        idx = np.argwhere(np.atleast_1d(status != LOG_OK))
        raise LogMapNoConvergence("log map did not converge", index=idx)
    return V


def geodesic_distance(X, Y, *, return_status=False):
    """Canonical geodesic distance ``||log_X(Y)||_c``.

    On spheres (``k == 1``) a cut-locus point is the antipode, at distance
    pi. Otherwise failures raise like :func:`log_map`, or come back as NaN
    when ``return_status`` is set.
    """
    V, status, _ = log_with_status(X, Y)
    X = np.broadcast_to(np.asarray(X, dtype=float), V.shape)
    d = canonical_norm(X, V)
    if X.shape[-1] == 1:
        d = np.where(status == LOG_CUT_LOCUS, np.pi, d)
        status = np.where(status == LOG_CUT_LOCUS, LOG_OK, status)
    if return_status:
        return np.where(status == LOG_OK, d, np.nan), status
    if np.any(status == LOG_CUT_LOCUS):
        raise CutLocusError("distance: target near the cut locus")
    if np.any(status != LOG_OK):
        raise LogMapNoConvergence("distance: log map did not converge")
    return d[()] if np.ndim(d) == 0 else d


def sample_uniform(n, k, size=None, rng=None):
    """Haar-uniform points on St(n, k).

    The sign-fixed Q factor of a Gaussian n x k matrix; without the sign fix
    the Q factor of a Householder QR is not uniformly distributed.
    """
    rng = np.random.default_rng(rng)
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    G = rng.standard_normal(shape + (n, k))
    while True:
        try:
            Q, _ = thin_qr(G)
            return Q
        except NotFullRankError:  # probability zero; redraw everything
            G = rng.standard_normal(shape + (n, k))


# -- manifold object --------------------------------------------------------------

class Stiefel:
    """The manifold St(n, k) with the canonical metric.

    ``maxvar`` is the maximal scalar variance: the closed form on spheres,
    otherwise the shipped frozen Monte Carlo value, otherwise a fresh Monte
    Carlo estimate (cached per process). Pass ``maxvar`` to override.
    """

    def __init__(self, n, k, maxvar=None):
        n = int(n)
        k = int(k)
        if not 1 <= k <= n:
            raise ShapeError(f"need 1 <= k <= n, got n={n}, k={k}")
        if manifold_dim(n, k) <= 0:
            raise ShapeError(f"St({n},{k}) has dimension 0")
        self.n = n
        self.k = k
        self._maxvar = None if maxvar is None else float(maxvar)
        self.maxvar_info = {"source": "given"} if maxvar is not None else None
        if self._maxvar is not None and not self._maxvar > 0:
            raise ValueError("maxvar must be positive")

    @property
    def dim(self):
        return manifold_dim(self.n, self.k)

    @property
    def shape(self):
        return (self.n, self.k)

    @property
    def maxvar(self):
        if self._maxvar is None:
            self._maxvar, self.maxvar_info = _resolve_maxvar(self.n, self.k)
        return self._maxvar

    def __repr__(self):
        return f"Stiefel(n={self.n}, k={self.k})"

    def __eq__(self, other):
        return isinstance(other, Stiefel) and self.shape == other.shape

    def __hash__(self):
        return hash(self.shape)

    def identity(self):
        return np.eye(self.n, self.k)

    def projection(self, X):
        return projection(X)

    def inner(self, X, V, W):
        return canonical_inner(X, V, W)

    def norm(self, X, V):
        return canonical_norm(X, V)

    def proj_tangent(self, X, W):
        return tangent_project(X, W)

    def exp(self, X, V):
        return exp_map(X, V)

    def log(self, X, Y):
        return log_map(X, Y)

    def dist(self, X, Y):
        return geodesic_distance(X, Y)

    def random_uniform(self, size=None, rng=None):
        return sample_uniform(self.n, self.k, size=size, rng=rng)


@functools.lru_cache(maxsize=None)
def _resolve_maxvar(n, k):
    from . import stats

    if k == 1:
        return stats.max_scalar_variance_sphere(n - 1), {"source": "closed_form"}
    table = stats.load_maxvar_table()
    if (n, k) in table:
        rec = table[(n, k)]
        return rec.estimate, {"source": "file", **rec._asdict()}
    est = stats.max_scalar_variance_mc(n, k, samples=stats.DEFAULT_MAXVAR_SAMPLES,
                                       rng=stats.DEFAULT_MAXVAR_SEED)
    return est.estimate, {"source": "mc", **est._asdict()}
