"""Dense real matrix kernels.

All functions accept a single matrix or a stack of matrices with shape
``(..., rows, cols)`` and operate on the trailing two axes.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .config import TOL
from .exceptions import (
    ConvergenceError,
    NotFullRankError,
    NotSymmetricError,
    ShapeError,
)

__all__ = [
    "frobenius_inner",
    "sym_eig",
    "sym_inv_sqrt",
    "matrix_exp",
    "thin_qr",
    "transpose",
    "sym",
    "skew",
]


def transpose(a):
    return np.swapaxes(a, -1, -2)


def sym(a):
    return 0.5 * (a + transpose(a))


def skew(a):
    return 0.5 * (a - transpose(a))


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim < 2:
        raise ShapeError(f"{name} must be at least 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def frobenius_inner(V, W):
    """Return ``trace(V^T W)`` over the last two axes."""
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if V.shape[-2:] != W.shape[-2:]:
        raise ShapeError(f"shape mismatch {V.shape} vs {W.shape}")
    return np.sum(V * W, axis=(-2, -1))


def sym_eig(S, *, check=True):
    """Eigen-decomposition of symmetric matrices by cyclic Jacobi rotations.

    Returns ``(w, Q)`` with eigenvalues in descending order and
    ``S = Q diag(w) Q^T``. The sweep is vectorized over leading axes.
    """
    S = _as_matrix(S, "S")
    k = S.shape[-1]
    if S.shape[-2] != k:
        raise ShapeError(f"S must be square, got {S.shape}")
    scale = np.linalg.norm(S, axis=(-2, -1))
    if check:
        asym = np.linalg.norm(S - transpose(S), axis=(-2, -1))
        if np.any(asym > TOL.sym * np.maximum(scale, 1.0)):
            raise NotSymmetricError("S is not symmetric")

    batch = S.shape[:-2]
    A = sym(S).reshape(-1, k, k).copy()
    Q = np.broadcast_to(np.eye(k), A.shape).copy()
    scale = scale.reshape(-1)
    thresh = TOL.eig_off * scale
    offdiag = ~np.eye(k, dtype=bool)

    for _ in range(TOL.eig_max_sweeps):
        off = np.sqrt(np.sum(A[:, offdiag] ** 2, axis=-1))
        if np.all(off <= thresh):
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = A[:, p, q]
                nz = apq != 0.0
                if not np.any(nz):
                    continue
                # theta overflows to inf for negligible apq, which gives t = 0
                with np.errstate(over="ignore", divide="ignore"):
                    theta = np.where(nz, (A[:, q, q] - A[:, p, p]) / np.where(nz, 2.0 * apq, 1.0), 0.0)
                    t = np.where(
                        nz,
                        np.sign(theta + (theta == 0)) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)),
                        0.0,
                    )
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_ = c[:, None]
                s_ = s[:, None]
                # A <- J^T A J, Q <- Q J
                col_p = A[:, :, p].copy()
                col_q = A[:, :, q]
                A[:, :, p] = c_ * col_p - s_ * col_q
                A[:, :, q] = s_ * col_p + c_ * col_q
                row_p = A[:, p, :].copy()
                row_q = A[:, q, :]
                A[:, p, :] = c_ * row_p - s_ * row_q
                A[:, q, :] = s_ * row_p + c_ * row_q
                qp = Q[:, :, p].copy()
                qq = Q[:, :, q]
                Q[:, :, p] = c_ * qp - s_ * qq
                Q[:, :, q] = s_ * qp + c_ * qq
    else:
        off = np.sqrt(np.sum(A[:, offdiag] ** 2, axis=-1))
        if np.any(off > thresh):
            raise ConvergenceError("Jacobi eigensolver did not converge")

    w = np.diagonal(A, axis1=-2, axis2=-1)
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    Q = np.take_along_axis(Q, order[:, None, :], axis=-1)
    return w.reshape(batch + (k,)), Q.reshape(batch + (k, k))


def sym_inv_sqrt(S):
    """Return ``S^{-1/2}`` for symmetric positive definite ``S``.

    Raises :class:`NotFullRankError` when an eigenvalue is at or below
    ``TOL.rank``.
    """
    w, Q = sym_eig(S)
    if np.any(w[..., -1] <= TOL.rank):
        raise NotFullRankError("matrix is not full rank (eigenvalue <= %g)" % TOL.rank)
    return (Q * (1.0 / np.sqrt(w))[..., None, :]) @ transpose(Q)


def matrix_exp(A):
    """Matrix exponential (scaling and squaring with Padé approximants)."""
    A = _as_matrix(A, "A")
    if A.shape[-1] != A.shape[-2]:
        raise ShapeError(f"A must be square, got {A.shape}")
    return scipy.linalg.expm(A)


def thin_qr(X):
    """Thin QR factorization with a nonnegative diagonal in ``R``.

    The sign convention makes the factorization unique for full column
    rank input. Raises :class:`NotFullRankError` otherwise.
    """
    X = _as_matrix(X, "X")
    n, k = X.shape[-2:]
    if k > n:
        raise ShapeError(f"need rows >= cols, got {X.shape}")
    Q, R = np.linalg.qr(X)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    scale = np.linalg.norm(X, axis=(-2, -1))
    if np.any(np.abs(d) <= 1e-12 * np.maximum(scale, np.finfo(float).tiny)[..., None]):
        raise NotFullRankError("X does not have full column rank")
    sgn = np.where(d < 0, -1.0, 1.0)
    return Q * sgn[..., None, :], R * sgn[..., :, None]
