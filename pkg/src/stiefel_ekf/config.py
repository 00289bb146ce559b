"""Numerical tolerances shared across the package.

Every threshold lives on the module-level :data:`TOL` object so callers can
tighten or relax them globally, or temporarily with :func:`tolerances`.
"""
from __future__ import annotations

import contextlib
import dataclasses
from typing import Iterator


@dataclasses.dataclass
class Tolerances:
    sym: float = 1e-10  # relative Frobenius asymmetry accepted by sym_eig
    rank: float = 1e-12  # smallest admissible eigenvalue of X^T X
    eig_off: float = 1e-14  # Jacobi stopping threshold (relative off-norm)
    eig_max_sweeps: int = 60
    orth: float = 1e-8  # accepted ||X^T X - I||_F for a Stiefel point
    orth_repair: float = 1e-6  # re-orthonormalize up to this, reject above
    tangent: float = 1e-8
    log_tol: float = 1e-10  # residual of the log-map fixed point
    log_max_iter: int = 100
    log_check: float = 1e-6  # exp(log(Y)) vs Y acceptance
    frechet_grad: float = 1e-8
    frechet_max_iter: int = 500


TOL = Tolerances()


@contextlib.contextmanager
def tolerances(**overrides: float) -> Iterator[Tolerances]:
    """Temporarily override fields of :data:`TOL`."""
    saved = dataclasses.asdict(TOL)
    for key, value in overrides.items():
        if key not in saved:
            raise AttributeError(f"unknown tolerance {key!r}")
        setattr(TOL, key, value)
    try:
        yield TOL
    finally:
        for key, value in saved.items():
            setattr(TOL, key, value)
