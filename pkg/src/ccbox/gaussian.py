"""Standard-normal helpers and the linear Gaussian chance constraint."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, InvariantError

SYM_RTOL = 1e-12
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and covariance of a Gaussian random vector.

    The covariance is symmetrized on construction; first-order propagation
    accumulates tiny asymmetries that would otherwise trip the checks.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1:
            raise InvariantError(f"mean must be a vector, got shape {mean.shape}")
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise InvariantError(
                f"covariance shape {cov.shape} does not match mean dimension {n}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvariantError("belief contains non-finite entries")
        cov = 0.5 * (cov + cov.T)
        scale = np.linalg.norm(cov)
        if n and scale > 0.0:
            lo = np.linalg.eigvalsh(cov)[0]
            if lo < -PSD_RTOL * scale:
                raise InvariantError(
                    f"covariance is not positive semidefinite (min eigenvalue {lo:.3e})"
                )
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def point(cls, mean) -> "GaussianBelief":
        """Zero-variance belief concentrated at ``mean``."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, np.zeros((mean.size, mean.size)))


def std_normal_cdf(x):
    """Standard normal CDF, vectorized.

    Uses the complementary error function so the lower tail keeps full
    relative accuracy (``Psi(-8)`` is about 6.2e-16).
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    out = special.ndtr(arr)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def linear_cc_margin(a, b: float, belief: GaussianBelief, alpha: float) -> float:
    """Deterministic equivalent of ``P(a^T X + b <= 0) >= 1 - alpha``.

    Returns ``a^T mu + b + Psi^{-1}(1 - alpha) * sqrt(a^T Sigma a)``; the
    chance constraint holds exactly when the returned margin is <= 0.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != belief.mean.shape:
        raise DomainError(
            f"direction has shape {a.shape}, belief has dimension {belief.dim}"
        )
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    var = float(a @ belief.cov @ a)
    if var < -PSD_RTOL:
        raise InvariantError(f"projected variance is negative ({var:.3e})")
    var = max(var, 0.0)
    return float(a @ belief.mean) + float(b) + std_normal_quantile(1.0 - alpha) * math.sqrt(var)
