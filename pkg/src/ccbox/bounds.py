"""Box/ellipsoid surrogates of the disjunctive collision chance constraint.

The free space around an obstacle is "outside its bounding box": at least
one axis ``j`` with ``|p_j - q_j| >= d_j``.  With Gaussian positions each
face is a linear chance constraint, so enlarging every semi-size by
``Psi^{-1}(1 - alpha) * sigma_j`` gives a deterministic box whose exterior
implies the chance constraint at risk ``alpha``.  The minimum-volume
ellipsoid enclosing that box, ``sum_j (x_j / d_j)^2 = n``, turns the
disjunction into one smooth inequality.

Semi-sizes may be ``inf`` to describe a planar obstacle that is unbounded
along an axis; that axis then drops out and the enclosing ellipsoid is
taken in the remaining dimensions (``n`` counts finite axes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvariantError
from .gaussian import GaussianBelief, std_normal_cdf, std_normal_quantile

SUM_ATOL = 1e-12
DEFAULT_CHUNK = 1 << 16


def _vec3(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.shape != (3,):
        raise DomainError(f"{name} must be a 3-vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with strictly positive semi-sizes (``inf`` allowed)."""

    semi_sizes: np.ndarray

    def __post_init__(self):
        d = _vec3(self.semi_sizes, "semi_sizes").copy()
        if np.any(np.isnan(d)) or np.any(d <= 0.0):
            raise InvariantError(f"semi-sizes must be strictly positive, got {d}")
        d.setflags(write=False)
        object.__setattr__(self, "semi_sizes", d)


@dataclass(frozen=True)
class InflatedBox:
    semi_sizes: np.ndarray

    def __post_init__(self):
        d = _vec3(self.semi_sizes, "semi_sizes").copy()
        d.setflags(write=False)
        object.__setattr__(self, "semi_sizes", d)


@dataclass(frozen=True)
class RiskAllocation:
    """Per-step, per-obstacle risk budgets ``alpha[t, i]``."""

    total_alpha: float
    per_step: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.per_step, dtype=float)).copy()
        if np.any(a < 0.0) or np.any(a > 1.0):
            raise InvariantError("risk budgets must lie in [0, 1]")
        if a.sum() > self.total_alpha + SUM_ATOL:
            raise InvariantError(
                f"risk budgets sum to {a.sum()}, exceeding total {self.total_alpha}"
            )
        a.setflags(write=False)
        object.__setattr__(self, "per_step", a)

    @property
    def n_steps(self) -> int:
        return self.per_step.shape[0]

    @property
    def n_obstacles(self) -> int:
        return self.per_step.shape[1]


def uniform_risk_allocation(alpha: float, n_steps: int, n_obstacles: int) -> RiskAllocation:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if n_steps < 1 or n_obstacles < 1:
        raise DomainError("risk allocation needs at least one step and one obstacle")
    per = np.full((n_steps, n_obstacles), alpha / (n_steps * n_obstacles))
    return RiskAllocation(alpha, per)


def _semi(x):
    if isinstance(x, (BoundingBox, InflatedBox)):
        return x.semi_sizes
    return np.asarray(x, dtype=float)


def inflated_semi_sizes(semi_sizes, alpha, sigma2):
    """Array form of :func:`inflate_box`; broadcasts over leading axes."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 < 0.0):
        raise InvariantError("variances must be nonnegative")
    kappa = np.asarray(std_normal_quantile(1.0 - np.asarray(alpha, dtype=float)))
    return np.asarray(semi_sizes, dtype=float) + kappa[..., None] * np.sqrt(sigma2)


def inflate_box(box: BoundingBox, alpha_it: float, sigma2_robot, sigma2_obstacle) -> InflatedBox:
    """Enlarge ``box`` so its nominal exterior implies the per-face chance constraints."""
    s2r = _vec3(sigma2_robot, "sigma2_robot")
    s2o = _vec3(sigma2_obstacle, "sigma2_obstacle")
    if np.any(s2r < 0.0) or np.any(s2o < 0.0):
        raise InvariantError("variances must be nonnegative")
    if not 0.0 < alpha_it < 1.0:
        raise DomainError(f"alpha_it must lie in (0, 1), got {alpha_it}")
    kappa = std_normal_quantile(1.0 - alpha_it)
    return InflatedBox(box.semi_sizes + kappa * np.sqrt(s2r + s2o))


def ellipsoid_margin(rel_pos, inflated):
    """``sum_j (r_j / d_j)^2 - n``; nonnegative outside the enclosing ellipsoid.

    Vectorized: ``rel_pos`` and the semi-sizes broadcast on leading axes,
    the last axis has length 3.
    """
    r = np.asarray(rel_pos, dtype=float)
    d = _semi(inflated)
    finite = np.isfinite(d)
    ratio = np.where(finite, r / np.where(finite, d, 1.0), 0.0)
    out = np.sum(ratio * ratio, axis=-1) - np.sum(finite, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def ellipsoid_gradient(rel_pos, inflated):
    """Gradient of :func:`ellipsoid_margin` with respect to ``rel_pos``."""
    r = np.asarray(rel_pos, dtype=float)
    d = _semi(inflated)
    finite = np.isfinite(d)
    dd = np.where(finite, d, 1.0)
    return np.where(finite, 2.0 * r / (dd * dd), 0.0)


def ellipsoid_hessian_diag(inflated):
    """Diagonal of the (constant) Hessian of :func:`ellipsoid_margin`."""
    d = _semi(inflated)
    finite = np.isfinite(d)
    dd = np.where(finite, d, 1.0)
    return np.where(finite, 2.0 / (dd * dd), 0.0)


def psd_factor(cov) -> np.ndarray:
    """Matrix ``L`` with ``L @ L.T == cov`` for any PSD ``cov`` (rank deficient ok)."""
    cov = np.asarray(cov, dtype=float)
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def _chunk_hits(mean, factor, semi, seed, chunk, size):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))
    z = rng.standard_normal((size, mean.size))
    x = mean + z @ factor.T
    return int(np.count_nonzero(np.all(np.abs(x) <= semi, axis=1)))


def mc_collision_probability(
    rel_belief: GaussianBelief,
    box: BoundingBox,
    n_samples: int,
    seed: int,
    chunk_size: int = DEFAULT_CHUNK,
    executor=None,
) -> float:
    """Monte Carlo estimate of ``P(|R_j| <= d_j for all j)`` for ``R ~ rel_belief``.

    ``rel_belief`` describes ``p - q``.  Samples are drawn in fixed-size
    chunks, each from its own seed substream, so the estimate does not
    depend on whether (or how) chunks are spread over an ``executor``.
    """
    if rel_belief.dim != 3:
        raise DomainError("relative belief must be 3-dimensional")
    if n_samples < 1000:
        raise DomainError("at least 1000 samples are required")
    factor = psd_factor(rel_belief.cov)
    semi = box.semi_sizes
    sizes = [chunk_size] * (n_samples // chunk_size)
    if n_samples % chunk_size:
        sizes.append(n_samples % chunk_size)
    args = [(rel_belief.mean, factor, semi, seed, i, s) for i, s in enumerate(sizes)]
    if executor is None:
        hits = sum(_chunk_hits(*a) for a in args)
    else:
        hits = sum(executor.map(lambda a: _chunk_hits(*a), args))
    return hits / n_samples


def analytic_box_probability(rel_mean, diag_vars, box: BoundingBox) -> float:
    """Closed-form box probability when the covariance is diagonal."""
    mu = _vec3(rel_mean, "rel_mean")
    var = _vec3(diag_vars, "diag_vars")
    if np.any(var < 0.0):
        raise InvariantError("variances must be nonnegative")
    prob = 1.0
    for m, v, d in zip(mu, var, box.semi_sizes):
        if not math.isfinite(d):
            continue
        if v == 0.0:
            prob *= 1.0 if abs(m) <= d else 0.0
            continue
        s = math.sqrt(v)
        prob *= std_normal_cdf(min((d - m) / s, 1e300)) - std_normal_cdf(max((-d - m) / s, -1e300))
    return float(prob)


def binomial_margin(alpha: float, n_samples: int) -> float:
    """Three-sigma sampling margin for an event of probability ``alpha``."""
    return 3.0 * math.sqrt(alpha * (1.0 - alpha) / n_samples)


@dataclass(frozen=True)
class CertificationCase:
    index: int
    alpha_it: float
    probability: float
    threshold: float

    @property
    def bound_margin(self) -> float:
        """Slack between the allowed and the estimated probability (>= 0 passes)."""
        return self.threshold - self.probability

    @property
    def passed(self) -> bool:
        return self.probability <= self.threshold


def random_boundary_case(rng: np.random.Generator, alpha_it: float, inflation_sign: float = 1.0):
    """Draw a random box, covariances and a point on the surrogate boundary.

    Returns ``(rel_belief, box)``.  ``inflation_sign=-1`` shrinks instead of
    inflating; it exists only to exercise the certifier's failure path.
    """
    d = rng.uniform(0.2, 2.0, size=3)
    box = BoundingBox(d)

    def random_cov():
        a = rng.normal(size=(3, 3)) * rng.uniform(0.05, 0.6)
        return a @ a.T + np.diag(rng.uniform(0.0, 0.05, size=3))

    cov = random_cov() + random_cov()
    sigma2 = np.diag(cov)
    kappa = std_normal_quantile(1.0 - alpha_it)
    semi = d + inflation_sign * kappa * np.sqrt(sigma2)
    semi = np.maximum(semi, 1e-3 * d)
    # uniform direction on the sphere, scaled onto the ellipsoid surface
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    rel = u * semi * math.sqrt(3.0)
    return GaussianBelief(rel, cov), box


def certify_random_cases(
    n_cases: int,
    n_samples: int,
    seed: int,
    alpha_range=(1e-4, 0.2),
    inflation_sign: float = 1.0,
    alpha_override: float | None = None,
) -> list[CertificationCase]:
    """Empirically check that boundary points of the surrogate are safe.

    For each case a random configuration is placed exactly on the
    ellipsoid (margin 0) and the collision probability is estimated by
    Monte Carlo; it must not exceed ``alpha_it`` plus a 3-sigma margin.
    """
    if n_samples < 10_000:
        raise DomainError("certification needs at least 1e4 samples per case")
    out = []
    root = np.random.SeedSequence(seed)
    for i, child in enumerate(root.spawn(n_cases)):
        rng = np.random.default_rng(child)
        lo, hi = alpha_range
        if alpha_override is None:
            alpha_it = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        else:
            alpha_it = float(alpha_override)
        belief, box = random_boundary_case(rng, alpha_it, inflation_sign)
        mc_seed = int(rng.integers(0, 2**63 - 1))
        prob = mc_collision_probability(belief, box, n_samples, mc_seed)
        out.append(CertificationCase(i, alpha_it, prob, alpha_it + binomial_margin(alpha_it, n_samples)))
    return out
