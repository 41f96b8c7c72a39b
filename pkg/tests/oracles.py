"""Independent reference computations used to derive the frozen test values.

Nothing here imports ``ccbox``; high-precision arithmetic comes from
mpmath and symbolic sums from sympy.  ``test_oracles.py`` re-derives every
frozen constant from these functions.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import sympy as sp

mp.mp.dps = 40


# -- standard normal ----------------------------------------------------------


def normal_cdf_quad(x) -> float:
    """Gaussian CDF by adaptive quadrature of the density."""
    pdf = lambda t: mp.exp(-t * t / 2) / mp.sqrt(2 * mp.pi)
    return float(mp.quad(pdf, [-mp.inf, 0, x]))


def normal_lower_tail_series(x, terms=12) -> float:
    """``Psi(-x)`` for large ``x`` from the asymptotic erfc series."""
    x = mp.mpf(x)
    phi = mp.exp(-x * x / 2) / mp.sqrt(2 * mp.pi)
    s, term = mp.mpf(1), mp.mpf(1)
    for k in range(1, terms):
        term *= -(2 * k - 1) / (x * x)
        s += term
    return float(phi / x * s)


def normal_quantile_bisect(p, lo=-40.0, hi=40.0, iters=200) -> float:
    """Invert the high-precision CDF by bisection."""
    p = mp.mpf(p)
    lo, hi = mp.mpf(lo), mp.mpf(hi)
    cdf = lambda t: mp.ncdf(t)
    for _ in range(iters):
        mid = (lo + hi) / 2
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def box_probability_exact(mu, sigma, d) -> float:
    """Product of interval probabilities for independent axes (mpmath)."""
    out = mp.mpf(1)
    for m, s, h in zip(mu, sigma, d):
        out *= mp.ncdf((h - m) / mp.mpf(s)) - mp.ncdf((-h - m) / mp.mpf(s))
    return float(out)


# -- dynamics -----------------------------------------------------------------


def lag_exact(v0, u, k, tau, t) -> float:
    """Solution of ``tau v' = -v + k u`` with constant ``u``."""
    return k * u + (v0 - k * u) * math.exp(-t / tau)


def circular_position(p0, speed, psi0, omega, t):
    """Planar position of a point moving forward at ``speed`` while turning at ``omega``."""
    if omega == 0.0:
        return np.array([p0[0] + speed * t * math.cos(psi0), p0[1] + speed * t * math.sin(psi0)])
    r = speed / omega
    return np.array([
        p0[0] + r * (math.sin(psi0 + omega * t) - math.sin(psi0)),
        p0[1] - r * (math.cos(psi0 + omega * t) - math.cos(psi0)),
    ])


def central_difference(fun, x, h=1e-6):
    """Jacobian of ``fun`` at ``x`` by central differences (columns = inputs)."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        jac[:, i] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))).ravel() / (2 * h)
    return jac


def sample_pushforward_cov(jac, cov, noise, n, seed):
    """Sample covariance of ``J x + w`` for ``x ~ N(0, cov)``, ``w ~ N(0, noise)``."""
    rng = np.random.default_rng(seed)
    xs = rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=n, method="eigh")
    ws = rng.multivariate_normal(np.zeros(noise.shape[0]), noise, size=n, method="eigh")
    ys = xs @ np.asarray(jac).T + ws
    return np.cov(ys, rowvar=False)


def cv_position_variance(steps, dt, var_p0, var_v0, noise_p, noise_v):
    """Closed-form position variance of the 1-D Euler constant-velocity recursion.

    ``p+ = p + dt v + w_p``, ``v+ = v + w_v`` started uncorrelated; derived by
    symbolic summation of the covariance recursion.
    """
    t, k = sp.symbols("t k", integer=True, nonnegative=True)
    h, s0, sv, qp, qv = sp.symbols("h s0 sv qp qv", positive=True)
    var_v = sv + k * qv
    cov_pv = h * sp.summation(sv + sp.Symbol("j") * qv, (sp.Symbol("j"), 0, k - 1))
    var_p = s0 + sp.summation(2 * h * cov_pv + h**2 * var_v + qp, (k, 0, t - 1))
    expr = sp.simplify(var_p)
    return float(expr.subs({t: steps, h: dt, s0: var_p0, sv: var_v0, qp: noise_p, qv: noise_v}))


# -- geometry and constraints -------------------------------------------------


def inflated_semi(d, alpha, var) -> list:
    kappa = normal_quantile_bisect(1 - mp.mpf(alpha))
    return [float(mp.mpf(di) + kappa * mp.sqrt(vi)) for di, vi in zip(d, var)]


def ellipsoid_margin_exact(rel, semi) -> float:
    finite = [(r, s) for r, s in zip(rel, semi) if math.isfinite(s)]
    return float(sum((mp.mpf(r) / s) ** 2 for r, s in finite) - len(finite))


def benchmark_step_margin():
    """Ellipsoid margin at the first horizon step of the benchmark, robot at rest at the origin."""
    semi = inflated_semi([1.0, 0.5], 0.01 / 40, [0.4, 0.1])
    return ellipsoid_margin_exact([-5.0, 0.01], semi)


# -- pedestrians ---------------------------------------------------------------


def relaxation_arrival_time(distance, speed, tau, tolerance) -> float:
    """Time for ``x' = v``, ``tau v' = speed - v`` from rest to reach ``distance - tolerance``."""
    target = mp.mpf(distance - tolerance)
    f = lambda t: speed * (t - tau * (1 - mp.exp(-t / tau))) - target
    return float(mp.findroot(f, distance / speed))


def repulsion_magnitude(A, B, gap, dist) -> float:
    return A * math.exp((gap - dist) / B)
