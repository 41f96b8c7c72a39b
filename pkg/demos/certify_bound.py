"""
Checking the safety bound by sampling
=====================================

For random boxes and covariances we place the robot exactly on the
boundary of the inflated ellipsoid and estimate the collision probability by
Monte Carlo.  With inflation it should stay below the per-step budget;
shrinking the box instead must break the guarantee.

Run with ``python demos/certify_bound.py``.
"""

import numpy as np

from ccbox.bounds import certify_random_cases

# %% Cases on the boundary of the inflated ellipsoid
cases = certify_random_cases(50, 100_000, seed=7)
alpha = np.array([c.alpha_it for c in cases])
prob = np.array([c.probability for c in cases])
print(f"passed {sum(c.passed for c in cases)} / {len(cases)}")
print(f"ratio P / alpha: median {np.median(prob / alpha):.3g}, max {np.max(prob / alpha):.3g}")

# The ratio stays far below one: the ellipsoid circumscribes the box, so a
# boundary point is usually much further away than the worst case.

# %% Same cases with the box shrunk instead of inflated
shrunk = certify_random_cases(50, 100_000, seed=7, inflation_sign=-1.0)
print(f"shrunk boxes: passed {sum(c.passed for c in shrunk)} / {len(shrunk)}")
worst = max(shrunk, key=lambda c: c.probability / c.alpha_it)
print(f"worst case {worst.index}: P = {worst.probability:.3g} against alpha_it = {worst.alpha_it:.3g}")
