import numpy as np
import pytest

from ccbox.errors import SolverError
from ccbox.sqp import constraint_violation, solve_sqp


class Toy:
    """Small NLP: quadratic cost, optional nonlinear inequalities, box bounds."""

    def __init__(self, hess, lin, ineq=None, ineq_jac=None, m=0, lb=None, ub=None):
        self.h_mat, self.lin = np.asarray(hess, float), np.asarray(lin, float)
        self.n = self.lin.size
        self.n_eq, self.n_ineq = 0, m
        self.dependent = np.zeros(0, dtype=int)
        self.lb = np.full(self.n, -np.inf) if lb is None else np.asarray(lb, float)
        self.ub = np.full(self.n, np.inf) if ub is None else np.asarray(ub, float)
        self._h, self._jh = ineq, ineq_jac

    def cost(self, z):
        return 0.5 * z @ self.h_mat @ z + self.lin @ z

    def cost_grad(self, z):
        return self.h_mat @ z + self.lin

    def eq(self, z):
        return np.zeros(0)

    def eq_jac(self, z):
        return np.zeros((0, self.n))

    def ineq(self, z):
        return np.zeros(0) if self._h is None else self._h(z)

    def ineq_jac(self, z):
        return np.zeros((0, self.n)) if self._jh is None else self._jh(z)

    def hessian(self, z, mu):
        return self.h_mat


def test_unconstrained_quadratic_is_newton_exact():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 5))
    h = a @ a.T + np.eye(5)
    g = rng.normal(size=5)
    sol = solve_sqp(Toy(h, g), np.zeros(5), tol=1e-10)
    assert sol.converged and sol.iterations <= 3
    assert np.allclose(sol.z, np.linalg.solve(h, -g), atol=1e-10)


def test_bounds_are_respected():
    sol = solve_sqp(Toy(np.eye(2), [-3.0, 2.0], lb=[-1, -1], ub=[1, 1]), np.zeros(2), tol=1e-10)
    assert sol.converged
    assert np.allclose(sol.z, [1.0, -1.0])
    assert sol.multipliers["bounds"][0] < 0 and sol.multipliers["bounds"][1] > 0


def test_nonconvex_inequality():
    # stay outside the unit circle while pulled toward (0, 0.1); the Gauss-Newton
    # model ignores the constraint curvature, so the tangential error contracts
    # linearly with factor 1 - 0.2 / 2 and needs a few hundred iterations
    ineq = lambda z: np.array([z @ z - 1.0])
    jac = lambda z: 2.0 * z[None, :]
    sol = solve_sqp(Toy(2 * np.eye(2), [0.0, -0.2], ineq, jac, m=1), np.array([0.3, 2.0]), tol=1e-9,
                    max_iter=400)
    assert sol.converged
    assert np.allclose(sol.z, [0.0, 1.0], atol=1e-7)
    assert sol.max_violation == pytest.approx(constraint_violation(Toy(2 * np.eye(2), [0, -0.2], ineq, jac, m=1),
                                                                   sol.z), abs=1e-12)


def test_infeasible_subproblem_uses_slacks():
    ineq = lambda z: np.array([z[0] - 5.0])
    jac = lambda z: np.array([[1.0, 0.0]])
    sol = solve_sqp(Toy(np.eye(2), [0.0, 0.0], ineq, jac, m=1, ub=[1.0, 1.0]), np.zeros(2), max_iter=5)
    assert sol.slack_used and not sol.converged
    assert sol.z[0] == pytest.approx(1.0)


def test_non_finite_values_raise():
    p = Toy(np.eye(1), [0.0])
    p.cost = lambda z: float("nan")
    with pytest.raises(SolverError):
        solve_sqp(p, np.zeros(1))


def test_bad_arguments():
    p = Toy(np.eye(2), [0.0, 0.0])
    with pytest.raises(ValueError):
        solve_sqp(p, np.zeros(2), tol=0.0)
    with pytest.raises(ValueError):
        solve_sqp(p, np.array([np.nan, 0.0]))
