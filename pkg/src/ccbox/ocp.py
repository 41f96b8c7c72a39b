"""Chance-constrained optimal control problem as a multiple-shooting NLP.

Decision vector layout: ``z = [u_0, ..., u_{N-1}, x_1, ..., x_N]`` (inputs
first, then states).  Robot and obstacle covariances are predicted once
from a warm-start input sequence and held fixed for the solve, so every
obstacle constraint is a smooth function of the robot position alone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .bounds import (
    BoundingBox,
    RiskAllocation,
    ellipsoid_gradient,
    ellipsoid_hessian_diag,
    ellipsoid_margin,
    inflated_semi_sizes,
    mc_collision_probability,
    uniform_risk_allocation,
)
from .errors import DomainError, InvariantError
from .gaussian import GaussianBelief, std_normal_quantile
from .sqp import Solution, constraint_violation, solve_sqp

NX, NU = dyn.NX, dyn.NU
ROBUST_SIGMAS = 3.0


class ConstraintKind(str, enum.Enum):
    ELLIPSOID_CC = "ellipsoid_cc"
    ROBUST_SET_BOUND = "robust_set_bound"
    LINEARIZED_CC = "linearized_cc"

    @classmethod
    def parse(cls, value) -> "ConstraintKind":
        try:
            return cls(value)
        except ValueError:
            raise DomainError(
                f"unknown constraint kind {value!r}; expected one of "
                + ", ".join(k.value for k in cls)
            ) from None


def _psd(name, m, n):
    m = np.asarray(m, dtype=float)
    if m.shape != (n, n):
        raise InvariantError(f"{name} must be {n}x{n}, got {m.shape}")
    m = 0.5 * (m + m.T)
    if np.linalg.eigvalsh(m)[0] < -1e-10 * max(1.0, np.linalg.norm(m)):
        raise InvariantError(f"{name} must be positive semidefinite")
    return m


def _bounds(name, lo, hi, n):
    lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
    if lo.shape != (n,) or hi.shape != (n,):
        raise InvariantError(f"{name} bounds need {n} entries")
    if np.any(lo > hi):
        raise InvariantError(f"{name} bounds describe an empty interval")
    return lo, hi


@dataclass
class OcpConfig:
    """Horizon, weights, bounds, risk level and goal trajectory.

    ``reference`` holds the goal states ``x^r_1 .. x^r_N`` (one row per
    step); a single 8-vector is broadcast over the horizon.
    """

    n_steps: int
    dt: float
    state_weights: np.ndarray
    input_weights: np.ndarray
    alpha: float
    reference: np.ndarray
    params: dyn.RobotParams = field(default_factory=dyn.RobotParams)
    state_lower: np.ndarray | None = None
    state_upper: np.ndarray | None = None
    input_lower: np.ndarray | None = None
    input_upper: np.ndarray | None = None
    robot_noise: np.ndarray | None = None
    jacobian_method: str = "analytic"

    def __post_init__(self):
        if int(self.n_steps) < 1:
            raise InvariantError("n_steps must be at least 1")
        self.n_steps = int(self.n_steps)
        if not self.dt > 0.0:
            raise InvariantError("dt must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InvariantError(f"alpha must lie in (0, 1), got {self.alpha}")
        self.state_weights = _psd("state_weights", self.state_weights, NX)
        self.input_weights = _psd("input_weights", self.input_weights, NU)
        ref = np.asarray(self.reference, dtype=float)
        if ref.shape == (NX,):
            ref = np.tile(ref, (self.n_steps, 1))
        if ref.shape != (self.n_steps, NX):
            raise InvariantError(f"reference must be ({self.n_steps}, {NX}), got {ref.shape}")
        self.reference = ref
        self.state_lower, self.state_upper = _bounds("state", self.state_lower, self.state_upper, NX)
        self.input_lower, self.input_upper = _bounds("input", self.input_lower, self.input_upper, NU)
        w = np.zeros((NX, NX)) if self.robot_noise is None else self.robot_noise
        self.robot_noise = _psd("robot_noise", w, NX)


@dataclass
class Obstacle:
    belief: GaussianBelief
    box: BoundingBox
    noise: np.ndarray = field(default_factory=lambda: np.zeros((NX, NX)))

    def __post_init__(self):
        if self.belief.dim != NX:
            raise InvariantError(f"obstacle belief must be {NX}-dimensional")
        self.noise = _psd("obstacle noise", self.noise, NX)


@dataclass
class OcpInstance:
    """Everything needed to assemble one NLP."""

    config: OcpConfig
    robot: GaussianBelief
    obstacles: list = field(default_factory=list)
    risk: RiskAllocation | None = None

    def __post_init__(self):
        if self.robot.dim != NX:
            raise InvariantError(f"robot belief must be {NX}-dimensional")
        if self.risk is None and self.obstacles:
            self.risk = uniform_risk_allocation(
                self.config.alpha, self.config.n_steps, len(self.obstacles)
            )
        if self.risk is not None and self.obstacles:
            if self.risk.per_step.shape != (self.config.n_steps, len(self.obstacles)):
                raise InvariantError("risk allocation shape does not match horizon x obstacles")


@dataclass
class Prediction:
    """Open-loop beliefs for steps ``0..N`` (index 0 is the initial belief)."""

    robot_means: np.ndarray
    robot_covs: np.ndarray
    obstacle_means: np.ndarray
    obstacle_covs: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.robot_means.shape[0] - 1

    def robot_belief(self, t: int) -> GaussianBelief:
        return GaussianBelief(self.robot_means[t], self.robot_covs[t])

    def obstacle_belief(self, t: int, i: int) -> GaussianBelief:
        return GaussianBelief(self.obstacle_means[t, i], self.obstacle_covs[t, i])


def predict_open_loop(initial_robot: GaussianBelief, inputs, initial_obstacles, config: OcpConfig,
                      obstacle_noise=None) -> Prediction:
    """Propagate means through the nominal models and covariances to first order."""
    u = np.asarray(inputs, dtype=float)
    n = config.n_steps
    if u.shape != (n, NU):
        raise DomainError(f"inputs must be ({n}, {NU}), got {u.shape}")
    n_obs = len(initial_obstacles)
    if obstacle_noise is None:
        obstacle_noise = [np.zeros((NX, NX))] * n_obs
    xm = np.zeros((n + 1, NX))
    xc = np.zeros((n + 1, NX, NX))
    xm[0], xc[0] = initial_robot.mean, initial_robot.cov
    xm[1:] = dyn.rollout(xm[0], u, config.params, config.dt)
    _, jac, _ = dyn.rk4_step_with_jacobians(xm[:-1], u, config.params, config.dt)
    for t in range(n):
        xc[t + 1] = dyn.propagate_covariance(xc[t], jac[t], config.robot_noise)

    ym = np.zeros((n + 1, n_obs, NX))
    yc = np.zeros((n + 1, n_obs, NX, NX))
    if n_obs:
        ym[0] = [b.mean for b in initial_obstacles]
        yc[0] = [b.cov for b in initial_obstacles]
        v = np.asarray(obstacle_noise, dtype=float)
        for t in range(n):
            jac = dyn.obstacle_jacobian(ym[t], config.dt)
            ym[t + 1] = dyn.obstacle_step(ym[t], config.dt)
            yc[t + 1] = dyn.propagate_covariance(yc[t], jac, v)
    return Prediction(xm, xc, ym, yc)


def _wrap(angle):
    return np.arctan2(np.sin(angle), np.cos(angle))


def _state_error(states, reference):
    e = np.asarray(states, dtype=float) - reference
    e[..., dyn.YAW] = _wrap(e[..., dyn.YAW])
    return e


def total_cost(states, inputs, config: OcpConfig) -> float:
    """Quadratic tracking cost over steps 1..N (yaw error wrapped to (-pi, pi])."""
    x = np.asarray(states, dtype=float)
    u = np.asarray(inputs, dtype=float)
    if x.shape != (config.n_steps, NX) or u.shape != (config.n_steps, NU):
        raise DomainError("states and inputs must both cover the horizon")
    e = _state_error(x, config.reference)
    return float(np.einsum("ti,ij,tj->", e, config.state_weights, e)
                 + np.einsum("ti,ij,tj->", u, config.input_weights, u))


def total_cost_gradient(states, inputs, config: OcpConfig):
    """Gradients of :func:`total_cost` with respect to states and inputs."""
    e = _state_error(states, config.reference)
    u = np.asarray(inputs, dtype=float)
    return 2.0 * e @ config.state_weights, 2.0 * u @ config.input_weights


class ObstacleField:
    """Obstacle constraint margins as functions of robot positions ``p_1..p_N``.

    Built from a :class:`Prediction`; all covariance-dependent quantities
    are frozen at construction.
    """

    def __init__(self, kind: ConstraintKind, prediction: Prediction, boxes, risk: RiskAllocation | None):
        self.kind = ConstraintKind.parse(kind)
        n_obs = prediction.obstacle_means.shape[1]
        if len(boxes) != n_obs:
            raise DomainError("need one bounding box per obstacle")
        self.n_obstacles = n_obs
        self.n_steps = prediction.n_steps
        pos = slice(0, 3)
        self.centers = prediction.obstacle_means[1:, :, pos]
        var_r = np.diagonal(prediction.robot_covs[1:, pos, pos], axis1=-2, axis2=-1)
        var_q = np.diagonal(prediction.obstacle_covs[1:, :, pos, pos], axis1=-2, axis2=-1)
        self.sigma2 = np.clip(var_r[:, None, :] + var_q, 0.0, None)
        self.semi = np.array([b.semi_sizes for b in boxes]).reshape(n_obs, 3)
        if n_obs and risk is None:
            raise DomainError("a risk allocation is required when obstacles are present")
        self.alpha = None if risk is None else np.asarray(risk.per_step, dtype=float)
        if self.kind is ConstraintKind.ELLIPSOID_CC:
            self.scaled = inflated_semi_sizes(self.semi[None], self.alpha, self.sigma2) if n_obs else None
        elif self.kind is ConstraintKind.ROBUST_SET_BOUND:
            self.scaled = self.semi[None] + ROBUST_SIGMAS * np.sqrt(self.sigma2)
        else:
            self.scaled = np.broadcast_to(self.semi[None], self.sigma2.shape)
            self.kappa = std_normal_quantile(1.0 - self.alpha) if n_obs else None

    def relative(self, positions):
        return np.asarray(positions, dtype=float)[:, None, :] - self.centers

    def margins(self, positions):
        """``(N, N_o)`` margins; nonnegative means the constraint holds."""
        if not self.n_obstacles:
            return np.zeros((self.n_steps, 0))
        r = self.relative(positions)
        g = ellipsoid_margin(r, self.scaled)
        if self.kind is not ConstraintKind.LINEARIZED_CC:
            return g
        a = ellipsoid_gradient(r, self.scaled)
        spread = np.sqrt(np.sum(a * a * self.sigma2, axis=-1))
        return g - self.kappa * spread

    def gradients(self, positions):
        """``(N, N_o, 3)`` derivatives of :meth:`margins` w.r.t. robot positions."""
        if not self.n_obstacles:
            return np.zeros((self.n_steps, 0, 3))
        r = self.relative(positions)
        a = ellipsoid_gradient(r, self.scaled)
        if self.kind is not ConstraintKind.LINEARIZED_CC:
            return a
        hd = ellipsoid_hessian_diag(self.scaled)
        spread = np.sqrt(np.sum(a * a * self.sigma2, axis=-1))
        safe = np.where(spread > 0.0, spread, 1.0)
        dspread = np.where((spread > 0.0)[..., None], a * self.sigma2 * hd / safe[..., None], 0.0)
        return a - self.kappa[..., None] * dspread


def obstacle_constraint_margins(kind, prediction: Prediction, boxes, risk: RiskAllocation):
    """Margins of the chosen constraint formulation at the predicted robot means."""
    field_ = ObstacleField(kind, prediction, boxes, risk)
    return field_.margins(prediction.robot_means[1:, 0:3])


class NlpProblem:
    """Smooth NLP callbacks for one chance-constrained OCP solve.

    Immutable after construction.  ``dependent`` marks the state block
    eliminated by the solver; its equality Jacobian is unit lower
    block-triangular.
    """

    dependent_lower_triangular = True

    def __init__(self, instance: OcpInstance, kind: ConstraintKind, prediction: Prediction):
        cfg = instance.config
        self.config = cfg
        self.kind = ConstraintKind.parse(kind)
        self.x0 = np.array(instance.robot.mean)
        self.prediction = prediction
        n = cfg.n_steps
        self.n_steps = n
        self.n_u = NU * n
        self.n = (NU + NX) * n
        self.n_eq = NX * n
        self.obstacles = ObstacleField(
            self.kind, prediction, [o.box for o in instance.obstacles], instance.risk
        )
        self.n_obstacles = self.obstacles.n_obstacles
        self.n_ineq = n * self.n_obstacles
        self.dependent = np.arange(self.n_u, self.n)
        self.lb = np.concatenate([np.tile(cfg.input_lower, n), np.tile(cfg.state_lower, n)])
        self.ub = np.concatenate([np.tile(cfg.input_upper, n), np.tile(cfg.state_upper, n)])
        self._cost_hess = np.zeros((self.n, self.n))
        for t in range(n):
            iu = slice(NU * t, NU * (t + 1))
            ix = slice(self.n_u + NX * t, self.n_u + NX * (t + 1))
            self._cost_hess[iu, iu] = 2.0 * cfg.input_weights
            self._cost_hess[ix, ix] = 2.0 * cfg.state_weights
        self._pos_cols = (self.n_u + NX * np.arange(n)[:, None] + np.arange(3)[None, :])
        for arr in (self.lb, self.ub, self._cost_hess, self.dependent):
            arr.setflags(write=False)

    # layout -------------------------------------------------------------
    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        return z[: self.n_u].reshape(self.n_steps, NU), z[self.n_u:].reshape(self.n_steps, NX)

    def pack(self, inputs, states):
        return np.concatenate([np.ravel(inputs), np.ravel(states)])

    def rollout(self, inputs):
        """Decision vector with states simulated from ``inputs`` (zero defects)."""
        u = np.asarray(inputs, dtype=float).reshape(self.n_steps, NU)
        return self.pack(u, dyn.rollout(self.x0, u, self.config.params, self.config.dt))

    def correct(self, z):
        """Second-order correction: keep the inputs, re-simulate the states."""
        u, _ = self.unpack(z)
        return self.rollout(u)

    # callbacks ------------------------------------------------------------
    def cost(self, z):
        u, x = self.unpack(z)
        return total_cost(x, u, self.config)

    def cost_grad(self, z):
        u, x = self.unpack(z)
        gx, gu = total_cost_gradient(x, u, self.config)
        return self.pack(gu, gx)

    def _previous_states(self, x):
        return np.vstack([self.x0[None], x[:-1]])

    def eq(self, z):
        u, x = self.unpack(z)
        f = dyn.rk4_step(self._previous_states(x), u, self.config.params, self.config.dt)
        return (x - f).ravel()

    def eq_jac(self, z):
        u, x = self.unpack(z)
        _, a, b = dyn.rk4_step_with_jacobians(self._previous_states(x), u,
                                              self.config.params, self.config.dt)
        if self.config.jacobian_method == "fd":
            a = np.array([dyn.robot_jacobian(xp, up, self.config.params, self.config.dt, "fd")
                          for xp, up in zip(self._previous_states(x), u)])
            b = np.array([dyn.robot_input_jacobian(xp, up, self.config.params, self.config.dt, "fd")
                          for xp, up in zip(self._previous_states(x), u)])
        n = self.n_steps
        jac = np.zeros((self.n_eq, self.n))
        for t in range(n):
            rows = slice(NX * t, NX * (t + 1))
            jac[rows, NU * t:NU * (t + 1)] = -b[t]
            c0 = self.n_u + NX * t
            jac[rows, c0:c0 + NX] = np.eye(NX)
            if t:
                jac[rows, c0 - NX:c0] = -a[t]
        return jac

    def ineq(self, z):
        _, x = self.unpack(z)
        return self.obstacles.margins(x[:, 0:3]).ravel()

    def ineq_jac(self, z):
        _, x = self.unpack(z)
        g = self.obstacles.gradients(x[:, 0:3])
        jac = np.zeros((self.n_ineq, self.n))
        if self.n_ineq:
            rows = np.arange(self.n_ineq).reshape(self.n_steps, self.n_obstacles)
            cols = np.broadcast_to(self._pos_cols[:, None, :], g.shape)
            jac[np.broadcast_to(rows[..., None], g.shape), cols] = g
        return jac

    def hessian(self, z, mu_ineq):
        """Gauss-Newton Hessian: the (constant) cost Hessian.

        Constraint and dynamics curvature are left out.  The obstacle term
        ``-mu * d2h`` is negative definite in the robot position; adding it
        (in full or projected on the constraint tangent planes) makes the
        reduced Hessian indefinite and the regularized steps converge more
        slowly than the plain cost Hessian does.
        """
        return self._cost_hess

    def obstacle_margins(self, z):
        return self.ineq(z).reshape(self.n_steps, self.n_obstacles)

    def violation(self, z):
        return constraint_violation(self, z)


def assemble_nlp(instance: OcpInstance, kind, warm_inputs=None) -> NlpProblem:
    """Build the NLP, freezing covariances along the warm-start inputs."""
    cfg = instance.config
    if warm_inputs is None:
        warm_inputs = np.zeros((cfg.n_steps, NU))
    warm_inputs = np.asarray(warm_inputs, dtype=float)
    if warm_inputs.shape != (cfg.n_steps, NU):
        raise DomainError(f"warm-start inputs must be ({cfg.n_steps}, {NU})")
    pred = predict_open_loop(
        instance.robot, warm_inputs, [o.belief for o in instance.obstacles], cfg,
        [o.noise for o in instance.obstacles],
    )
    return NlpProblem(instance, kind, pred)


def shift_solution(inputs, states=None):
    """Warm start for the next MPC tick: drop the first step, repeat the last."""
    u = np.asarray(inputs, dtype=float)
    u_next = np.vstack([u[1:], u[-1:]])
    if states is None:
        return u_next
    x = np.asarray(states, dtype=float)
    return u_next, np.vstack([x[1:], x[-1:]])


def solve_ocp(instance: OcpInstance, kind=ConstraintKind.ELLIPSOID_CC, warm_inputs=None,
              warm_states=None, tol: float = 1e-6, max_iter: int = 100) -> tuple[Solution, NlpProblem]:
    """Assemble and solve; returns the solution together with its NLP."""
    problem = assemble_nlp(instance, kind, warm_inputs)
    if warm_inputs is None:
        init = problem.rollout(np.zeros((problem.n_steps, NU)))
    elif warm_states is None:
        init = problem.rollout(warm_inputs)
    else:
        init = problem.pack(warm_inputs, warm_states)
    return solve_sqp(problem, init, tol=tol, max_iter=max_iter), problem


def step_collision_probabilities(instance: OcpInstance, inputs, n_samples: int, seed: int) -> np.ndarray:
    """Monte Carlo collision probability per step and obstacle, ``(N, N_o)``.

    Beliefs are re-predicted along ``inputs`` so the check does not rely on
    the covariances frozen inside the NLP.  Each entry uses its own seed
    substream.
    """
    cfg = instance.config
    noise = [o.noise for o in instance.obstacles]
    pred = predict_open_loop(instance.robot, inputs, [o.belief for o in instance.obstacles], cfg, noise)
    n, n_obs = cfg.n_steps, len(instance.obstacles)
    seeds = np.random.SeedSequence(seed).generate_state(max(n * n_obs, 1), dtype=np.uint64)
    out = np.zeros((n, n_obs))
    pos = slice(0, 3)
    for t in range(n):
        for i, ob in enumerate(instance.obstacles):
            mean = pred.robot_means[t + 1, pos] - pred.obstacle_means[t + 1, i, pos]
            cov = pred.robot_covs[t + 1, pos, pos] + pred.obstacle_covs[t + 1, i, pos, pos]
            out[t, i] = mc_collision_probability(GaussianBelief(mean, cov), ob.box, n_samples,
                                                 int(seeds[t * n_obs + i]))
    return out
