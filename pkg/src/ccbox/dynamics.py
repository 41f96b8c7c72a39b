"""Robot (quadrotor velocity-reference) and obstacle (constant velocity) models.

State layout for both robot and obstacles is
``[px, py, pz, vx, vy, vz, psi, psi_dot]`` with the velocity expressed in
the yaw-aligned local frame.  All array functions broadcast over leading
axes, so a whole horizon can be evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .errors import DomainError, InvariantError

NX = 8
NU = 4
POS = slice(0, 3)
VEL = slice(3, 6)
YAW = 6
YAW_RATE = 7


@dataclass(frozen=True)
class RobotParams:
    k: tuple = (1.0, 1.0, 1.0)
    k_psi: float = 1.0
    tau: tuple = (0.5, 0.5, 0.5)
    tau_psi: float = 0.5

    def __post_init__(self):
        k = tuple(float(x) for x in self.k)
        tau = tuple(float(x) for x in self.tau)
        if len(k) != 3 or len(tau) != 3:
            raise InvariantError("k and tau need three components")
        if min(k + tau + (self.k_psi, self.tau_psi)) <= 0.0:
            raise InvariantError("gains and time constants must be strictly positive")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "k_psi", float(self.k_psi))
        object.__setattr__(self, "tau_psi", float(self.tau_psi))

    def input_matrix(self) -> np.ndarray:
        """Constant ``df/du`` of the continuous dynamics."""
        b = np.zeros((NX, NU))
        b[3, 0], b[4, 1], b[5, 2] = (k / t for k, t in zip(self.k, self.tau))
        b[YAW_RATE, 3] = self.k_psi / self.tau_psi
        return b


@dataclass(frozen=True)
class _State:
    p: np.ndarray
    v: np.ndarray
    psi: float
    psi_dot: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3)
        v = np.asarray(self.v, dtype=float).reshape(3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))
                and np.isfinite(self.psi) and np.isfinite(self.psi_dot)):
            raise InvariantError("state entries must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "psi", float(self.psi))
        object.__setattr__(self, "psi_dot", float(self.psi_dot))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, [self.psi, self.psi_dot]])

    def __array__(self, dtype=None, copy=None):
        return self.as_array() if dtype is None else self.as_array().astype(dtype)

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (NX,):
            raise DomainError(f"state must have {NX} entries, got shape {x.shape}")
        return cls(x[POS], x[VEL], x[YAW], x[YAW_RATE])


class RobotState(_State):
    """Robot position, local-frame velocity, yaw and yaw rate."""


class ObstacleState(_State):
    """Obstacle position, body-frame velocity, yaw and yaw rate."""


@dataclass(frozen=True)
class DisturbanceSpec:
    """Per-step process-noise covariances for the robot (W) and obstacles (V)."""

    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for name in ("W", "V"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (NX, NX):
                raise InvariantError(f"{name} must be {NX}x{NX}")
            m = 0.5 * (m + m.T)
            if np.linalg.eigvalsh(m)[0] < -1e-12 * max(1.0, np.linalg.norm(m)):
                raise InvariantError(f"{name} is not positive semidefinite")
            object.__setattr__(self, name, m)


def _as_array(x):
    return x.as_array() if isinstance(x, _State) else np.asarray(x, dtype=float)


def _rewrap(template, x):
    if isinstance(template, _State):
        return type(template).from_array(x)
    return x


def yaw_rotation(psi) -> np.ndarray:
    """Planar rotation about z, shape ``(..., 3, 3)``."""
    psi = np.asarray(psi, dtype=float)
    c, s = np.cos(psi), np.sin(psi)
    r = np.zeros(psi.shape + (3, 3))
    r[..., 0, 0], r[..., 0, 1] = c, -s
    r[..., 1, 0], r[..., 1, 1] = s, c
    r[..., 2, 2] = 1.0
    return r


def _world_velocity(x):
    c, s = np.cos(x[..., YAW]), np.sin(x[..., YAW])
    vx, vy, vz = x[..., 3], x[..., 4], x[..., 5]
    return np.stack([c * vx - s * vy, s * vx + c * vy, vz], axis=-1)


def _world_velocity_jac(x):
    """d(R(psi) v)/dx, shape ``(..., 3, 8)``."""
    c, s = np.cos(x[..., YAW]), np.sin(x[..., YAW])
    vx, vy = x[..., 3], x[..., 4]
    j = np.zeros(x.shape[:-1] + (3, NX))
    j[..., 0, 3], j[..., 0, 4] = c, -s
    j[..., 1, 3], j[..., 1, 4] = s, c
    j[..., 2, 5] = 1.0
    j[..., 0, YAW] = -s * vx - c * vy
    j[..., 1, YAW] = c * vx - s * vy
    return j


def robot_derivative(state, u, params: RobotParams):
    """Continuous-time robot dynamics ``dx/dt``."""
    x = _as_array(state)
    u = np.asarray(u, dtype=float)
    k = np.asarray(params.k)
    tau = np.asarray(params.tau)
    dx = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (NX,)))
    dx[..., POS] = _world_velocity(x)
    dx[..., VEL] = (-x[..., VEL] + k * u[..., :3]) / tau
    dx[..., YAW] = x[..., YAW_RATE]
    dx[..., YAW_RATE] = (-x[..., YAW_RATE] + params.k_psi * u[..., 3]) / params.tau_psi
    return dx


def _derivative_jac(x, params):
    a = np.zeros(x.shape[:-1] + (NX, NX))
    a[..., POS, :] = _world_velocity_jac(x)
    idx = np.arange(3, 6)
    a[..., idx, idx] = -1.0 / np.asarray(params.tau)
    a[..., YAW, YAW_RATE] = 1.0
    a[..., YAW_RATE, YAW_RATE] = -1.0 / params.tau_psi
    return a


def rk4_step(state, u, params: RobotParams, dt: float):
    """One classical Runge-Kutta step with zero-order-hold input."""
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    x = _as_array(state)
    k1 = robot_derivative(x, u, params)
    k2 = robot_derivative(x + 0.5 * dt * k1, u, params)
    k3 = robot_derivative(x + 0.5 * dt * k2, u, params)
    k4 = robot_derivative(x + dt * k3, u, params)
    return _rewrap(state, x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def rk4_step_with_jacobians(x, u, params: RobotParams, dt: float):
    """RK4 step plus the exact Jacobians of the discrete map.

    Differentiates through the four stages, so the result equals the
    derivative of :func:`rk4_step` to rounding error.  Returns
    ``(x_next, A, B)`` with ``A = d x_next / d x`` and ``B = d x_next / d u``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    x = np.broadcast_to(x, lead + (NX,))
    eye = np.broadcast_to(np.eye(NX), lead + (NX, NX))
    b = params.input_matrix()
    total = np.zeros(lead + (NX,))
    total_x = np.zeros(lead + (NX, NX))
    total_u = np.zeros(lead + (NX, NU))
    k, kx, ku = None, None, None
    for c, w in ((0.0, 1.0), (0.5, 2.0), (0.5, 2.0), (1.0, 1.0)):
        if k is None:
            xs, sx, su = x, eye, np.zeros(lead + (NX, NU))
        else:
            xs = x + c * dt * k
            sx = eye + c * dt * kx
            su = c * dt * ku
        a = _derivative_jac(xs, params)
        k = robot_derivative(xs, u, params)
        kx = a @ sx
        ku = a @ su + b
        total = total + w * k
        total_x = total_x + w * kx
        total_u = total_u + w * ku
    h = dt / 6.0
    return x + h * total, eye + h * total_x, h * total_u


def rollout(x0, inputs, params: RobotParams, dt: float) -> np.ndarray:
    """States ``x_1..x_N`` of :func:`rk4_step` applied along ``inputs``.

    Same arithmetic as the batched step, with the per-call overhead of the
    broadcasting machinery removed; used in the inner loop of the planner.
    """
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    u = np.asarray(inputs, dtype=float).reshape(-1, NU)
    gain = np.append(np.asarray(params.k, dtype=float), params.k_psi)
    inv_tau = 1.0 / np.append(np.asarray(params.tau, dtype=float), params.tau_psi)

    def deriv(x, g):
        c, s = math.cos(x[6]), math.sin(x[6])
        lag = (g - x[[3, 4, 5, 7]]) * inv_tau
        return np.array([c * x[3] - s * x[4], s * x[3] + c * x[4], x[5],
                         lag[0], lag[1], lag[2], x[7], lag[3]])

    out = np.empty((u.shape[0], NX))
    x = np.asarray(x0, dtype=float).reshape(NX)
    for t in range(u.shape[0]):
        g = gain * u[t]
        k1 = deriv(x, g)
        k2 = deriv(x + 0.5 * dt * k1, g)
        k3 = deriv(x + 0.5 * dt * k2, g)
        k4 = deriv(x + dt * k3, g)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[t] = x
    return out


def _fd_jacobian(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[..., i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def robot_jacobian(state, u, params: RobotParams, dt: float, method: str = "analytic"):
    """``d rk4_step / d state`` as an 8x8 matrix (``method='fd'`` for central differences)."""
    x = _as_array(state)
    if method == "analytic":
        return rk4_step_with_jacobians(x, u, params, dt)[1]
    if method == "fd":
        return _fd_jacobian(lambda z: rk4_step(z, u, params, dt), x)
    raise DomainError(f"unknown jacobian method {method!r}")


def robot_input_jacobian(state, u, params: RobotParams, dt: float, method: str = "analytic"):
    x = _as_array(state)
    if method == "analytic":
        return rk4_step_with_jacobians(x, u, params, dt)[2]
    if method == "fd":
        return _fd_jacobian(lambda w: rk4_step(x, w, params, dt), np.asarray(u, dtype=float))
    raise DomainError(f"unknown jacobian method {method!r}")


def obstacle_step(state, dt: float):
    """Explicit Euler step of the constant-velocity, constant-yaw-rate model."""
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    y = _as_array(state)
    out = y.copy()
    out[..., POS] = y[..., POS] + dt * _world_velocity(y)
    out[..., YAW] = y[..., YAW] + dt * y[..., YAW_RATE]
    return _rewrap(state, out)


def obstacle_jacobian(state, dt: float, method: str = "analytic"):
    y = _as_array(state)
    if method == "fd":
        return _fd_jacobian(lambda z: obstacle_step(z, dt), y)
    if method != "analytic":
        raise DomainError(f"unknown jacobian method {method!r}")
    j = np.broadcast_to(np.eye(NX), y.shape[:-1] + (NX, NX)).copy()
    j[..., POS, :] += dt * _world_velocity_jac(y)
    j[..., YAW, YAW_RATE] = dt
    return j


def propagate_covariance(cov, jac, noise):
    """First-order covariance update ``J cov J^T + noise`` (symmetrized)."""
    cov = np.asarray(cov, dtype=float)
    jac = np.asarray(jac, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if cov.ndim == 0:
        cov, jac, noise = (np.reshape(m, (1, 1)) for m in (cov, jac, noise))
    n = cov.shape[-1]
    if cov.shape[-2:] != (n, n) or jac.shape[-2:] != (n, n) or noise.shape[-2:] != (n, n):
        raise DomainError(
            f"dimension mismatch: cov {cov.shape}, jac {jac.shape}, noise {noise.shape}"
        )
    out = jac @ cov @ np.swapaxes(jac, -1, -2) + noise
    return 0.5 * (out + np.swapaxes(out, -1, -2))
