import math

import numpy as np
import pytest

import frozen as F
import oracles as O
from ccbox import dynamics as dyn
from ccbox.errors import DomainError, InvariantError

P = dyn.RobotParams((1.0, 1.2, 0.8), 0.9, (0.5, 0.4, 0.6), 0.3)


def state(p=(0, 0, 0), v=(0, 0, 0), psi=0.0, psi_dot=0.0):
    return np.array([*p, *v, psi, psi_dot], dtype=float)


def test_params_invariants():
    with pytest.raises(InvariantError):
        dyn.RobotParams(tau=(0.5, 0.0, 0.5))
    with pytest.raises(InvariantError):
        dyn.RobotParams(k_psi=-1.0)
    with pytest.raises(InvariantError):
        dyn.RobotParams(k=(1.0, 1.0))


def test_state_types_roundtrip():
    x = state((1, 2, 3), (4, 5, 6), 0.7, -0.2)
    s = dyn.RobotState.from_array(x)
    assert np.array_equal(s.as_array(), x)
    assert isinstance(dyn.rk4_step(s, np.zeros(4), P, 0.1), dyn.RobotState)
    assert isinstance(dyn.obstacle_step(dyn.ObstacleState.from_array(x), 0.1), dyn.ObstacleState)
    with pytest.raises(InvariantError):
        dyn.RobotState([0, 0, np.inf], [0, 0, 0], 0.0, 0.0)


def test_disturbance_spec():
    dyn.DisturbanceSpec(np.eye(8) * 1e-3, np.zeros((8, 8)))
    with pytest.raises(InvariantError):
        dyn.DisturbanceSpec(-np.eye(8), np.zeros((8, 8)))


def test_derivative_examples():
    assert np.array_equal(dyn.robot_derivative(state(), np.zeros(4), P), np.zeros(8))
    d = dyn.robot_derivative(state(v=(1, 0, 0), psi=math.pi / 2), np.zeros(4), dyn.RobotParams())
    assert np.allclose(d[:3], [0, 1, 0], atol=1e-15)
    d = dyn.robot_derivative(state(), np.array([0, 0, 1.0, 0]), dyn.RobotParams(k=(1, 1, 1), tau=(0.5, 0.5, 0.5)))
    assert d[5] == pytest.approx(2.0)


def test_rk4_examples():
    assert np.array_equal(dyn.rk4_step(state(), np.zeros(4), P, 0.3), state())
    unit = dyn.RobotParams((1, 1, 1), 1.0, (1, 1, 1), 1.0)
    x = dyn.rk4_step(state(), np.array([1.0, 0, 0, 0]), unit, 0.1)
    assert x[3] == pytest.approx(F.LAG_STEP, abs=1e-6)  # exact lag value 1 - exp(-0.1)
    assert x[3] == pytest.approx(F.LAG_STEP, abs=1e-7)  # RK4 local error ~ dt^5 / 120
    with pytest.raises(DomainError):
        dyn.rk4_step(state(), np.zeros(4), P, 0.0)


def test_rk4_halving_reduces_error_sixteenfold():
    unit = dyn.RobotParams((1, 1, 1), 1.0, (1, 1, 1), 1.0)
    u = np.array([1.0, 0, 0, 0])
    dt = 0.4
    e1 = abs(dyn.rk4_step(state(), u, unit, dt)[3] - O.lag_exact(0, 1, 1, 1, dt))
    half = dyn.rk4_step(dyn.rk4_step(state(), u, unit, dt / 2), u, unit, dt / 2)
    e2 = abs(half[3] - O.lag_exact(0, 1, 1, 1, dt))
    assert 14.0 < e1 / e2 < 36.0  # global order 4 gives 16; one big step vs two is local (32) vs global


def test_rollout_matches_repeated_steps():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(15, 4))
    x0 = rng.normal(size=8)
    xs = dyn.rollout(x0, u, P, 0.2)
    x = x0
    for t in range(15):
        x = dyn.rk4_step(x, u[t], P, 0.2)
        assert np.allclose(xs[t], x, rtol=0, atol=1e-14)


def test_robot_jacobian_structure():
    rng = np.random.default_rng(1)
    u = rng.normal(size=4)
    j1 = dyn.robot_jacobian(rng.normal(size=8), u, P, 0.2)
    j2 = dyn.robot_jacobian(rng.normal(size=8), u, P, 0.2)
    lin = [3, 4, 5, 7]
    assert np.allclose(j1[np.ix_(lin, range(8))], j2[np.ix_(lin, range(8))], atol=1e-15)
    # at psi = 0 and forward speed 1, yaw pushes position toward +y
    dt = 1e-3
    j = dyn.robot_jacobian(state(v=(1, 0, 0)), np.zeros(4), P, dt)
    assert j[1, 6] / dt == pytest.approx(1.0, rel=1e-2)


def test_robot_jacobians_match_fd():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, u = rng.normal(size=8), rng.normal(size=4)
        ja = dyn.robot_jacobian(x, u, P, 0.2)
        jn = O.central_difference(lambda z: dyn.rk4_step(z, u, P, 0.2), x)
        assert np.allclose(ja, jn, rtol=1e-6, atol=1e-8)
        ba = dyn.robot_input_jacobian(x, u, P, 0.2)
        bn = O.central_difference(lambda w: dyn.rk4_step(x, w, P, 0.2), u)
        assert np.allclose(ba, bn, rtol=1e-6, atol=1e-8)
        assert np.allclose(dyn.robot_jacobian(x, u, P, 0.2, "fd"), ja, rtol=1e-6, atol=1e-8)
    with pytest.raises(DomainError):
        dyn.robot_jacobian(x, u, P, 0.2, "complex")


def test_obstacle_step_examples():
    y = dyn.obstacle_step(state(v=(1, 0, 0)), 0.2)
    assert np.allclose(y[:3], [0.2, 0, 0])
    assert np.array_equal(dyn.obstacle_step(state(p=(1, 2, 3), psi=0.4), 0.5), state(p=(1, 2, 3), psi=0.4))
    y = dyn.obstacle_step(state(v=(1, 0, 0), psi=math.pi), 1.0)
    assert np.allclose(y[:3], [-1, 0, 0], atol=1e-12)
    y = dyn.obstacle_step(state(v=(1, 2, 3), psi_dot=0.5), 0.2)
    assert np.allclose(y[3:], [1, 2, 3, 0.1, 0.5])


def test_obstacle_jacobian_examples():
    rng = np.random.default_rng(4)
    x = rng.normal(size=8)
    j = dyn.obstacle_jacobian(x, 0.3)
    assert np.array_equal(j[:3, :3], np.eye(3))
    assert np.allclose(j[:3, 3:6], dyn.yaw_rotation(x[6]) * 0.3)
    jn = O.central_difference(lambda z: dyn.obstacle_step(z, 0.3), x)
    assert np.allclose(j, jn, rtol=1e-6, atol=1e-9)


def test_propagate_covariance_examples():
    s = np.diag([1.0, 2.0])
    assert np.array_equal(dyn.propagate_covariance(s, np.eye(2), np.zeros((2, 2))), s)
    assert dyn.propagate_covariance(1.0, 2.0, 3.0)[0, 0] == 7.0
    with pytest.raises(DomainError):
        dyn.propagate_covariance(np.eye(2), np.eye(3), np.eye(2))


def test_propagate_covariance_matches_sampling():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(4, 4))
    cov = a @ a.T + np.eye(4)
    jac = rng.normal(size=(4, 4))
    w = np.diag([0.5, 0.1, 0.2, 0.3])
    exact = dyn.propagate_covariance(cov, jac, w)
    sample = O.sample_pushforward_cov(jac, cov, w, 100_000, 9)
    assert np.all(np.abs(sample - exact) <= 0.02 * np.sqrt(np.outer(np.diag(exact), np.diag(exact))))


def test_obstacle_variance_closed_form():
    v = np.diag([0, 0, 0, 0.0012, 0.0012, 0.0012, 0, 0])
    cov = np.diag([0.01, 0.01, 0.01, 0.25, 0.25, 0, 0, 0])
    y = state(v=(1.0, 0, 0))
    for _ in range(10):
        cov = dyn.propagate_covariance(cov, dyn.obstacle_jacobian(y, 0.2), v)
        y = dyn.obstacle_step(y, 0.2)
    assert cov[0, 0] == pytest.approx(F.CV_VAR_10_STEPS, rel=1e-12)
