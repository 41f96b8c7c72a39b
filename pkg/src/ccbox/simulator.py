"""Closed-loop MPC among social-force pedestrians.

Each control tick measures the pedestrians (position plus Gaussian noise),
runs a Kalman filter on the constant-velocity obstacle model, solves the
chance-constrained OCP warm-started from the previous plan and holds the
first input while the world integrates on a finer substep.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics as dyn
from .bounds import BoundingBox, psd_factor
from .errors import DomainError, InvariantError, SolverError
from .gaussian import GaussianBelief
from .ocp import (
    ConstraintKind,
    Obstacle,
    OcpConfig,
    OcpInstance,
    assemble_nlp,
    shift_solution,
    solve_ocp,
)

NX, NU = dyn.NX, dyn.NU


@dataclass(frozen=True)
class SocialForceParams:
    tau: float = 0.5
    A: float = 2.0
    B: float = 0.8
    a_max: float = 5.0
    max_speed_factor: float = 1.3
    waypoint_tolerance: float = 0.3


@dataclass
class Pedestrian:
    position: np.ndarray
    velocity: np.ndarray
    waypoints: np.ndarray
    desired_speed: float
    radius: float = 0.3
    target: int = 0
    loop: bool = True

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.shape[0] == 0 or self.waypoints.shape[1] != 2:
            raise InvariantError("a pedestrian needs a nonempty list of 2-D waypoints")
        if not self.desired_speed > 0.0:
            raise InvariantError("desired speed must be positive")

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[self.target]

    def copy(self) -> "Pedestrian":
        return replace(self, position=self.position.copy(), velocity=self.velocity.copy())


def _repulsion(diff, gap, params):
    dist = float(np.hypot(diff[0], diff[1]))
    if dist < 1e-12:
        n = np.array([1.0, 0.0])
    else:
        n = diff / dist
    return params.A * math.exp((gap - dist) / params.B) * n


def social_force_accel(ped: Pedestrian, others, robot_pos=None, params: SocialForceParams = SocialForceParams(),
                       robot_radius: float = 0.3) -> np.ndarray:
    """Goal attraction plus exponential repulsion from others and the robot."""
    to_goal = ped.goal - ped.position
    dist = float(np.hypot(*to_goal))
    e = to_goal / dist if dist > 1e-12 else np.zeros(2)
    acc = (ped.desired_speed * e - ped.velocity) / params.tau
    for other in others:
        if other is ped:
            raise DomainError("a pedestrian cannot repel itself")
        acc = acc + _repulsion(ped.position - other.position, ped.radius + other.radius, params)
    if robot_pos is not None:
        r = np.asarray(robot_pos, dtype=float)[:2]
        acc = acc + _repulsion(ped.position - r, ped.radius + robot_radius, params)
    norm = float(np.hypot(*acc))
    if norm > params.a_max:
        acc = acc * (params.a_max / norm)
    return acc


@dataclass
class World:
    t: float
    robot: np.ndarray
    pedestrians: list

    def copy(self) -> "World":
        return World(self.t, self.robot.copy(), [p.copy() for p in self.pedestrians])


def step_world(world: World, u, dt: float, rng: np.random.Generator | None = None, noise_cov=None,
               robot_params: dyn.RobotParams = dyn.RobotParams(),
               sf_params: SocialForceParams = SocialForceParams(), robot_radius: float = 0.3) -> World:
    """Advance robot (RK4 + sampled disturbance) and pedestrians by ``dt``.

    ``noise_cov`` is the covariance of the disturbance added in this call.
    Pedestrians use semi-implicit Euler with accelerations evaluated on the
    pre-step state.
    """
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    x = dyn.rk4_step(world.robot, np.asarray(u, dtype=float), robot_params, dt)
    if noise_cov is not None and rng is not None:
        x = x + psd_factor(noise_cov) @ rng.standard_normal(NX)
    peds = world.pedestrians
    accs = [social_force_accel(p, [o for o in peds if o is not p], world.robot, sf_params, robot_radius)
            for p in peds]
    new_peds = []
    for p, a in zip(peds, accs):
        q = p.copy()
        q.velocity = q.velocity + dt * a
        vmax = sf_params.max_speed_factor * q.desired_speed
        speed = float(np.hypot(*q.velocity))
        if speed > vmax:
            q.velocity *= vmax / speed
        q.position = q.position + dt * q.velocity
        if np.hypot(*(q.goal - q.position)) < sf_params.waypoint_tolerance:
            if q.target + 1 < len(q.waypoints):
                q.target += 1
            elif q.loop:
                q.target = 0
        new_peds.append(q)
    return World(world.t + dt, x, new_peds)


def kalman_update(belief: GaussianBelief, measurement, meas_var) -> GaussianBelief:
    """Position-only measurement update (Joseph form)."""
    z = np.asarray(measurement, dtype=float).reshape(3)
    r_diag = np.broadcast_to(np.asarray(meas_var, dtype=float), (3,))
    if np.any(r_diag < 0.0):
        raise InvariantError("measurement variance must be nonnegative")
    if np.all(np.isinf(r_diag)):
        return belief
    p = belief.cov
    h = np.zeros((3, belief.dim))
    h[:, :3] = np.eye(3)
    s = p[:3, :3] + np.diag(r_diag)
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise InvariantError("innovation covariance is not positive definite") from None
    gain = np.linalg.solve(s, p[:3, :]).T
    mean = belief.mean + gain @ (z - belief.mean[:3])
    ikh = np.eye(belief.dim) - gain @ h
    cov = ikh @ p @ ikh.T + gain @ np.diag(r_diag) @ gain.T
    return GaussianBelief(mean, cov)


def kalman_predict(belief: GaussianBelief, dt: float, noise) -> GaussianBelief:
    jac = dyn.obstacle_jacobian(belief.mean, dt)
    return GaussianBelief(dyn.obstacle_step(belief.mean, dt),
                          dyn.propagate_covariance(belief.cov, jac, noise))


# -- scenario-level setup -----------------------------------------------------

@dataclass(frozen=True)
class FixedReference:
    state: np.ndarray

    def states(self, times) -> np.ndarray:
        return np.tile(np.asarray(self.state, dtype=float), (len(times), 1))


@dataclass(frozen=True)
class PathReference:
    """Point moving along a polyline at constant speed (closed if ``loop``)."""

    waypoints: np.ndarray
    z: float
    speed: float
    loop: bool = True
    start_offset: float = 0.0

    def _geometry(self):
        pts = np.asarray(self.waypoints, dtype=float)
        if self.loop:
            pts = np.vstack([pts, pts[:1]])
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        return pts, seg, lengths, np.concatenate([[0.0], np.cumsum(lengths)])

    def states(self, times) -> np.ndarray:
        pts, seg, lengths, cum = self._geometry()
        total = cum[-1]
        s = self.start_offset + self.speed * np.asarray(times, dtype=float)
        s = np.mod(s, total) if self.loop else np.clip(s, 0.0, total)
        idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(lengths) - 1)
        frac = (s - cum[idx]) / lengths[idx]
        pos = pts[idx] + frac[:, None] * seg[idx]
        tangent = seg[idx] / lengths[idx][:, None]
        out = np.zeros((len(s), NX))
        out[:, 0:2] = pos
        out[:, 2] = self.z
        moving = self.loop | (s < total)
        # world-frame velocity in the local-velocity slots (yaw reference is 0)
        out[:, 3:5] = np.where(np.atleast_1d(moving)[:, None], self.speed * tangent, 0.0)
        return out


@dataclass(frozen=True)
class CrowdPreset:
    """Pedestrians spread along a shared path with seed-driven jitter."""

    count: int
    path: np.ndarray
    desired_speed: float = 1.0
    speed_jitter: float = 0.0
    offset_jitter: float = 0.0
    reverse: bool = False
    phase: float = 0.5

    def spawn(self, rng: np.random.Generator, radius: float) -> list:
        pts = np.asarray(self.path, dtype=float)
        if self.reverse:
            pts = pts[::-1]
        ref = PathReference(pts, 0.0, 1.0, loop=True)
        _, _, _, cum = ref._geometry()
        total = cum[-1]
        peds = []
        for k in range(self.count):
            s = (k + self.phase + rng.uniform(-self.offset_jitter, self.offset_jitter)) * total / self.count
            s = float(np.mod(s, total))
            st = ref.states([s])[0]
            target = int(np.searchsorted(cum, s, side="right")) % len(pts)
            speed = self.desired_speed * (1.0 + rng.uniform(-self.speed_jitter, self.speed_jitter))
            peds.append(Pedestrian(st[:2], np.zeros(2), pts, speed, radius, target, True))
        return peds


@dataclass
class PedestrianSetup:
    semi_sizes: np.ndarray
    height: float = 1.0
    radius: float = 0.3
    measurement_var: float = 2.5e-3
    process_noise: np.ndarray = field(default_factory=lambda: np.zeros((NX, NX)))
    initial_cov: np.ndarray = field(default_factory=lambda: np.eye(NX))
    agents: list = field(default_factory=list)
    crowd: CrowdPreset | None = None
    social_force: SocialForceParams = field(default_factory=SocialForceParams)

    def spawn(self, rng) -> list:
        peds = [p.copy() for p in self.agents]
        if self.crowd is not None and self.crowd.count:
            peds.extend(self.crowd.spawn(rng, self.radius))
        return peds


@dataclass
class SimSetup:
    """Inputs of :func:`run_closed_loop` (typically built from a scenario file)."""

    ocp: OcpConfig
    robot_state: np.ndarray
    robot_cov: np.ndarray
    reference: object
    pedestrians: PedestrianSetup | None = None
    substep: float = 0.01
    control_period: float | None = None
    kind: ConstraintKind = ConstraintKind.ELLIPSOID_CC
    tol: float = 1e-4
    max_iter: int = 15
    robot_radius: float = 0.3
    planner: bool = True
    accept_violation: float = 1e-3

    def __post_init__(self):
        if self.control_period is None:
            self.control_period = self.ocp.dt
        ratio = self.control_period / self.substep
        if self.substep <= 0.0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise InvariantError("control period must be a positive multiple of the substep")


@dataclass
class SimLog:
    """Per-tick records of a closed-loop run (all arrays share axis 0)."""

    times: np.ndarray
    robot: np.ndarray
    obstacles: np.ndarray
    est_mean: np.ndarray
    est_var: np.ndarray
    inputs: np.ndarray
    plans: np.ndarray
    solve_time: np.ndarray
    iterations: np.ndarray
    solver_failed: np.ndarray
    plan_unsafe: np.ndarray
    solver_error: np.ndarray
    slack_used: np.ndarray
    collided: np.ndarray
    min_clearance: np.ndarray
    semi_sizes: np.ndarray

    @property
    def n_obstacles(self) -> int:
        return self.obstacles.shape[1]

    @property
    def any_collision(self) -> bool:
        return bool(np.any(self.collided))


def box_clearance(robot_pos, centers, semi_sizes) -> np.ndarray:
    """Per obstacle ``max_j(|p_j - q_j| - d_j)``; negative iff the robot is inside the box."""
    if len(centers) == 0:
        return np.zeros(0)
    return np.max(np.abs(np.asarray(robot_pos)[None, :3] - centers) - semi_sizes, axis=1)


def _ped_centers(peds, height):
    if not peds:
        return np.zeros((0, 3))
    return np.array([[p.position[0], p.position[1], height] for p in peds])


def _worst_margin(problem, inputs):
    """Smallest obstacle margin of ``inputs`` rolled out through the nominal model."""
    z = problem.rollout(inputs)
    h = problem.ineq(z)
    return (float(np.min(h)) if h.size else np.inf), z[problem.n_u:].reshape(problem.n_steps, NX)


def _select_plan(problem, sol, previous, tol):
    """Pick the inputs to apply: the new plan if its rollout keeps every margin
    above ``-tol``, else the shifted previous plan if it still does, else the
    less violating of the two.  Returns ``(inputs, states, safe, fresh)``."""
    candidates = []
    if sol is not None and np.all(np.isfinite(sol.inputs)):
        candidates.append((sol.inputs, True))
    candidates.append((previous, False))
    best = None
    for inputs, fresh in candidates:
        margin, states = _worst_margin(problem, inputs)
        if margin >= -tol:
            return inputs, states, True, fresh
        if best is None or margin > best[0]:
            best = (margin, inputs, states, fresh)
    return best[1], best[2], False, best[3]


def run_closed_loop(setup: SimSetup, duration: float, seed: int) -> SimLog:
    """Simulate ``duration`` seconds; a pure function of ``(setup, duration, seed)`` except timings."""
    if not duration > 0.0:
        raise DomainError("duration must be positive")
    cfg = setup.ocp
    tick = setup.control_period
    n_ticks = int(round(duration / tick))
    if n_ticks < 1:
        raise DomainError("duration is shorter than one control period")
    n_sub = int(round(tick / setup.substep))
    seeds = np.random.SeedSequence(seed).spawn(3)
    rng_spawn, rng_meas, rng_proc = (np.random.default_rng(s) for s in seeds)

    peds_setup = setup.pedestrians
    peds = peds_setup.spawn(rng_spawn) if peds_setup is not None else []
    n_obs = len(peds)
    semi = np.tile(np.asarray(peds_setup.semi_sizes, dtype=float), (n_obs, 1)) if n_obs else np.zeros((0, 3))
    height = peds_setup.height if peds_setup is not None else 0.0
    sf = peds_setup.social_force if peds_setup is not None else SocialForceParams()
    world = World(0.0, np.asarray(setup.robot_state, dtype=float).copy(), peds)
    w_sub = cfg.robot_noise * (setup.substep / tick)

    beliefs = [None] * n_obs
    warm_u = np.zeros((cfg.n_steps, NU))
    rec = {k: [] for k in ("times", "robot", "obstacles", "est_mean", "est_var", "inputs", "plans",
                           "solve_time", "iterations", "solver_failed", "plan_unsafe", "solver_error", "slack_used", "collided",
                           "min_clearance")}
    for k in range(n_ticks):
        t = k * tick
        centers = _ped_centers(world.pedestrians, height)
        for i in range(n_obs):
            z = centers[i] + math.sqrt(peds_setup.measurement_var) * rng_meas.standard_normal(3)
            if beliefs[i] is None:
                mean = np.zeros(NX)
                mean[:3] = z
                prior = GaussianBelief(mean, peds_setup.initial_cov)
            else:
                prior = kalman_predict(beliefs[i], tick, peds_setup.process_noise)
            beliefs[i] = kalman_update(prior, z, peds_setup.measurement_var)

        times = t + cfg.dt * np.arange(1, cfg.n_steps + 1)
        ref = setup.reference.states(times)
        plan = np.full((cfg.n_steps, NX), np.nan)
        failed, unsafe, error, slack, iters, elapsed = False, False, False, False, 0, 0.0
        u = np.zeros(NU)
        if setup.planner:
            tic = time.perf_counter()
            inst = OcpInstance(
                replace(cfg, reference=ref),
                GaussianBelief(world.robot, setup.robot_cov),
                [Obstacle(b, BoundingBox(semi[i]), peds_setup.process_noise) for i, b in enumerate(beliefs)],
            )
            try:
                sol, problem = solve_ocp(inst, setup.kind, warm_inputs=warm_u, tol=setup.tol,
                                         max_iter=setup.max_iter)
            except SolverError:
                sol, problem, error = None, assemble_nlp(inst, setup.kind, warm_u), True
            inputs, plan, safe, fresh = _select_plan(problem, sol, warm_u, setup.accept_violation)
            elapsed = time.perf_counter() - tic
            failed = not (safe and fresh)
            unsafe = not safe
            if sol is not None:
                iters = sol.iterations
                slack = sol.slack_used
            u = inputs[0].copy()
            warm_u = shift_solution(inputs)

        rec["times"].append(t)
        rec["robot"].append(world.robot.copy())
        rec["obstacles"].append(centers)
        rec["est_mean"].append(np.array([b.mean[:3] for b in beliefs]).reshape(n_obs, 3))
        rec["est_var"].append(np.array([np.diag(b.cov)[:3] for b in beliefs]).reshape(n_obs, 3))
        rec["inputs"].append(np.asarray(u, dtype=float).copy())
        rec["plans"].append(plan)
        rec["solve_time"].append(elapsed)
        rec["iterations"].append(iters)
        rec["solver_failed"].append(failed)
        rec["plan_unsafe"].append(unsafe)
        rec["solver_error"].append(error)
        rec["slack_used"].append(slack)

        clearance = np.inf
        for _ in range(n_sub):
            world = step_world(world, u, setup.substep, rng_proc, w_sub, cfg.params, sf, setup.robot_radius)
            c = box_clearance(world.robot, _ped_centers(world.pedestrians, height), semi)
            if c.size:
                clearance = min(clearance, float(c.min()))
        rec["min_clearance"].append(clearance)
        rec["collided"].append(clearance < 0.0)

    arrays = {k: np.asarray(v) for k, v in rec.items()}
    arrays["obstacles"] = arrays["obstacles"].reshape(n_ticks, n_obs, 3)
    arrays["est_mean"] = arrays["est_mean"].reshape(n_ticks, n_obs, 3)
    arrays["est_var"] = arrays["est_var"].reshape(n_ticks, n_obs, 3)
    return SimLog(semi_sizes=semi, **arrays)


# -- metrics --------------------------------------------------------------------

@dataclass(frozen=True)
class BoxStats:
    """Box-plot summary: quartiles and whiskers at 1.5 x IQR."""

    n: int
    p25: float
    p50: float
    p75: float
    whisker_lo: float
    whisker_hi: float
    minimum: float
    maximum: float

    @classmethod
    def from_series(cls, values) -> "BoxStats":
        v = np.asarray(values, dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            nan = float("nan")
            return cls(0, nan, nan, nan, nan, nan, nan, nan)
        q1, q2, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        lo = float(v[v >= q1 - 1.5 * iqr].min())
        hi = float(v[v <= q3 + 1.5 * iqr].max())
        return cls(int(v.size), float(q1), float(q2), float(q3), lo, hi, float(v.min()), float(v.max()))


@dataclass
class Metrics:
    times: np.ndarray
    distance: np.ndarray
    ttc_inv: np.ndarray
    solve_time: np.ndarray
    clearance: np.ndarray
    collided: bool

    def summaries(self) -> dict:
        return {
            "distance": BoxStats.from_series(self.distance),
            "ttc_inv": BoxStats.from_series(self.ttc_inv),
            "solve_time": BoxStats.from_series(self.solve_time),
        }


def compute_metrics(log: SimLog) -> Metrics:
    """Closest-obstacle distance, its inverse time-to-collision and solve times."""
    n = len(log.times)
    if n < 2:
        raise DomainError("metrics need at least two records")
    if log.n_obstacles == 0:
        dist = np.full(n, np.inf)
        ttc = np.zeros(n)
        clearance = np.full(n, np.inf)
    else:
        diff = log.robot[:, None, 0:3] - log.obstacles
        dist = np.min(np.linalg.norm(diff, axis=-1), axis=1)
        ddot = np.gradient(dist, log.times)
        with np.errstate(divide="ignore", invalid="ignore"):
            ttc = np.where(dist > 0.0, ddot / np.where(dist > 0.0, dist, 1.0), -np.inf)
        clearance = np.min(np.max(np.abs(diff) - log.semi_sizes[None], axis=-1), axis=1)
    collided = bool(log.any_collision or np.any(dist <= 0.0))
    return Metrics(np.asarray(log.times, dtype=float), dist, ttc, np.asarray(log.solve_time, dtype=float),
                   clearance, collided)
