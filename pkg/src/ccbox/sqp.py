"""Line-search SQP for smooth NLPs with a square block of equality constraints.

The problem is

    min f(z)  s.t.  c(z) = 0,  h(z) >= 0,  lb <= z <= ub

where the equality Jacobian restricted to ``problem.dependent`` columns is
square and invertible (the state block of a multiple-shooting transcription).
Each iteration eliminates the linearized equalities, solves the condensed
QP in the remaining variables with a dense active-set method, and globalizes
with a backtracking line search on the l1 exact penalty

    phi(z) = f(z) + rho * (||c(z)||_1 + sum(max(0, -h(z)))).

If the QP is infeasible it is re-solved with l1 slacks on the nonlinear
inequalities and on the bounds of eliminated variables; bounds on the free
variables stay hard.  The solution reports
whether any slacks remained active.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import daqp
from scipy import linalg

from .errors import SolverError

ARMIJO = 1e-4
MIN_STEP = 1e-10
ELASTIC_PENALTY = 1e4
ELASTIC_REG = 1e-2
SCREEN_GAP = 1.0
SCREEN_TOL = 1e-9
WARM_LOWER = 3  # daqp sense: active at the lower bound


@dataclass
class Solution:
    z: np.ndarray
    objective: float
    kkt_residual: float
    max_violation: float
    iterations: int
    wall_time: float
    converged: bool
    status: str
    slack_used: bool = False
    inputs: np.ndarray | None = None
    states: np.ndarray | None = None
    multipliers: dict = field(default_factory=dict)


@dataclass
class _Eval:
    f: float
    g: np.ndarray | None
    c: np.ndarray
    jc: np.ndarray | None
    h: np.ndarray
    jh: np.ndarray | None
    z: np.ndarray | None = None


def _evaluate(problem, z, derivatives: bool = True) -> _Eval:
    ev = _Eval(float(problem.cost(z)), None, problem.eq(z), None, problem.ineq(z), None, z)
    if not (np.isfinite(ev.f) and np.all(np.isfinite(ev.c)) and np.all(np.isfinite(ev.h))):
        raise SolverError("non-finite function value encountered")
    return _with_derivatives(problem, ev, z) if derivatives else ev


def _with_derivatives(problem, ev: _Eval, z=None) -> _Eval:
    z = ev.z if z is None else z
    if ev.g is None:
        ev.g = problem.cost_grad(z)
        ev.jc = problem.eq_jac(z)
        ev.jh = problem.ineq_jac(z)
        if not np.all(np.isfinite(ev.g)):
            raise SolverError("non-finite gradient encountered")
    return ev


def constraint_violation(problem, z, c=None, h=None) -> float:
    """Max-norm violation of equalities, inequalities and bounds at ``z``."""
    c = problem.eq(z) if c is None else c
    h = problem.ineq(z) if h is None else h
    parts = [0.0]
    if c.size:
        parts.append(float(np.max(np.abs(c))))
    if h.size:
        parts.append(float(np.max(-h)))
    parts.append(float(np.max(problem.lb - z, initial=0.0)))
    parts.append(float(np.max(z - problem.ub, initial=0.0)))
    return max(parts)


def _infeasibility(c, h):
    return float(np.sum(np.abs(c)) + np.sum(np.maximum(0.0, -h)))


class _Condensed:
    """Elimination of the dependent variables from the linearized equalities."""

    def __init__(self, problem, ev: _Eval):
        n = problem.n
        dep = problem.dependent
        ind = np.setdiff1d(np.arange(n), dep)
        self.dep, self.ind = dep, ind
        if dep.size:
            jd = ev.jc[:, dep]
            ji = ev.jc[:, ind]
            rhs = np.column_stack([ji, ev.c])
            self.triangular = getattr(problem, "dependent_lower_triangular", False)
            if self.triangular:
                sol = linalg.solve_triangular(jd, rhs, lower=True, unit_diagonal=True,
                                              check_finite=False)
            else:
                sol = np.linalg.solve(jd, rhs)
            self.s = -sol[:, :-1]
            self.s0 = -sol[:, -1]
            self.jd = jd
        else:
            self.triangular = False
            self.s = np.zeros((0, ind.size))
            self.s0 = np.zeros(0)
            self.jd = None
        z_basis = np.zeros((n, ind.size))
        z_basis[ind, np.arange(ind.size)] = 1.0
        z_basis[dep] = self.s
        self.basis = z_basis
        self.offset = np.zeros(n)
        self.offset[dep] = self.s0

    def expand(self, du):
        return self.basis @ du + self.offset


def _make_pd(h, floor=1e-8):
    h = 0.5 * (h + h.T)
    shift = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(h)))))
    for _ in range(60):
        try:
            np.linalg.cholesky(h + shift * np.eye(h.shape[0]))
            return h + shift * np.eye(h.shape[0])
        except np.linalg.LinAlgError:
            shift = max(2.0 * shift, floor * scale)
    raise SolverError("could not regularize the reduced Hessian")


class _Infeasible(Exception):
    pass


def _solve_qp_dense(g_mat, a_vec, rows, b_vec, warm=None):
    """``min 1/2 x'Gx - a'x  s.t.  rows @ x >= b`` by a dual active-set method."""
    if rows.shape[0] == 0:
        return np.linalg.solve(g_mat, a_vec), np.zeros(0)
    sense = np.zeros(rows.shape[0], dtype=np.int32)
    if warm is not None:
        sense[warm] = WARM_LOWER
    x, _, flag, info = daqp.solve(
        g_mat, -a_vec, np.ascontiguousarray(rows), np.full(rows.shape[0], np.inf),
        np.ascontiguousarray(b_vec, dtype=float), sense,
    )
    if flag == -1:
        raise _Infeasible()
    if flag < 0:
        raise SolverError(f"QP subproblem failed (exit flag {flag})")
    # multipliers of lower-bound rows come back with negative sign
    return np.asarray(x), -np.asarray(info["lam"])


def _solve_qp(g_mat, a_vec, rows, b_vec, forced=None, warm=None):
    """Solve ``min 1/2 x'Gx - a'x  s.t.  rows @ x >= b`` with row screening.

    Rows whose slack at ``x = 0`` exceeds ``SCREEN_GAP`` start out omitted
    (unless ``forced`` or in the ``warm`` working set); any omitted row
    violated by the subset solution is added and the QP is re-solved.  The
    result therefore solves the full QP and omitted rows carry zero
    multipliers because they are inactive.  Returns ``(x, lam, active)``.
    """
    m = rows.shape[0]
    keep = b_vec > -SCREEN_GAP
    if forced is not None:
        keep |= forced
    if warm is not None:
        keep |= warm
    while True:
        idx = np.flatnonzero(keep)
        x, lam_sub = _solve_qp_dense(g_mat, a_vec, rows[idx], b_vec[idx],
                                     None if warm is None else warm[idx])
        resid = rows @ x - b_vec
        bad = (~keep) & (resid < -SCREEN_TOL * (1.0 + np.abs(b_vec)))
        if not np.any(bad):
            lam = np.zeros(m)
            lam[idx] = lam_sub
            return x, lam, lam > 0.0
        keep |= bad


def _elastic_qp(hr, gr, a_all, b_all, soft_rows):
    """l1-elastic QP: rows in ``soft_rows`` get a penalized slack.

    Slacks are first attached only to the soft rows within the screening
    distance; if the QP is still infeasible every soft row gets one.
    """
    nr = hr.shape[0]
    near = soft_rows[b_all[soft_rows] > -SCREEN_GAP]
    for soft in (near, soft_rows):
        ns = soft.size
        g_el = np.zeros((nr + ns, nr + ns))
        g_el[:nr, :nr] = hr
        g_el[nr:, nr:] = ELASTIC_REG * np.eye(ns)
        a_el = np.concatenate([-gr, -ELASTIC_PENALTY * np.ones(ns)])
        rows = np.zeros((a_all.shape[0] + ns, nr + ns))
        rows[: a_all.shape[0], :nr] = a_all
        rows[soft, nr + np.arange(ns)] = 1.0
        rows[a_all.shape[0]:, nr:] = np.eye(ns)
        b_el = np.concatenate([b_all, np.zeros(ns)])
        forced = np.zeros(b_el.size, dtype=bool)
        forced[a_all.shape[0]:] = True
        try:
            sol, lam_full, _ = _solve_qp(g_el, a_el, rows, b_el, forced=forced)
        except _Infeasible:
            continue
        return sol[:nr], lam_full[: a_all.shape[0]], float(np.sum(np.maximum(sol[nr:], 0.0)))
    raise SolverError("QP subproblem infeasible in the hard bounds")


def _qp_step(problem, ev: _Eval, z, hess, warm=None):
    """Solve the condensed QP.

    Returns ``(d, multipliers, slack_used, lin_infeas, active)`` where
    ``active`` is the optimal working set, usable as ``warm`` next time.
    """
    cond = _Condensed(problem, ev)
    basis, offset = cond.basis, cond.offset
    hr = _make_pd(basis.T @ hess @ basis)
    gr = basis.T @ (ev.g + hess @ offset)
    nr = hr.shape[0]

    # rows: A x >= b in reduced variables
    a_in = ev.jh @ basis
    b_in = -ev.h - ev.jh @ offset
    lo_gap = problem.lb - z - offset
    hi_gap = problem.ub - z - offset
    lo_rows = np.flatnonzero(np.isfinite(problem.lb))
    hi_rows = np.flatnonzero(np.isfinite(problem.ub))
    a_lo = basis[lo_rows]
    a_hi = -basis[hi_rows]
    # rows that do not depend on the reduced variables cannot be changed
    keep_lo = np.any(a_lo != 0.0, axis=1)
    keep_hi = np.any(a_hi != 0.0, axis=1)
    lo_rows, a_lo = lo_rows[keep_lo], a_lo[keep_lo]
    hi_rows, a_hi = hi_rows[keep_hi], a_hi[keep_hi]
    b_lo = lo_gap[lo_rows]
    b_hi = -hi_gap[hi_rows]

    m_in = a_in.shape[0]
    a_all = np.vstack([a_in, a_lo, a_hi])
    b_all = np.concatenate([b_in, b_lo, b_hi])
    slack_used = False
    if warm is not None and warm.shape != b_all.shape:
        warm = None
    try:
        du, lam, active = _solve_qp(hr, -gr, a_all, b_all, warm=warm)
        lin_infeas = 0.0
    except _Infeasible:
        # nonlinear inequalities and bounds on eliminated variables are softened
        dep = np.zeros(problem.n, dtype=bool)
        dep[cond.dep] = True
        soft = np.concatenate([np.arange(m_in), m_in + np.flatnonzero(dep[lo_rows]),
                               m_in + lo_rows.size + np.flatnonzero(dep[hi_rows])])
        du, lam, lin_infeas = _elastic_qp(hr, gr, a_all, b_all, soft)
        slack_used = True
        active = lam > 0.0

    d = cond.expand(du)
    mu = lam[:m_in]
    nu = np.zeros(problem.n)
    nu[lo_rows] += lam[m_in:m_in + lo_rows.size]
    nu[hi_rows] -= lam[m_in + lo_rows.size:]

    # equality multipliers from stationarity on the dependent block
    resid = hess @ d + ev.g - ev.jh.T @ mu - nu
    if cond.dep.size and cond.triangular:
        lam_eq = linalg.solve_triangular(cond.jd, resid[cond.dep], trans="T", lower=True,
                                         unit_diagonal=True, check_finite=False)
    elif cond.dep.size:
        lam_eq = np.linalg.solve(cond.jd.T, resid[cond.dep])
    else:
        lam_eq = np.zeros(0)
    return d, {"eq": lam_eq, "ineq": mu, "bounds": nu}, slack_used, lin_infeas, active


def kkt_residual(problem, z, ev: _Eval, mult) -> float:
    """Stationarity and complementarity (max-norm) for the given multipliers."""
    lam, mu, nu = mult["eq"], mult["ineq"], mult["bounds"]
    r = ev.g - ev.jh.T @ mu - nu
    if lam.size:
        r = r - ev.jc.T @ lam
    parts = [float(np.max(np.abs(r), initial=0.0))]
    if mu.size:
        parts.append(float(np.max(np.abs(mu * ev.h))))
        parts.append(float(np.max(-mu, initial=0.0)))
    lo = np.isfinite(problem.lb)
    hi = np.isfinite(problem.ub)
    gap = np.zeros(problem.n)
    gap[lo & (nu > 0)] = (z - problem.lb)[lo & (nu > 0)]
    gap[hi & (nu < 0)] = (problem.ub - z)[hi & (nu < 0)]
    parts.append(float(np.max(np.abs(nu * gap), initial=0.0)))
    return max(parts)


def solve_sqp(problem, init, tol: float = 1e-6, max_iter: int = 100) -> Solution:
    """Minimize ``problem`` from ``init``.

    Terminates when both the KKT residual and the constraint violation drop
    below ``tol``, or after ``max_iter`` iterations (``converged=False``).
    The iteration is deterministic for identical inputs.
    """
    start = time.perf_counter()
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    z = np.asarray(init, dtype=float).copy()
    if z.shape != (problem.n,) or not np.all(np.isfinite(z)):
        raise ValueError("initial point must be a finite vector of problem size")
    z = np.clip(z, problem.lb, problem.ub)

    rho = 1.0
    mu_prev = np.zeros(problem.n_ineq)
    slack_any = False
    status = "max_iter"
    converged = False
    kkt = np.inf
    mult = {"eq": np.zeros(problem.n_eq), "ineq": mu_prev, "bounds": np.zeros(problem.n)}
    it = 0
    ev = _evaluate(problem, z)
    correct = getattr(problem, "correct", None)
    working = None
    for it in range(max_iter + 1):
        hess = problem.hessian(z, mu_prev)
        d, mult, slack_used, lin_infeas, working = _qp_step(problem, ev, z, hess, working)
        viol = constraint_violation(problem, z, ev.c, ev.h)
        kkt = kkt_residual(problem, z, ev, mult)
        if kkt <= tol and viol <= tol and not slack_used:
            converged, status = True, "converged"
            break
        if it == max_iter:
            break
        slack_any |= slack_used

        # penalty update: rho must dominate the multipliers
        mmax = max(float(np.max(np.abs(mult["eq"]), initial=0.0)),
                   float(np.max(np.abs(mult["ineq"]), initial=0.0)))
        if rho < 1.1 * mmax:
            rho = 1.5 * mmax + 1e-3
        theta = _infeasibility(ev.c, ev.h)
        phi = ev.f + rho * theta
        slope = float(ev.g @ d) - rho * (theta - lin_infeas)

        def merit(zt):
            et = _evaluate(problem, zt, derivatives=False)
            return et, et.f + rho * _infeasibility(et.c, et.h)

        step = 1.0
        while True:
            z_try = np.clip(z + step * d, problem.lb, problem.ub)
            ev_try, phi_try = merit(z_try)
            target = phi + ARMIJO * step * min(slope, 0.0)
            if phi_try <= target or step < MIN_STEP:
                break
            if step == 1.0 and correct is not None:
                # second-order correction, tried once on the full step
                z_soc = np.clip(correct(z_try), problem.lb, problem.ub)
                ev_soc, phi_soc = merit(z_soc)
                if phi_soc <= target:
                    z_try, ev_try, phi_try = z_soc, ev_soc, phi_soc
                    break
            step *= 0.5
        if step < MIN_STEP and phi_try > phi:
            status = "line_search_failed"
            break
        z, ev = z_try, _with_derivatives(problem, ev_try)
        mu_prev = mult["ineq"]

    viol = constraint_violation(problem, z, ev.c, ev.h)
    sol = Solution(
        z=z,
        objective=ev.f,
        kkt_residual=kkt,
        max_violation=viol,
        iterations=it,
        wall_time=time.perf_counter() - start,
        converged=converged,
        status=status,
        slack_used=slack_any,
        multipliers=mult,
    )
    unpack = getattr(problem, "unpack", None)
    if unpack is not None:
        sol.inputs, sol.states = unpack(z)
    return sol
