"""Receding-horizon trajectory optimizer.

Finite-horizon optimal control over the bicycle model by direct single
shooting: the decision variables are the N control pairs, states are
eliminated through the RK4 stepper, and rotated higher-order-ellipse
constraints keep every predicted state outside the obstacle boundaries.
The inner NLP is solved with SLSQP fed analytic gradients; convergence is
certified afterwards by an explicit KKT residual check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, NonlinearConstraint, minimize, nnls

from . import dynamics
from .dynamics import ControlInput, ControlLimits, VehicleGeometry, VehicleState, wrap_angle
from .riskmap import ObstacleVehicle

KKT_TOL = 1e-4
G_TOL = 1e-6


@dataclass(frozen=True)
class ObstacleEllipse:
    x_e: float   # center (m)
    y_e: float
    a: float     # semi-axis along the rotated x (m)
    b: float     # semi-axis along the rotated y (m)
    phi: float   # rotation (rad)
    n: int = 4   # even exponent


def ellipse_for(obs: ObstacleVehicle, ev_geom: VehicleGeometry,
                alpha: float = 1.1, n: int = 4) -> ObstacleEllipse:
    """Obstacle boundary padded with the EV dimensions and inflated by alpha.

    The safety triangles are deliberately not part of the hard constraint;
    they only shape the risk map.
    """
    return ObstacleEllipse(
        x_e=obs.state.x, y_e=obs.state.y,
        a=alpha * (obs.geom.length + ev_geom.length) / 2.0,
        b=alpha * (obs.geom.width + ev_geom.width) / 2.0,
        phi=obs.state.psi, n=n,
    )


def constraint_value(x, e: ObstacleEllipse) -> float:
    """g >= 0 outside the superellipse, -1 at its center."""
    px = x.x if isinstance(x, VehicleState) else x[0]
    py = x.y if isinstance(x, VehicleState) else x[1]
    dx, dy = px - e.x_e, py - e.y_e
    c, s = math.cos(e.phi), math.sin(e.phi)
    r1 = (dx * c + dy * s) / e.a
    r2 = (dx * s - dy * c) / e.b
    return r1 ** e.n + r2 ** e.n - 1.0


def _constraint_grad_xy(px: float, py: float, e: ObstacleEllipse) -> tuple[float, float]:
    dx, dy = px - e.x_e, py - e.y_e
    c, s = math.cos(e.phi), math.sin(e.phi)
    r1 = (dx * c + dy * s) / e.a
    r2 = (dx * s - dy * c) / e.b
    f1 = e.n * r1 ** (e.n - 1) / e.a
    f2 = e.n * r2 ** (e.n - 1) / e.b
    return f1 * c + f2 * s, f1 * s - f2 * c


def paper_stage_weights(n_horizon: int = 10):
    """Stage Q_k, R_k and terminal Q_N as reported for the 10-step horizon.

    For other horizon lengths the bands are stretched proportionally.
    """
    bands = [np.array([0.0, 5.0, 20.0, 10.0])] * 5 \
        + [np.array([0.0, 10.0, 20.0, 10.0])] * 2 \
        + [np.array([0.0, 10.0, 50.0, 10.0])] * 3
    q_stage = [bands[min(int(k * 10 / n_horizon), 9)] for k in range(n_horizon)]
    r_stage = [np.array([5.0, 50.0])] * n_horizon
    q_terminal = np.array([0.0, 50.0, 50.0, 30.0])
    return q_stage, r_stage, q_terminal


@dataclass
class HorizonProblem:
    x0: VehicleState
    x_ref: np.ndarray                  # [x, y, psi, v] reference
    n_horizon: int
    dt: float
    q_stage: list                      # N diagonals (4,)
    r_stage: list                      # N diagonals (2,)
    q_terminal: np.ndarray             # diagonal (4,)
    control_limits: ControlLimits
    geom: VehicleGeometry
    ellipses: list[ObstacleEllipse] = field(default_factory=list)
    v_min: float = 0.0
    v_max: float = 25.0

    @classmethod
    def tracking(cls, x0: VehicleState, x_ref, limits: ControlLimits,
                 geom: VehicleGeometry, n_horizon: int = 10, dt: float = 0.1,
                 ellipses=None, v_min: float = 0.0, v_max: float = 25.0):
        q, r, qn = paper_stage_weights(n_horizon)
        return cls(x0=x0, x_ref=np.asarray(x_ref, dtype=float), n_horizon=n_horizon,
                   dt=dt, q_stage=q, r_stage=r, q_terminal=qn,
                   control_limits=limits, geom=geom,
                   ellipses=list(ellipses or []), v_min=v_min, v_max=v_max)


@dataclass
class HorizonSolution:
    states: np.ndarray        # (N+1, 4) including x0
    controls: np.ndarray      # (N, 2)
    objective: float
    kkt_residual: float
    iterations: int
    status: str               # converged | max_iter | infeasible_fallback
    min_constraint: float     # min over stages/ellipses/state bounds, +inf if none


def _f_jacobians(psi: float, v: float, delta: float, geom: VehicleGeometry):
    lr_over_l = geom.l_r / geom.wheelbase
    tan_d = math.tan(delta)
    beta = math.atan(lr_over_l * tan_d)
    cb, sb = math.cos(beta), math.sin(beta)
    ch, sh = math.cos(psi + beta), math.sin(psi + beta)
    sec2 = 1.0 + tan_d * tan_d
    dbeta = lr_over_l * sec2 / (1.0 + (lr_over_l * tan_d) ** 2)

    a_mat = np.zeros((4, 4))
    a_mat[0, 2] = -v * sh
    a_mat[0, 3] = ch
    a_mat[1, 2] = v * ch
    a_mat[1, 3] = sh
    a_mat[2, 3] = cb * tan_d / geom.wheelbase

    b_mat = np.zeros((4, 2))
    b_mat[0, 1] = -v * sh * dbeta
    b_mat[1, 1] = v * ch * dbeta
    b_mat[2, 1] = v / geom.wheelbase * (cb * sec2 - sb * tan_d * dbeta)
    b_mat[3, 0] = 1.0
    return a_mat, b_mat


def _step_with_jacobians(state: VehicleState, u: ControlInput,
                         geom: VehicleGeometry, dt: float):
    """dynamics.step plus the Jacobians of the new state wrt state and control."""
    nxt = dynamics.step(state, u, geom, dt)

    x = np.array([state.x, state.y, state.psi, state.v])
    k1 = np.array(dynamics._deriv_raw(*x, u.a, u.delta, geom))
    x2 = x + 0.5 * dt * k1
    k2 = np.array(dynamics._deriv_raw(*x2, u.a, u.delta, geom))
    x3 = x + 0.5 * dt * k2
    k3 = np.array(dynamics._deriv_raw(*x3, u.a, u.delta, geom))
    x4 = x + dt * k3

    a1, b1 = _f_jacobians(x[2], x[3], u.delta, geom)
    a2, b2 = _f_jacobians(x2[2], x2[3], u.delta, geom)
    a3, b3 = _f_jacobians(x3[2], x3[3], u.delta, geom)
    a4, b4 = _f_jacobians(x4[2], x4[3], u.delta, geom)

    eye = np.eye(4)
    dk1x = a1
    dk2x = a2 @ (eye + 0.5 * dt * dk1x)
    dk3x = a3 @ (eye + 0.5 * dt * dk2x)
    dk4x = a4 @ (eye + dt * dk3x)
    dk1u = b1
    dk2u = a2 @ (0.5 * dt * dk1u) + b2
    dk3u = a3 @ (0.5 * dt * dk2u) + b3
    dk4u = a4 @ (dt * dk3u) + b4

    phi = eye + dt / 6.0 * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    gamma = dt / 6.0 * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)

    # speed clamp: v' = max(0, v + a*dt) kills the v-row sensitivities when active
    if state.v + u.a * dt < 0.0:
        phi[3, :] = 0.0
        gamma[3, :] = 0.0
    return nxt, phi, gamma


class _Rollout:
    """Single-shooting rollout of a control sequence with all sensitivities."""

    def __init__(self, problem: HorizonProblem, u_flat: np.ndarray):
        p = problem
        n = p.n_horizon
        self.states = [p.x0]
        self.phis = []
        self.gammas = []
        state = p.x0
        for k in range(n):
            u = ControlInput(a=float(u_flat[2 * k]), delta=float(u_flat[2 * k + 1]))
            state, phi, gamma = _step_with_jacobians(state, u, p.geom, p.dt)
            self.states.append(state)
            self.phis.append(phi)
            self.gammas.append(gamma)
        # forward sensitivities S_k = d x_k / d u  (4, 2N), k = 0..N
        self.sens = [np.zeros((4, 2 * n))]
        for k in range(n):
            s_next = self.phis[k] @ self.sens[k]
            s_next[:, 2 * k:2 * k + 2] += self.gammas[k]
            self.sens.append(s_next)

    def state_array(self) -> np.ndarray:
        return np.array([[s.x, s.y, s.psi, s.v] for s in self.states])


def _stage_error(ref: np.ndarray, state: VehicleState) -> np.ndarray:
    e = np.array([ref[0] - state.x, ref[1] - state.y,
                  wrap_angle(ref[2] - state.psi), ref[3] - state.v])
    return e


def objective_value(problem: HorizonProblem, rollout: _Rollout,
                    u_flat: np.ndarray) -> float:
    p = problem
    total = 0.0
    for k in range(p.n_horizon):
        e = _stage_error(p.x_ref, rollout.states[k])
        u_k = u_flat[2 * k:2 * k + 2]
        total += float(e @ (p.q_stage[k] * e) + u_k @ (p.r_stage[k] * u_k))
    e_n = _stage_error(p.x_ref, rollout.states[-1])
    total += float(e_n @ (p.q_terminal * e_n))
    return total


def objective_gradient(problem: HorizonProblem, rollout: _Rollout,
                       u_flat: np.ndarray) -> np.ndarray:
    """Reverse (adjoint) sweep through the rollout."""
    p = problem
    n = p.n_horizon
    grad = np.zeros(2 * n)
    lam = -2.0 * p.q_terminal * _stage_error(p.x_ref, rollout.states[n])
    for k in range(n - 1, -1, -1):
        grad[2 * k:2 * k + 2] = 2.0 * p.r_stage[k] * u_flat[2 * k:2 * k + 2] \
            + rollout.gammas[k].T @ lam
        lam = -2.0 * p.q_stage[k] * _stage_error(p.x_ref, rollout.states[k]) \
            + rollout.phis[k].T @ lam
    return grad


def constraint_values(problem: HorizonProblem, rollout: _Rollout) -> np.ndarray:
    vals = []
    for k in range(1, problem.n_horizon + 1):
        s = rollout.states[k]
        for e in problem.ellipses:
            vals.append(constraint_value(s, e))
        if math.isfinite(problem.v_min):
            vals.append(s.v - problem.v_min)
        if math.isfinite(problem.v_max):
            vals.append(problem.v_max - s.v)
    return np.array(vals)


def constraint_jacobian(problem: HorizonProblem, rollout: _Rollout) -> np.ndarray:
    rows = []
    for k in range(1, problem.n_horizon + 1):
        s = rollout.states[k]
        sens = rollout.sens[k]
        for e in problem.ellipses:
            gx, gy = _constraint_grad_xy(s.x, s.y, e)
            rows.append(gx * sens[0] + gy * sens[1])
        if math.isfinite(problem.v_min):
            rows.append(sens[3])
        if math.isfinite(problem.v_max):
            rows.append(-sens[3])
    if not rows:
        return np.empty((0, 2 * problem.n_horizon))
    return np.array(rows)


def analytic_gradients(problem: HorizonProblem, u_sequence: np.ndarray):
    """Objective gradient and constraint values/Jacobian at a control sequence."""
    u_flat = np.asarray(u_sequence, dtype=float).ravel()
    roll = _Rollout(problem, u_flat)
    return (objective_gradient(problem, roll, u_flat),
            constraint_values(problem, roll),
            constraint_jacobian(problem, roll))


def _kkt_residual(grad: np.ndarray, cons: np.ndarray, jac: np.ndarray,
                  u_flat: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                  active_tol: float = 1e-3) -> float:
    """Stationarity residual with multipliers estimated by nonnegative least squares."""
    cols = []
    for j in range(len(cons)):
        if cons[j] <= active_tol:
            cols.append(jac[j])
    for i in range(len(u_flat)):
        if u_flat[i] - lb[i] <= 1e-6:
            cols.append(np.eye(len(u_flat))[i])
        if ub[i] - u_flat[i] <= 1e-6:
            cols.append(-np.eye(len(u_flat))[i])
    if not cols:
        return float(np.max(np.abs(grad)))
    a_mat = np.stack(cols, axis=1)
    lam, _ = nnls(a_mat, grad)
    return float(np.max(np.abs(grad - a_mat @ lam)))


def _fallback_solution(problem: HorizonProblem) -> HorizonSolution:
    """Full braking, straight steering; applied when the NLP is unsolvable."""
    u = np.zeros((problem.n_horizon, 2))
    u[:, 0] = problem.control_limits.a_min
    roll = _Rollout(problem, u.ravel())
    cons = constraint_values(problem, roll)
    return HorizonSolution(
        states=roll.state_array(), controls=u,
        objective=objective_value(problem, roll, u.ravel()),
        kkt_residual=float("inf"), iterations=0, status="infeasible_fallback",
        min_constraint=float(cons.min()) if len(cons) else float("inf"),
    )


def shift_warm_start(previous: HorizonSolution, n_horizon: int) -> np.ndarray:
    """Shift the previous control sequence one stage, repeating the last control."""
    u = np.vstack([previous.controls[1:], previous.controls[-1:]])
    if len(u) != n_horizon:
        u = np.resize(u, (n_horizon, 2))
    return u.ravel()


def solve(problem: HorizonProblem,
          warm_start: HorizonSolution | None = None,
          max_iterations: int = 80) -> HorizonSolution:
    """Locally optimal horizon solution; falls back to full braking when infeasible."""
    p = problem
    n = p.n_horizon
    lim = p.control_limits
    lb = np.tile([lim.a_min, lim.delta_min], n)
    ub = np.tile([lim.a_max, lim.delta_max], n)

    cache: dict = {}

    def rollout_at(u_flat: np.ndarray) -> _Rollout:
        key = u_flat.tobytes()
        if cache.get("key") != key:
            cache["key"] = key
            cache["roll"] = _Rollout(p, u_flat)
        return cache["roll"]

    def fun(u_flat):
        return objective_value(p, rollout_at(u_flat), u_flat)

    def jac(u_flat):
        return objective_gradient(p, rollout_at(u_flat), u_flat)

    def cons_f(u_flat):
        return constraint_values(p, rollout_at(u_flat))

    def cons_j(u_flat):
        return constraint_jacobian(p, rollout_at(u_flat))

    constraints = []
    if len(p.ellipses) or math.isfinite(p.v_min) or math.isfinite(p.v_max):
        constraints.append({"type": "ineq", "fun": cons_f, "jac": cons_j})

    def attempt(u_init, maxiter, ftol, scale=1.0):
        obj = fun if scale == 1.0 else (lambda u: fun(u) / scale)
        grd = jac if scale == 1.0 else (lambda u: jac(u) / scale)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return minimize(obj, u_init, jac=grd, bounds=list(zip(lb, ub)),
                            constraints=constraints, method="SLSQP",
                            options={"maxiter": maxiter, "ftol": ftol})

    def certify(u_flat):
        roll = rollout_at(u_flat)
        cons = constraint_values(p, roll)
        viol = float(cons.min()) if len(cons) else float("inf")
        kkt = _kkt_residual(objective_gradient(p, roll, u_flat), cons,
                            constraint_jacobian(p, roll), u_flat, lb, ub)
        return viol, kkt

    # initial guesses: warm start (or zeros), then braking with straight /
    # left / right steering for the cases where the straight rollout punches
    # through an obstacle
    starts = []
    if warm_start is not None:
        starts.append(np.clip(shift_warm_start(warm_start, n), lb, ub))
    starts.append(np.zeros(2 * n))
    for steer in (0.0, 0.5 * lim.delta_max, 0.5 * lim.delta_min):
        starts.append(np.clip(np.tile([lim.a_min, steer], n), lb, ub))

    best = None  # (feasible, score, kkt, u): feasible first, then lowest objective
    total_iter = 0
    for u0 in starts:
        result = attempt(u0, max_iterations, 1e-10)
        total_iter += result.nit
        u_sol = np.clip(result.x, lb, ub)
        viol, kkt = certify(u_sol)
        if not (kkt <= KKT_TOL and viol >= -G_TOL):
            # polishing retry with the objective scaled to O(1), which lets
            # SLSQP resolve stationarity well past the certificate tolerance
            result = attempt(u_sol, 4 * max_iterations, 1e-16,
                             scale=max(1.0, abs(fun(u_sol))))
            total_iter += result.nit
            u_retry = np.clip(result.x, lb, ub)
            viol_r, kkt_r = certify(u_retry)
            if (viol_r, -kkt_r) >= (viol, -kkt):
                u_sol, viol, kkt = u_retry, viol_r, kkt_r
        cand = (viol >= -G_TOL, -fun(u_sol) if viol >= -G_TOL else viol, kkt, u_sol)
        if best is None or (cand[0], cand[1]) > (best[0], best[1]):
            best = cand
        if cand[0] and kkt <= KKT_TOL:
            break

    u_best = best[3]
    viol, kkt = certify(u_best)

    if not (kkt <= KKT_TOL and viol >= -G_TOL) and viol >= -1e-3:
        # SLSQP stalls around 1e-4 stationarity on constraint-riding problems;
        # a trust-region rescue usually certifies
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tc = minimize(fun, u_best, jac=jac, bounds=Bounds(lb, ub),
                          constraints=[NonlinearConstraint(cons_f, 0.0, np.inf,
                                                           jac=cons_j)] if constraints else [],
                          method="trust-constr",
                          options={"maxiter": 300, "gtol": 1e-8, "xtol": 1e-12})
        total_iter += tc.nit
        u_tc = np.clip(tc.x, lb, ub)
        viol_tc, kkt_tc = certify(u_tc)
        if viol_tc >= -G_TOL and kkt_tc <= KKT_TOL:
            u_best, viol, kkt = u_tc, viol_tc, kkt_tc

    roll = rollout_at(u_best)
    cons = constraint_values(p, roll)
    viol = float(cons.min()) if len(cons) else float("inf")

    if viol < -1e-3:
        # constraints genuinely unsatisfiable from here (e.g. x0 already inside
        # an inflated ellipse): brake hard and keep the wheel straight
        return _fallback_solution(p)

    status = "converged" if (kkt <= KKT_TOL and viol >= -G_TOL) else "max_iter"
    return HorizonSolution(
        states=roll.state_array(),
        controls=u_best.reshape(n, 2),
        objective=objective_value(p, roll, u_best),
        kkt_residual=kkt,
        iterations=int(total_iter),
        status=status,
        min_constraint=viol if len(cons) else float("inf"),
    )
