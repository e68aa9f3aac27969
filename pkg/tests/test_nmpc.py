import math

import numpy as np
import pytest

from ovsim.dynamics import (ControlInput, ControlLimits, VehicleGeometry,
                            VehicleState, step, wrap_angle)
from ovsim.geometry import rectangle_corners, convex_polygon_distance
from ovsim.nmpc import (HorizonProblem, ObstacleEllipse, analytic_gradients,
                        constraint_value, ellipse_for, objective_value,
                        paper_stage_weights, shift_warm_start, solve, _Rollout)
from ovsim.riskmap import ObstacleVehicle

GEOM = VehicleGeometry()
LIMITS = ControlLimits()


def rollout_states(problem, u_flat):
    return _Rollout(problem, np.asarray(u_flat, dtype=float)).state_array()


def eval_objective(problem, u_flat):
    u_flat = np.asarray(u_flat, dtype=float)
    return objective_value(problem, _Rollout(problem, u_flat), u_flat)


def oracle_objective(problem, u_flat):
    """Independent cost evaluation: own rollout via the dynamics stepper."""
    u_flat = np.asarray(u_flat, dtype=float)
    state = problem.x0
    total = 0.0
    for k in range(problem.n_horizon):
        e = np.array([problem.x_ref[0] - state.x, problem.x_ref[1] - state.y,
                      wrap_angle(problem.x_ref[2] - state.psi),
                      problem.x_ref[3] - state.v])
        u_k = u_flat[2 * k:2 * k + 2]
        total += float(e @ (problem.q_stage[k] * e) + u_k @ (problem.r_stage[k] * u_k))
        state = step(state, ControlInput(*u_k), problem.geom, problem.dt)
    e = np.array([problem.x_ref[0] - state.x, problem.x_ref[1] - state.y,
                  wrap_angle(problem.x_ref[2] - state.psi),
                  problem.x_ref[3] - state.v])
    return total + float(e @ (problem.q_terminal * e))


def superellipse_boundary(e: ObstacleEllipse, n_samples=400):
    """Parametric boundary generator (the constraint_value oracle)."""
    t = np.linspace(0, 2 * math.pi, n_samples, endpoint=False)
    ex = np.sign(np.cos(t)) * np.abs(np.cos(t)) ** (2.0 / e.n) * e.a
    ey = np.sign(np.sin(t)) * np.abs(np.sin(t)) ** (2.0 / e.n) * e.b
    c, s = math.cos(e.phi), math.sin(e.phi)
    x = e.x_e + ex * c - ey * s
    y = e.y_e + ex * s + ey * c
    return np.stack([x, y], axis=1)


class TestEllipseFor:
    def test_padded_semi_axes(self):
        obs = ObstacleVehicle(VehicleState(10, 2, 0.0, 5.0), GEOM, "lv")
        e = ellipse_for(obs, GEOM, alpha=1.1, n=4)
        assert e.a == pytest.approx(4.95)
        assert e.b == pytest.approx(1.98)
        assert (e.x_e, e.y_e) == (10, 2)

    def test_unit_alpha_zero_ego_collapses_to_half_dims(self):
        obs = ObstacleVehicle(VehicleState(0, 0, 0, 0), GEOM, "lv")
        zero_ego = VehicleGeometry(l_f=0.01, l_r=0.01, length=0.02, width=0.02)
        e = ellipse_for(obs, zero_ego, alpha=1.0, n=4)
        assert e.a == pytest.approx(GEOM.length / 2, abs=0.011)
        assert e.b == pytest.approx(GEOM.width / 2, abs=0.011)

    def test_heading_pass_through(self):
        obs = ObstacleVehicle(VehicleState(0, 0, 0.37, 0), GEOM, "lv")
        assert ellipse_for(obs, GEOM).phi == 0.37

    @pytest.mark.parametrize("alpha,n", [(1.3, 4), (1.1, 8)])
    def test_boundary_contact_clears_bodies(self, alpha, n):
        # brute-force polygon check: EV body centered anywhere on the padded
        # boundary never overlaps the obstacle body (holds for alpha >= 2^(1/n))
        assert alpha >= 2 ** (1.0 / n)
        obs = ObstacleVehicle(VehicleState(0, 0, 0.0, 0), GEOM, "lv")
        e = ellipse_for(obs, GEOM, alpha=alpha, n=n)
        obs_poly = rectangle_corners(0, 0, 0, GEOM.length, GEOM.width)
        for px, py in superellipse_boundary(e, 720):
            ev_poly = rectangle_corners(px, py, 0, GEOM.length, GEOM.width)
            assert convex_polygon_distance(ev_poly, obs_poly) >= 0.0
            assert not (convex_polygon_distance(ev_poly, obs_poly) == 0.0
                        and abs(px) < e.a - 0.01 and abs(py) < e.b - 0.01)


class TestConstraintValue:
    def test_center_is_minus_one(self):
        e = ObstacleEllipse(3.0, -1.0, 4.95, 1.98, 0.4, 4)
        assert constraint_value(np.array([3.0, -1.0]), e) == pytest.approx(-1.0)

    def test_axis_point_on_boundary(self):
        e = ObstacleEllipse(2.0, 1.0, 4.0, 2.0, 0.0, 4)
        assert constraint_value(np.array([6.0, 1.0]), e) == pytest.approx(0.0, abs=1e-12)

    def test_parametric_boundary_oracle(self):
        e = ObstacleEllipse(1.5, -0.7, 4.95, 1.98, 0.3, 4)
        for p in superellipse_boundary(e, 200):
            assert abs(constraint_value(p, e)) < 1e-9

    def test_sign_convention(self):
        e = ObstacleEllipse(0.0, 0.0, 4.0, 2.0, 0.7, 6)
        rng = np.random.default_rng(4)
        for _ in range(200):
            p = rng.uniform(-8, 8, 2)
            g = constraint_value(p, e)
            # compare against the rotated canonical form
            c, s = math.cos(e.phi), math.sin(e.phi)
            local = np.array([c * p[0] + s * p[1], -s * p[0] + c * p[1]])
            canonical = (local[0] / e.a) ** e.n + (local[1] / e.b) ** e.n - 1
            assert g == pytest.approx(canonical, rel=1e-12, abs=1e-12)

    def test_accepts_vehicle_state(self):
        e = ObstacleEllipse(0.0, 0.0, 4.0, 2.0, 0.0, 4)
        assert constraint_value(VehicleState(0, 0, 0, 5), e) == pytest.approx(-1.0)


def test_paper_stage_weights_bands():
    q, r, qn = paper_stage_weights(10)
    assert all(np.array_equal(q[i], [0, 5, 20, 10]) for i in range(5))
    assert all(np.array_equal(q[i], [0, 10, 20, 10]) for i in (5, 6))
    assert all(np.array_equal(q[i], [0, 10, 50, 10]) for i in (7, 8, 9))
    assert all(np.array_equal(w, [5, 50]) for w in r)
    assert np.array_equal(qn, [0, 50, 50, 30])


def random_problem(rng, n_horizon=10, ellipses=False):
    x0 = VehicleState(rng.uniform(-3, 3), rng.uniform(-2, 2),
                      rng.uniform(-0.4, 0.4), rng.uniform(5, 15))
    ref = np.array([x0.x + rng.uniform(4, 10), x0.y + rng.uniform(-2.5, 2.5),
                    rng.uniform(-0.3, 0.3), rng.uniform(4, 14)])
    ells = []
    if ellipses:
        ells = [ObstacleEllipse(x0.x + rng.uniform(8, 14),
                                x0.y + rng.uniform(-2, 2),
                                4.95, 1.98, rng.uniform(-0.2, 0.2), 4)]
    return HorizonProblem.tracking(x0, ref, LIMITS, GEOM, n_horizon=n_horizon,
                                   dt=0.1, ellipses=ells)


class TestAnalyticGradients:
    def central_difference(self, problem, u, h=1e-6):
        grad = np.zeros_like(u)
        n_cons = len(analytic_gradients(problem, u)[1])
        jac = np.zeros((n_cons, len(u)))
        for i in range(len(u)):
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            fp, fm = eval_objective(problem, up), eval_objective(problem, um)
            grad[i] = (fp - fm) / (2 * h)
            cp = analytic_gradients(problem, up)[1]
            cm = analytic_gradients(problem, um)[1]
            jac[:, i] = (cp - cm) / (2 * h)
        return grad, jac

    def test_single_step_terminal_cost(self):
        rng = np.random.default_rng(0)
        p = random_problem(rng, n_horizon=1)
        u = rng.uniform([-2, -0.3], [2, 0.3])
        g, _, _ = analytic_gradients(p, u)
        fd, _ = self.central_difference(p, u)
        assert np.allclose(g, fd, rtol=1e-4, atol=1e-7)

    def test_control_only_objective_is_exact(self):
        rng = np.random.default_rng(1)
        p = random_problem(rng)
        p.q_stage = [np.zeros(4)] * p.n_horizon
        p.q_terminal = np.zeros(4)
        u = rng.uniform(-1, 1, 2 * p.n_horizon)
        g, _, _ = analytic_gradients(p, u)
        expected = 2.0 * np.concatenate([p.r_stage[k] * u[2 * k:2 * k + 2]
                                         for k in range(p.n_horizon)])
        assert np.allclose(g, expected, atol=1e-12)

    def test_random_instances_match_finite_differences(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(10):
            p = random_problem(rng, ellipses=True)
            u = rng.uniform(np.tile([-2, -0.3], 10), np.tile([2, 0.3], 10))
            g, c, jac = analytic_gradients(p, u)
            fd_g, fd_j = self.central_difference(p, u)
            worst = max(worst, np.max(np.abs(g - fd_g) / np.maximum(1.0, np.abs(fd_g))))
            if len(c):
                worst = max(worst, np.max(np.abs(jac - fd_j) / np.maximum(1.0, np.abs(fd_j))))
        assert worst < 1e-4


class TestSolve:
    def test_already_at_reference(self):
        x0 = VehicleState(0, 0, 0, 8.0)
        p = HorizonProblem.tracking(x0, [0, 0, 0, 8.0], LIMITS, GEOM)
        sol = solve(p)
        assert sol.status == "converged"
        assert sol.objective == pytest.approx(0.0, abs=1e-9)
        assert np.abs(sol.controls).max() < 1e-6

    def test_dynamics_consistency(self):
        rng = np.random.default_rng(9)
        p = random_problem(rng, ellipses=True)
        sol = solve(p)
        state = p.x0
        for k in range(p.n_horizon):
            state = step(state, ControlInput(*sol.controls[k]), GEOM, p.dt)
            assert np.allclose(sol.states[k + 1],
                               [state.x, state.y, state.psi, state.v], atol=1e-9)

    def test_cost_identity(self):
        rng = np.random.default_rng(10)
        p = random_problem(rng, ellipses=True)
        sol = solve(p)
        assert sol.objective == pytest.approx(
            eval_objective(p, sol.controls.ravel()), abs=1e-9)

    def test_controls_within_limits(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            p = random_problem(rng, ellipses=True)
            sol = solve(p)
            assert np.all(sol.controls[:, 0] >= LIMITS.a_min - 1e-12)
            assert np.all(sol.controls[:, 0] <= LIMITS.a_max + 1e-12)
            assert np.all(sol.controls[:, 1] >= LIMITS.delta_min - 1e-12)
            assert np.all(sol.controls[:, 1] <= LIMITS.delta_max + 1e-12)

    def test_converged_solutions_respect_constraints(self):
        rng = np.random.default_rng(12)
        for _ in range(8):
            p = random_problem(rng, ellipses=True)
            sol = solve(p)
            if sol.status == "converged":
                assert sol.min_constraint >= -1e-6
                for k in range(1, p.n_horizon + 1):
                    for e in p.ellipses:
                        assert constraint_value(sol.states[k], e) >= -1e-6

    def test_mirror_symmetry(self):
        x0 = VehicleState(0, 0.8, 0.1, 9.0)
        e = ObstacleEllipse(10.0, 1.2, 4.95, 1.98, 0.15, 4)
        p = HorizonProblem.tracking(x0, [8, 1.5, 0.05, 10.0], LIMITS, GEOM,
                                    ellipses=[e])
        x0_m = VehicleState(0, -0.8, -0.1, 9.0)
        e_m = ObstacleEllipse(10.0, -1.2, 4.95, 1.98, -0.15, 4)
        p_m = HorizonProblem.tracking(x0_m, [8, -1.5, -0.05, 10.0], LIMITS, GEOM,
                                      ellipses=[e_m])
        sol, sol_m = solve(p), solve(p_m)
        assert sol.objective == pytest.approx(sol_m.objective, rel=1e-4, abs=1e-6)
        assert np.allclose(sol.controls[:, 0], sol_m.controls[:, 0], atol=1e-3)
        assert np.allclose(sol.controls[:, 1], -sol_m.controls[:, 1], atol=1e-3)

    def test_warm_start_never_worse(self):
        rng = np.random.default_rng(13)
        p = random_problem(rng, ellipses=True)
        first = solve(p)
        again = solve(p, warm_start=first)
        assert again.objective <= first.objective + 1e-6

    def test_infeasible_falls_back_to_braking(self):
        # reference straight through an unavoidable obstacle right ahead
        x0 = VehicleState(0, 0, 0, 8.0)
        e = ObstacleEllipse(6.0, 0.0, 4.95, 1.98, 0.0, 4)
        p = HorizonProblem.tracking(x0, [15, 0, 0, 8.0], LIMITS, GEOM, ellipses=[e])
        sol = solve(p)
        assert sol.status == "infeasible_fallback"
        assert np.all(sol.controls[:, 0] == LIMITS.a_min)
        assert np.all(sol.controls[:, 1] == 0.0)

    def test_shift_warm_start_repeats_last(self):
        rng = np.random.default_rng(14)
        p = random_problem(rng)
        sol = solve(p)
        shifted = shift_warm_start(sol, p.n_horizon).reshape(-1, 2)
        assert np.array_equal(shifted[:-1], sol.controls[1:])
        assert np.array_equal(shifted[-1], sol.controls[-1])


def cross_entropy_minimize(problem, rng, iters=60, pop=200, elite=20):
    """Derivative-free oracle: cross-entropy method over the control box."""
    n = 2 * problem.n_horizon
    lb = np.tile([LIMITS.a_min, LIMITS.delta_min], problem.n_horizon)
    ub = np.tile([LIMITS.a_max, LIMITS.delta_max], problem.n_horizon)
    mu = np.zeros(n)
    sigma = (ub - lb) / 2.0
    best, best_val = mu.copy(), oracle_objective(problem, mu)
    for _ in range(iters):
        samples = np.clip(rng.normal(mu, sigma, size=(pop, n)), lb, ub)
        vals = np.array([oracle_objective(problem, s) for s in samples])
        order = np.argsort(vals)
        if vals[order[0]] < best_val:
            best_val, best = vals[order[0]], samples[order[0]]
        elites = samples[order[:elite]]
        mu = elites.mean(axis=0)
        sigma = elites.std(axis=0) + 1e-6
    return best, best_val


class TestSolveOracles:
    def test_unconstrained_matches_cross_entropy(self):
        rng = np.random.default_rng(100)
        for _ in range(3):
            p = random_problem(rng)
            sol = solve(p)
            _, ce_val = cross_entropy_minimize(p, rng)
            assert sol.objective <= ce_val + 1e-6
            assert sol.objective >= ce_val * 0.95 - 1e-6

    def test_two_step_grid_enumeration(self):
        rng = np.random.default_rng(101)
        a_levels = np.linspace(LIMITS.a_min, LIMITS.a_max, 9)
        d_levels = np.linspace(LIMITS.delta_min, LIMITS.delta_max, 9)
        for _ in range(3):
            p = random_problem(rng, n_horizon=2)
            best = math.inf
            for a0 in a_levels:
                for d0 in d_levels:
                    for a1 in a_levels:
                        for d1 in d_levels:
                            val = oracle_objective(p, np.array([a0, d0, a1, d1]))
                            best = min(best, val)
            sol = solve(p)
            assert sol.objective <= best + 1e-3
