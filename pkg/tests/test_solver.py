import numpy as np
import pytest

from cdpkit.core import PenaltyParams, ProblemSpec
from cdpkit.diagnostics import make_synthetic_kkt
from cdpkit.dissolve import build_cdp
from cdpkit.manifolds import make_handle
from cdpkit.solver import (
    AlmOptions,
    alm_solve_cdp,
    alm_solve_nlp_direct,
    lbfgs_minimize,
)

from conftest import linear_objective_sphere_problem


class TestLbfgs:
    def test_diagonal_quadratic_reaches_origin(self):
        D = np.array([1.0, 4.0, 9.0, 0.5])

        def vg(x):
            return float(np.dot(x, D * x)), 2.0 * D * x

        res = lbfgs_minimize(vg, np.ones(4), tol=1e-9)
        assert res.status == "converged"
        assert np.linalg.norm(res.x) <= 1e-8

    def test_rosenbrock_from_standard_start(self):
        def vg(x):
            f = 100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2
            g = np.array([
                -400.0 * x[0] * (x[1] - x[0] ** 2) - 2.0 * (1.0 - x[0]),
                200.0 * (x[1] - x[0] ** 2),
            ])
            return f, g

        res = lbfgs_minimize(vg, np.array([-1.2, 1.0]), tol=1e-8,
                             max_iter=200)
        assert res.status == "converged"
        assert np.linalg.norm(res.x - 1.0) <= 1e-6

    def test_zero_gradient_start_returns_immediately(self):
        def vg(x):
            return float(np.dot(x, x)), 2.0 * x

        res = lbfgs_minimize(vg, np.zeros(3), tol=1e-8)
        assert res.status == "converged"
        assert res.iterations == 0
        assert np.array_equal(res.x, np.zeros(3))


class TestAlmOptions:
    def test_nonpositive_tolerances_rejected(self):
        with pytest.raises(ValueError):
            AlmOptions(outer_tol_stationarity=0.0)

    def test_growth_factors_must_exceed_one(self):
        with pytest.raises(ValueError):
            AlmOptions(alm_penalty_growth=1.0)


class TestAlmCdp:
    def test_pure_manifold_problem_is_single_inner_solve(self):
        problem = linear_objective_sphere_problem(6, seed=1)
        inst = build_cdp(problem, PenaltyParams(beta=10.0))
        x0 = np.zeros(6)
        x0[0] = 1.0
        res = alm_solve_cdp(inst, x0)
        assert res.status == "converged"
        assert len(res.trace.rows) == 1
        # minimizer of a linear objective on the sphere: -g/||g||
        g = problem.grad_f(x0)
        assert np.allclose(res.x_postprocessed, -g / np.linalg.norm(g),
                           atol=1e-5)

    def test_starting_at_a_stationary_point_stays_there(self):
        problem, x_star, _ = make_synthetic_kkt(seed=4)
        inst = build_cdp(problem, PenaltyParams(beta=10.0))
        res = alm_solve_cdp(inst, x_star)
        assert res.status == "converged"
        assert len(res.trace.rows) <= 2
        assert np.linalg.norm(res.x_final - x_star) <= 1e-6

    def test_converged_status_implies_certified_tolerances(self):
        problem = linear_objective_sphere_problem(6, seed=2)
        inst = build_cdp(problem, PenaltyParams(beta=10.0))
        x0 = np.zeros(6)
        x0[0] = 1.0
        opts = AlmOptions()
        res = alm_solve_cdp(inst, x0, opts)
        assert res.status == "converged"
        assert res.kkt.feasibility <= opts.outer_tol_feasibility
        assert res.kkt.stationarity <= opts.outer_tol_stationarity

    def test_trace_penalty_is_nondecreasing(self):
        problem, x_star, _ = make_synthetic_kkt(seed=6)
        inst = build_cdp(problem, PenaltyParams(beta=10.0))
        rng = np.random.default_rng(0)
        res = alm_solve_cdp(inst, x_star + 0.5 * rng.standard_normal(problem.n))
        sigmas = [row.sigma for row in res.trace.rows]
        assert all(b >= a for a, b in zip(sigmas, sigmas[1:]))

    def test_beta_adaptation_records_and_respects_lower_bound(self):
        from cdpkit.bench import (BalancedCutConfig, build_balanced_cut_cdp,
                                  gen_balanced_cut)
        problem, x0 = gen_balanced_cut(BalancedCutConfig(m=20, q=2, rho=0.2,
                                                         seed=3))
        inst = build_balanced_cut_cdp(problem)
        res = alm_solve_cdp(inst, x0)
        notes = [row.note for row in res.trace.rows if "beta_adapted" in row.note]
        assert notes, "adaptation expected from the tiny initial beta"
        adapted_at = next(i for i, row in enumerate(res.trace.rows)
                          if "beta_adapted" in row.note)
        required = float(res.trace.rows[adapted_at].note.split(":")[1])
        later = res.trace.rows[adapted_at + 1:]
        assert all(row.beta >= required for row in later)

    def test_deterministic_reruns_produce_identical_traces(self):
        problem = linear_objective_sphere_problem(8, seed=5)
        inst = build_cdp(problem, PenaltyParams(beta=10.0))
        rng = np.random.default_rng(1)
        x0 = rng.standard_normal(8)
        x0 /= np.linalg.norm(x0)
        a = alm_solve_cdp(inst, x0)
        b = alm_solve_cdp(inst, x0)
        assert a.objective == b.objective
        assert np.array_equal(a.x_final, b.x_final)
        assert [r.key_fields() for r in a.trace.rows] \
            == [r.key_fields() for r in b.trace.rows]


class TestAlmDirect:
    def test_quadratic_with_single_linear_equality_matches_closed_form(self):
        # min 1/2 x^T H x - b^T x  s.t.  a^T x = 1, no manifold block
        H = np.diag([2.0, 5.0])
        b = np.array([1.0, -1.0])
        a = np.array([1.0, 1.0])
        handle = make_handle("euclidean", n=2)
        problem = ProblemSpec(
            manifold=handle,
            eval_f=lambda x: 0.5 * float(x @ H @ x) - float(b @ x),
            grad_f=lambda x: H @ x - b,
            n_eq=1,
            eval_u=lambda x: np.array([float(a @ x) - 1.0]),
            apply_JuT=lambda x, d: np.array([float(a @ d)]),
            apply_Ju=lambda x, w: float(np.asarray(w).ravel()[0]) * a,
            name="equality_quadratic")
        K = np.block([[H, a[:, None]], [a[None, :], np.zeros((1, 1))]])
        sol = np.linalg.solve(K, np.concatenate([b, [1.0]]))
        tight = AlmOptions(outer_tol_stationarity=1e-10,
                           outer_tol_feasibility=1e-10)
        res = alm_solve_nlp_direct(problem, np.zeros(2), tight)
        assert res.status == "converged"
        assert np.allclose(res.x_final, sol[:2], atol=1e-8)

    def test_infeasible_start_on_sphere_recovers_feasibility(self):
        problem = linear_objective_sphere_problem(5, seed=7)
        res = alm_solve_nlp_direct(problem, 3.0 * np.ones(5))
        assert res.status == "converged"
        assert res.kkt.feasibility <= 1e-6

    def test_agrees_with_transformed_pipeline_on_sphere(self):
        problem = linear_objective_sphere_problem(6, seed=8)
        x0 = np.zeros(6)
        x0[0] = 1.0
        inst = build_cdp(problem, PenaltyParams(beta=10.0))
        r1 = alm_solve_cdp(inst, x0)
        r2 = alm_solve_nlp_direct(problem, x0)
        assert r1.status == r2.status == "converged"
        assert r1.objective == pytest.approx(r2.objective, rel=1e-6)
