import numpy as np
import pytest

from cdpkit.core import (
    ConfigurationError,
    DegenerateStepError,
    EvaluatorFaultError,
    DimensionError,
    MultiplierSet,
    ParameterError,
    PenaltyParams,
    Point,
    SolveTrace,
    TraceRow,
    default_fd_step,
    finite_diff_check,
    gradient_action,
    load_problem,
    validate_manifold,
)
from cdpkit.dissolve import build_cdp
from cdpkit.manifolds import make_handle

from conftest import near_manifold_points, sphere_constraint_spec


class TestDomainTypes:
    def test_point_rejects_non_finite_coordinates(self):
        with pytest.raises(EvaluatorFaultError):
            Point(coords=np.array([1.0, np.nan]))

    def test_point_shape_must_match_length(self):
        with pytest.raises(DimensionError):
            Point(coords=np.zeros(5), shape=(2, 2))

    def test_penalty_params_reject_negative_entries(self):
        with pytest.raises(ParameterError):
            PenaltyParams(beta=-1.0)
        with pytest.raises(ParameterError):
            PenaltyParams(beta=1.0, gamma=np.array([-0.5]))

    def test_multiplier_set_requires_nonnegative_mu(self):
        with pytest.raises(ParameterError):
            MultiplierSet(rho=np.zeros(1), lam=np.zeros(0), mu=np.array([-1.0]))

    def test_trace_iterations_strictly_increasing(self):
        trace = SolveTrace()
        trace.append(TraceRow(1, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0))
        with pytest.raises(ParameterError):
            trace.append(TraceRow(1, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0))

    def test_trace_key_fields_exclude_wall_time(self):
        a = TraceRow(1, -1.0, 1e-7, 1e-7, 1.0, 10.0, 0.1, 0.5)
        b = TraceRow(1, -1.0, 1e-7, 1e-7, 1.0, 10.0, 0.1, 99.0)
        assert a.key_fields() == b.key_fields()


class TestValidateManifold:
    def test_oblique_feasible_probe_is_fixed_exactly(self):
        handle = make_handle("oblique", m=5, q=3)
        rng = np.random.default_rng(0)
        X = rng.standard_normal((5, 3))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        report = validate_manifold(handle, [X.ravel()], tol=1e-10)
        assert report.passed
        assert report.max_fixed_point_error == 0.0

    def test_sphere_basis_vector_passes(self):
        handle = make_handle("sphere", n=4)
        e1 = np.array([1.0, 0.0, 0.0, 0.0])
        report = validate_manifold(handle, [e1], tol=1e-10)
        assert report.passed

    def test_generic_gauss_newton_on_sphere_constraint(self):
        handle = make_handle("generic", spec=sphere_constraint_spec(8))
        base = np.zeros(8)
        base[0] = 1.0
        probes = near_manifold_points(handle, base, 50, 0.05, seed=3)
        report = validate_manifold(handle, probes, tol=1e-9)
        assert report.passed
        assert report.max_fixed_point_error <= 1e-9
        assert report.max_jacobian_product_norm <= 1e-9


class TestFiniteDiffCheck:
    def test_quadratic_is_exactly_differenced(self):
        f = lambda x: float(np.dot(x, x))
        action = gradient_action(lambda x: 2.0 * x)
        x = np.array([0.3, -1.2, 0.7])
        assert finite_diff_check(f, action, x, step=1e-5) <= 1e-9

    def test_constant_function_has_zero_error(self):
        f = lambda x: 3.5
        action = gradient_action(lambda x: np.zeros_like(x))
        assert finite_diff_check(f, action, np.ones(4), step=1e-5) == 0.0

    def test_transformed_objective_gradient_matches_differences(self):
        problem = load_problem(
            {"family": "center_of_mass", "m": 6, "q": 2, "N": 5,
             "r": 0.5, "seed": 2})
        inst = build_cdp(problem, PenaltyParams(beta=1.0))
        rng = np.random.default_rng(4)
        x = rng.standard_normal(problem.n) * 0.1
        x[0] = 1.0
        err = finite_diff_check(inst.eval_h,
                                gradient_action(inst.grad_h),
                                x, step=default_fd_step(x))
        assert err <= 1e-6

    def test_underflowing_step_is_rejected(self):
        f = lambda x: float(np.dot(x, x))
        action = gradient_action(lambda x: 2.0 * x)
        with pytest.raises(DegenerateStepError):
            finite_diff_check(f, action, np.ones(3), step=1e-15)


class TestLoadProblem:
    def test_balanced_cut_dimensions(self):
        p = load_problem({"family": "balanced_cut", "m": 50, "q": 2,
                          "rho": 0.1, "seed": 7})
        assert (p.n, p.p, p.n_eq, p.n_ineq) == (100, 50, 2, 0)

    def test_center_of_mass_dimensions(self):
        p = load_problem({"family": "center_of_mass", "m": 50, "q": 10,
                          "N": 1000, "r": 0.01, "seed": 1})
        assert (p.n_eq, p.n_ineq) == (0, 1)
        assert p.n == 500

    def test_missing_field_reports_dotted_path(self):
        with pytest.raises(ConfigurationError) as exc:
            load_problem({"family": "balanced_cut", "q": 2, "rho": 0.1,
                          "seed": 7})
        assert "family.m" in str(exc.value)

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigurationError):
            load_problem({"family": "does_not_exist"})

    def test_yaml_string_accepted(self):
        p = load_problem("family: balanced_cut\nm: 10\nq: 2\nrho: 0.3\nseed: 1\n")
        assert p.n == 20

    def test_deterministic_across_calls(self):
        doc = {"family": "balanced_cut", "m": 20, "q": 2, "rho": 0.2, "seed": 5}
        p1 = load_problem(doc)
        p2 = load_problem(doc)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(p1.n)
        assert p1.eval_f(x) == p2.eval_f(x)
        assert np.array_equal(p1.grad_f(x), p2.grad_f(x))
        assert np.array_equal(p1.eval_u(x), p2.eval_u(x))


def test_default_fd_step_scales_with_point_norm():
    assert default_fd_step(np.zeros(3)) == pytest.approx(1e-6)
    assert default_fd_step(3.0 * np.ones(3) / np.sqrt(3)) == pytest.approx(4e-6)
