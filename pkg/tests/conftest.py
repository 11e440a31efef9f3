"""Shared helpers for the test suite."""

import numpy as np
import pytest

from cdpkit.core import ManifoldHandle, ProblemSpec
from cdpkit.manifolds import GenericManifoldSpec, make_handle


def sphere_constraint_spec(n: int) -> GenericManifoldSpec:
    """c(x) = ||x||^2 - 1 wired as a generic constraint, with the analytic
    directional derivative of its Jacobian action."""
    return GenericManifoldSpec(
        n=n, p=1,
        eval_c=lambda x: np.array([float(np.dot(x, x)) - 1.0]),
        apply_JcT=lambda x, d: np.array([2.0 * float(np.dot(x, d))]),
        apply_Jc=lambda x, w: 2.0 * float(np.asarray(w).ravel()[0]) * np.asarray(x, dtype=float).ravel(),
        apply_dJc=lambda x, d, w: 2.0 * float(np.asarray(w).ravel()[0]) * np.asarray(d, dtype=float).ravel(),
        name=f"sphere_as_generic({n})")


def linear_objective_sphere_problem(n: int, seed: int = 0,
                                    handle: ManifoldHandle | None = None) -> ProblemSpec:
    """Minimal sphere-constrained problem with a linear objective."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(n)
    if handle is None:
        handle = make_handle("sphere", n=n)
    return ProblemSpec(
        manifold=handle,
        eval_f=lambda x: float(np.dot(g, x)),
        grad_f=lambda x: g.copy(),
        name=f"linear_on_sphere({n},seed={seed})")


def near_manifold_points(handle: ManifoldHandle, base, count: int,
                         scale: float, seed: int = 0) -> list:
    """Random perturbations of a feasible base point."""
    rng = np.random.default_rng(seed)
    base = np.asarray(base, dtype=float).ravel()
    return [base + scale * rng.standard_normal(base.size) for _ in range(count)]


def feasibility_decrease_slope(handle: ManifoldHandle, x_feasible, direction,
                               offsets=(1e-1, 1e-2, 1e-3, 1e-4)) -> float:
    """Least-squares slope of log||c(A(y))|| against log||c(y)|| for
    y = x + t*w over the given offsets."""
    x = np.asarray(x_feasible, dtype=float).ravel()
    w = np.asarray(direction, dtype=float).ravel()
    w = w / np.linalg.norm(w)
    logs_before, logs_after = [], []
    for t in offsets:
        y = x + t * w
        cy = float(np.linalg.norm(handle.eval_c(y)))
        cay = float(np.linalg.norm(handle.eval_c(handle.eval_A(y))))
        if cy <= 0 or cay <= 0:
            continue
        logs_before.append(np.log(cy))
        logs_after.append(np.log(cay))
    if len(logs_before) < 2:
        pytest.fail("not enough usable offsets for a slope fit")
    slope, _ = np.polyfit(logs_before, logs_after, 1)
    return float(slope)
