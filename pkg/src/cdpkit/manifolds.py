"""Catalog of constraint dissolving operators.

Closed-form operators for the oblique manifold (unit-norm rows) and the
sphere, a generic operator for an arbitrary full-rank constraint map, and
a symplectic Stiefel family built on the generic operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    DimensionError,
    ManifoldHandle,
    RankDeficiencyError,
    Vector,
)

__all__ = [
    "GenericManifoldSpec",
    "euclidean_handle",
    "generic_A",
    "generic_JAT",
    "make_handle",
    "oblique_A",
    "oblique_JAT",
    "sphere_A",
    "sphere_JAT",
    "symplectic_canonical_point",
    "symplectic_form",
    "symplectic_spec",
]


# ---------------------------------------------------------------------------
# Oblique manifold: diag(X X^T) = 1, i.e. unit-norm rows.


def oblique_A(X: Vector) -> Vector:
    """Row-wise dissolving map: row i maps to 2 x_i / (||x_i||^2 + 1)."""
    X = np.atleast_2d(X)
    s = np.sum(X * X, axis=1, keepdims=True)
    return 2.0 * X / (s + 1.0)


def oblique_JAT(X: Vector, D: Vector) -> Vector:
    """Transposed-Jacobian action of ``oblique_A`` (rows are decoupled)."""
    X = np.atleast_2d(X)
    D = np.atleast_2d(D)
    s = np.sum(X * X, axis=1, keepdims=True)
    xd = np.sum(X * D, axis=1, keepdims=True)
    return 2.0 * D / (s + 1.0) - 4.0 * xd * X / (s + 1.0) ** 2


def sphere_A(x: Vector) -> Vector:
    """Dissolving map for the unit sphere, 2x / (||x||^2 + 1)."""
    x = np.asarray(x, dtype=float)
    return 2.0 * x / (float(np.dot(x, x)) + 1.0)


def sphere_JAT(x: Vector, d: Vector) -> Vector:
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    s = float(np.dot(x, x))
    return 2.0 * d / (s + 1.0) - 4.0 * float(np.dot(x, d)) * x / (s + 1.0) ** 2


# ---------------------------------------------------------------------------
# Generic dissolving operator for arbitrary c with full-rank Jacobian.


@dataclass(frozen=True)
class GenericManifoldSpec:
    """User-supplied constraint map with Jacobian actions.

    ``apply_dJc(x, d, w)`` is the optional second-order action
    ``(D_d Jc(x)) w = sum_l w_l Hess(c_l)(x) d``; when omitted it is
    approximated by central differences of ``apply_Jc``.
    """

    n: int
    p: int
    eval_c: Callable[[Vector], Vector]
    apply_JcT: Callable[[Vector, Vector], Vector]
    apply_Jc: Callable[[Vector, Vector], Vector]
    apply_dJc: Callable[[Vector, Vector, Vector], Vector] | None = None
    name: str = "generic"
    shape: tuple[int, int] | None = None


def _dense_jc(spec: GenericManifoldSpec, x: Vector) -> Vector:
    J = np.empty((spec.n, spec.p))
    eye = np.eye(spec.p)
    for l in range(spec.p):
        J[:, l] = spec.apply_Jc(x, eye[l])
    return J


def _djc_action(spec: GenericManifoldSpec, x: Vector, d: Vector, w: Vector) -> Vector:
    if spec.apply_dJc is not None:
        return spec.apply_dJc(x, d, w)
    h = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    nd = float(np.linalg.norm(d))
    if nd == 0.0:
        return np.zeros_like(x)
    step = h / nd
    return (spec.apply_Jc(x + step * d, w) - spec.apply_Jc(x - step * d, w)) / (2.0 * step)


def _gram_solve(spec: GenericManifoldSpec, x: Vector, reg: float):
    J = _dense_jc(spec, x)
    G = J.T @ J + reg * np.eye(spec.p)
    if np.linalg.cond(G) > 1e12:
        raise RankDeficiencyError(
            "Gram matrix condition number above 1e12; increase reg or use "
            "a different chart")
    return J, G


def generic_A(spec: GenericManifoldSpec, x: Vector, reg: float = 0.0) -> Vector:
    """Gauss-Newton-style dissolving map x - Jc (Jc^T Jc + reg I)^{-1} c."""
    x = np.asarray(x, dtype=float).ravel()
    J, G = _gram_solve(spec, x, reg)
    w = np.linalg.solve(G, spec.eval_c(x))
    return x - J @ w


def generic_JAT(spec: GenericManifoldSpec, x: Vector, g: Vector,
                reg: float = 0.0) -> Vector:
    """Exact transposed-Jacobian action of ``generic_A``.

    With w = G^{-1} c, z = Jc w and P the projector complement
    I - Jc G^{-1} Jc^T, the action is

        P g - (D Jc)[P g] w + (D Jc)[z] (G^{-1} Jc^T g),

    which reduces to the tangent projector P at feasible points.
    """
    x = np.asarray(x, dtype=float).ravel()
    g = np.asarray(g, dtype=float).ravel()
    J, G = _gram_solve(spec, x, reg)
    c = spec.eval_c(x)
    w = np.linalg.solve(G, c)
    z = J @ w
    a = np.linalg.solve(G, J.T @ g)
    pg = g - J @ a
    return pg - _djc_action(spec, x, pg, w) + _djc_action(spec, x, z, a)


# ---------------------------------------------------------------------------
# Symplectic Stiefel manifold: X^T Q_m X = Q_q with the standard skew form.


def symplectic_form(k: int) -> Vector:
    """Standard skew form [[0, I], [-I, 0]] of even order k."""
    if k <= 0 or k % 2:
        raise DimensionError(f"symplectic form needs even positive order, got {k}")
    half = k // 2
    Q = np.zeros((k, k))
    Q[:half, half:] = np.eye(half)
    Q[half:, :half] = -np.eye(half)
    return Q


def symplectic_canonical_point(m: int, q: int) -> Vector:
    """m x q matrix E with E^T Q_m E = Q_q exactly."""
    E = np.zeros((m, q))
    for j in range(q // 2):
        E[j, j] = 1.0
        E[m // 2 + j, q // 2 + j] = 1.0
    return E


def symplectic_spec(m: int, q: int) -> GenericManifoldSpec:
    """Constraint spec keeping only the strict upper triangle of the
    skew-symmetric residual X^T Q_m X - Q_q (p = q(q-1)/2 independent
    entries; the diagonal vanishes identically)."""
    if m <= 0 or q <= 0 or m % 2 or q % 2:
        raise DimensionError(f"symplectic Stiefel needs even m, q > 0, got ({m}, {q})")
    if q > m:
        raise DimensionError(f"need q <= m, got ({m}, {q})")
    Qm = symplectic_form(m)
    Qq = symplectic_form(q)
    iu = np.triu_indices(q, 1)
    p = q * (q - 1) // 2
    n = m * q

    def as_mat(x):
        return np.asarray(x, dtype=float).reshape(m, q)

    def skew_from(w):
        S = np.zeros((q, q))
        S[iu] = w
        return S - S.T

    def eval_c(x):
        X = as_mat(x)
        return (X.T @ Qm @ X - Qq)[iu]

    def apply_JcT(x, d):
        X, D = as_mat(x), as_mat(d)
        B = D.T @ Qm @ X + X.T @ Qm @ D
        return B[iu]

    def apply_Jc(x, w):
        X = as_mat(x)
        return (-Qm @ X @ skew_from(w)).ravel()

    def apply_dJc(x, d, w):
        # Jc is linear in X, so the second-order action is apply_Jc at D.
        D = as_mat(d)
        return (-Qm @ D @ skew_from(w)).ravel()

    return GenericManifoldSpec(
        n=n, p=p, eval_c=eval_c, apply_JcT=apply_JcT, apply_Jc=apply_Jc,
        apply_dJc=apply_dJc, name=f"symplectic_stiefel({m},{q})", shape=(m, q))


# ---------------------------------------------------------------------------
# Handle factory.


def _oblique_handle(m: int, q: int) -> ManifoldHandle:
    if m <= 0 or q <= 0:
        raise DimensionError(f"oblique needs positive dims, got ({m}, {q})")
    n = m * q

    def as_mat(x):
        return np.asarray(x, dtype=float).reshape(m, q)

    return ManifoldHandle(
        name=f"oblique({m},{q})", n=n, p=m,
        eval_c=lambda x: np.sum(as_mat(x) ** 2, axis=1) - 1.0,
        apply_JcT=lambda x, d: 2.0 * np.sum(as_mat(x) * as_mat(d), axis=1),
        apply_Jc=lambda x, w: (2.0 * np.asarray(w)[:, None] * as_mat(x)).ravel(),
        eval_A=lambda x: oblique_A(as_mat(x)).ravel(),
        apply_JAT=lambda x, d: oblique_JAT(as_mat(x), as_mat(d)).ravel(),
        shape=(m, q))


def _sphere_handle(n: int) -> ManifoldHandle:
    if n <= 0:
        raise DimensionError(f"sphere needs positive dimension, got {n}")
    return ManifoldHandle(
        name=f"sphere({n})", n=n, p=1,
        eval_c=lambda x: np.array([float(np.dot(x, x)) - 1.0]),
        apply_JcT=lambda x, d: np.array([2.0 * float(np.dot(x, d))]),
        apply_Jc=lambda x, w: 2.0 * float(np.asarray(w).ravel()[0]) * np.asarray(x, dtype=float),
        eval_A=sphere_A,
        apply_JAT=sphere_JAT)


def _generic_handle(spec: GenericManifoldSpec, reg: float = 0.0) -> ManifoldHandle:
    return ManifoldHandle(
        name=spec.name, n=spec.n, p=spec.p,
        eval_c=spec.eval_c,
        apply_JcT=spec.apply_JcT,
        apply_Jc=spec.apply_Jc,
        eval_A=lambda x: generic_A(spec, x, reg),
        apply_JAT=lambda x, g: generic_JAT(spec, x, g, reg),
        shape=spec.shape)


def euclidean_handle(n: int) -> ManifoldHandle:
    """Trivial handle with no manifold constraint (p = 0, A = identity).

    Accepted by the direct-NLP solver only, for oracle problems.
    """
    return ManifoldHandle(
        name=f"euclidean({n})", n=n, p=0,
        eval_c=lambda x: np.zeros(0),
        apply_JcT=lambda x, d: np.zeros(0),
        apply_Jc=lambda x, w: np.zeros(n),
        eval_A=lambda x: np.asarray(x, dtype=float).ravel(),
        apply_JAT=lambda x, g: np.asarray(g, dtype=float).ravel())


def make_handle(family: str, *, m: int | None = None, q: int | None = None,
                n: int | None = None, spec: GenericManifoldSpec | None = None,
                reg: float = 0.0) -> ManifoldHandle:
    """Wire a family's evaluators into a ManifoldHandle.

    Families: ``oblique`` (m, q), ``sphere`` (n), ``symplectic_stiefel``
    (m, q even), ``generic`` (spec), ``euclidean`` (n).
    """
    if family == "oblique":
        if m is None or q is None:
            raise DimensionError("oblique requires m and q")
        return _oblique_handle(m, q)
    if family == "sphere":
        if n is None:
            raise DimensionError("sphere requires n")
        return _sphere_handle(n)
    if family == "symplectic_stiefel":
        if m is None or q is None:
            raise DimensionError("symplectic_stiefel requires m and q")
        return _generic_handle(symplectic_spec(m, q), reg)
    if family == "generic":
        if spec is None:
            raise DimensionError("generic requires a GenericManifoldSpec")
        return _generic_handle(spec, reg)
    if family == "euclidean":
        if n is None:
            raise DimensionError("euclidean requires n")
        return euclidean_handle(n)
    raise DimensionError(f"unknown manifold family {family!r}")
