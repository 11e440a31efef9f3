"""Augmented Lagrangian solver with an L-BFGS inner minimizer.

Two pipelines share the same outer loop: ``alm_solve_cdp`` minimizes the
transformed problem (manifold constraint dissolved into the objective),
``alm_solve_nlp_direct`` treats the manifold constraint as ordinary
equalities.  Results are certified with the original-problem KKT residual
at the post-processed point.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    MultiplierSet,
    OutOfNeighborhoodError,
    PenaltyParams,
    ProblemSpec,
    SolveTrace,
    TraceRow,
    Vector,
)
from .diagnostics import KktReport, estimate_constants, kkt_residual
from .dissolve import CdpInstance, a_infinity, build_cdp

__all__ = [
    "AlmOptions",
    "LbfgsResult",
    "SolveResult",
    "alm_solve_cdp",
    "alm_solve_nlp_direct",
    "lbfgs_minimize",
]


@dataclass(frozen=True)
class AlmOptions:
    outer_tol_stationarity: float = 1e-6
    outer_tol_feasibility: float = 1e-6
    max_outer: int = 100
    lbfgs_memory: int = 10
    max_inner: int = 500
    alm_penalty_init: float = 10.0
    alm_penalty_growth: float = 10.0
    multiplier_clip: float = 1e8
    beta_adapt: bool = True
    beta_growth: float = 10.0
    time_budget: float | None = None

    def __post_init__(self):
        if self.outer_tol_stationarity <= 0 or self.outer_tol_feasibility <= 0:
            raise ValueError("tolerances must be positive")
        if self.alm_penalty_growth <= 1 or self.beta_growth <= 1:
            raise ValueError("growth factors must exceed 1")


@dataclass
class LbfgsResult:
    x: Vector
    f: float
    grad_norm: float
    iterations: int
    status: str  # converged | max_iter | line_search_failure


def _strong_wolfe(phi, f0: float, slope0: float, alpha0: float = 1.0,
                  c1: float = 1e-4, c2: float = 0.9,
                  max_iter: int = 25) -> float | None:
    """Strong Wolfe line search (bracket + zoom).  ``phi(a)`` returns
    (value, directional slope) at step a.  Returns the step or None.

    Near a minimizer the Armijo decrease can fall below the floating-point
    resolution of the objective.  In that regime a step is also accepted
    under the approximate Wolfe conditions (slope bracketed, value within
    roundoff of f0), which keeps gradient reduction possible when value
    comparisons are pure noise.
    """
    eps_f = 1e-12 * (1.0 + abs(f0))
    a_prev, f_prev = 0.0, f0
    a = alpha0
    for i in range(max_iter):
        f, slope = phi(a)
        if f <= f0 + eps_f and (2.0 * c1 - 1.0) * slope0 >= slope >= c2 * slope0:
            return a
        if f > f0 + c1 * a * slope0 or (i > 0 and f >= f_prev):
            return _zoom(phi, a_prev, a, f_prev, f0, slope0, c1, c2, eps_f=eps_f)
        if abs(slope) <= -c2 * slope0:
            return a
        if slope >= 0:
            return _zoom(phi, a, a_prev, f, f0, slope0, c1, c2, eps_f=eps_f)
        a_prev, f_prev = a, f
        a = 2.0 * a
    return None


def _zoom(phi, lo, hi, f_lo, f0, slope0, c1, c2, max_iter: int = 30,
          eps_f: float = 0.0):
    for _ in range(max_iter):
        a = 0.5 * (lo + hi)
        f, slope = phi(a)
        if f <= f0 + eps_f and (2.0 * c1 - 1.0) * slope0 >= slope >= c2 * slope0:
            return a
        if f > f0 + c1 * a * slope0 or f >= f_lo:
            hi = a
        else:
            if abs(slope) <= -c2 * slope0:
                return a
            if slope * (hi - lo) >= 0:
                hi = lo
            lo, f_lo = a, f
        if abs(hi - lo) < 1e-16 * (1.0 + abs(lo)):
            break
    return lo if lo > 0 else None


def lbfgs_minimize(value_and_grad, x0: Vector, tol: float = 1e-6,
                   max_iter: int = 500, memory: int = 10) -> LbfgsResult:
    """Limited-memory BFGS with strong-Wolfe line search (c1=1e-4, c2=0.9).

    Non-descent directions trigger a steepest-descent restart; repeated
    line-search failure ends with status ``line_search_failure``.
    """
    x = np.asarray(x0, dtype=float).ravel().copy()
    f, g = value_and_grad(x)
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    gamma = 1.0
    status = "max_iter"
    it = 0
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            status = "converged"
            break
        d = _two_loop(g, s_hist, y_hist, gamma)
        slope = float(np.dot(d, g))
        if slope >= -1e-14 * float(np.linalg.norm(d)) * gnorm:
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -gnorm ** 2

        last = {}

        def phi(a, d=d, x=x, last=last):
            xt = x + a * d
            ft, gt = value_and_grad(xt)
            last["x"], last["f"], last["g"] = xt, ft, gt
            return ft, float(np.dot(gt, d))

        alpha = _strong_wolfe(phi, f, slope)
        if alpha is None or not np.isfinite(last.get("f", np.nan)):
            if s_hist:
                # restart with steepest descent once
                s_hist.clear()
                y_hist.clear()
                gamma = 1.0
                d = -g
                last.clear()

                def phi_sd(a, d=d, x=x, last=last):
                    xt = x + a * d
                    ft, gt = value_and_grad(xt)
                    last["x"], last["f"], last["g"] = xt, ft, gt
                    return ft, float(np.dot(gt, d))

                alpha = _strong_wolfe(phi_sd, f, -gnorm ** 2,
                                      alpha0=min(1.0, 1.0 / gnorm))
            if alpha is None:
                status = "line_search_failure"
                break
        x_new, f_new, g_new = last["x"], last["f"], last["g"]
        # Recompute at the exact accepted step if zoom returned a step the
        # closure did not evaluate last.
        if not np.allclose(x_new, x + alpha * d):
            x_new = x + alpha * d
            f_new, g_new = value_and_grad(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            gamma = sy / float(np.dot(y, y))
        x, f, g = x_new, f_new, g_new
    return LbfgsResult(x=x, f=f, grad_norm=float(np.linalg.norm(g)),
                       iterations=it, status=status)


def _two_loop(g: Vector, s_hist, y_hist, gamma: float) -> Vector:
    q = -g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(np.dot(s, y))
        a = rho * float(np.dot(s, q))
        q -= a * y
        alphas.append((a, rho, s, y))
    q *= gamma
    for a, rho, s, y in reversed(alphas):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


@dataclass
class SolveResult:
    x_final: Vector
    x_postprocessed: Vector
    multipliers: MultiplierSet
    kkt: KktReport
    trace: SolveTrace
    status: str  # converged | max_iter | inner_failure | diverged | max_time
    objective: float = np.nan
    wall_time: float = np.nan


def _augmented(value_grad_weighted, lam, mu, sigma):
    """Closure computing the augmented Lagrangian value and gradient from a
    pipeline's primitives (one shared evaluation per point)."""

    def val_grad(x):
        f, e, iv, grad_from = value_grad_weighted(x)
        val = f
        a = None
        b = None
        if e.size:
            a = lam + sigma * e
            val += float(np.dot(lam, e)) + 0.5 * sigma * float(np.dot(e, e))
        if iv.size:
            shifted = np.maximum(iv + mu / sigma, 0.0)
            b = sigma * shifted
            val += 0.5 * sigma * float(np.dot(shifted, shifted)) \
                - 0.5 * float(np.dot(mu, mu)) / sigma
        g = grad_from(a, b)
        return val, g

    return val_grad


def _alm_loop(problem: ProblemSpec, pipeline, x0: Vector, opts: AlmOptions,
              n_eq: int, n_ineq: int) -> SolveResult:
    """Shared outer loop.  ``pipeline`` bundles the closures that differ
    between the transformed and the direct formulation."""
    t0 = time.perf_counter()
    x = np.asarray(x0, dtype=float).ravel().copy()
    lam = np.zeros(n_eq)
    mu = np.zeros(n_ineq)
    sigma = opts.alm_penalty_init
    trace = SolveTrace()
    prev_viol = np.inf
    prev_resid = np.inf
    stalled_inner = 0
    status = "max_iter"

    # An already-certified starting point needs no inner solves at all.
    x_post, kkt = pipeline["certify"](x)
    if (kkt.feasibility <= opts.outer_tol_feasibility
            and kkt.stationarity <= opts.outer_tol_stationarity):
        trace.append(TraceRow(
            iteration=1, objective=float(problem.eval_f(x_post)),
            feasibility=kkt.feasibility, stationarity=kkt.stationarity,
            beta=pipeline["beta"](), sigma=sigma, multiplier_norm=0.0,
            wall_time=time.perf_counter() - t0, note="initial_point_stationary"))
        return SolveResult(
            x_final=x, x_postprocessed=x_post,
            multipliers=MultiplierSet(rho=pipeline["rho"](lam),
                                      lam=pipeline["lam"](lam), mu=mu),
            kkt=kkt, trace=trace, status="converged",
            objective=float(problem.eval_f(x_post)),
            wall_time=time.perf_counter() - t0)

    for k in range(1, opts.max_outer + 1):
        # Without extra constraints there is no multiplier loop to warm up,
        # so the inner solve can target the final tolerance directly.
        inner_tol = opts.outer_tol_stationarity if n_eq + n_ineq == 0 \
            else max(opts.outer_tol_stationarity, 0.1 ** k)
        aug = _augmented(pipeline["value_grad_weighted"], lam, mu, sigma)
        inner = lbfgs_minimize(aug, x, tol=inner_tol,
                               max_iter=opts.max_inner,
                               memory=opts.lbfgs_memory)
        x = inner.x
        if not np.all(np.isfinite(x)) or not np.isfinite(inner.f):
            status = "diverged"
            break

        e, iv = pipeline["constraints"](x)
        ineq_viol = np.maximum(iv, -mu / sigma) if n_ineq else iv
        viol_vec = np.concatenate([e, ineq_viol])
        viol = float(np.linalg.norm(viol_vec)) if viol_vec.size else 0.0

        note = ""
        clip = opts.multiplier_clip
        lam_new = lam + sigma * e
        mu_new = np.maximum(mu + sigma * iv, 0.0)
        if np.any(np.abs(lam_new) > clip) or np.any(mu_new > clip):
            note = "multiplier_clipped"
        lam = np.clip(lam_new, -clip, clip)
        mu = np.minimum(mu_new, clip)

        x_post, kkt = pipeline["certify"](x)
        obj = float(problem.eval_f(x_post))
        trace.append(TraceRow(
            iteration=k, objective=obj, feasibility=kkt.feasibility,
            stationarity=kkt.stationarity, beta=pipeline["beta"](),
            sigma=sigma,
            multiplier_norm=float(np.linalg.norm(np.concatenate([lam, mu]))),
            wall_time=time.perf_counter() - t0, note=note))

        if (kkt.feasibility <= opts.outer_tol_feasibility
                and kkt.stationarity <= opts.outer_tol_stationarity):
            status = "converged"
            break
        # A failed inner line search is only fatal when the outer residual
        # has also stopped improving; near the solution the search direction
        # is dominated by roundoff while the multiplier updates still make
        # progress.
        resid = max(kkt.feasibility, kkt.stationarity)
        if inner.status == "line_search_failure" and resid > 0.5 * prev_resid:
            stalled_inner += 1
        else:
            stalled_inner = 0
        if stalled_inner >= 2:
            status = "inner_failure"
            break
        prev_resid = min(prev_resid, resid)
        if viol > prev_viol / 4.0 and viol > opts.outer_tol_feasibility:
            sigma *= opts.alm_penalty_growth
        prev_viol = min(prev_viol, viol) if np.isfinite(prev_viol) else viol

        pipeline["adapt"](lam, mu, trace)

        if opts.time_budget is not None \
                and time.perf_counter() - t0 > opts.time_budget:
            status = "max_time"
            break

    if kkt is None:
        x_post, kkt = pipeline["certify"](x)
    mult = MultiplierSet(rho=pipeline["rho"](lam), lam=pipeline["lam"](lam), mu=mu)
    return SolveResult(
        x_final=x, x_postprocessed=x_post, multipliers=mult, kkt=kkt,
        trace=trace, status=status,
        objective=float(problem.eval_f(x_post)),
        wall_time=time.perf_counter() - t0)


def alm_solve_cdp(instance: CdpInstance, x0: Vector,
                  opts: AlmOptions = AlmOptions()) -> SolveResult:
    """Solve the transformed problem by ALM on u~ = 0, v~ <= 0.

    When beta adaptation is on, the multiplier-coupled penalty lower bound
    is recomputed from cached constant estimates after each outer
    iteration; if the current beta falls short the instance is rebuilt
    with beta = growth * bound.
    """
    problem = instance.problem
    state = {"instance": instance, "estimates": None}

    def value_grad_weighted(x):
        pe = state["instance"].point_eval(x)
        return pe.h, pe.u_tilde, pe.v_tilde, \
            lambda a, b: pe.weighted_grad(1.0, a, b)

    def constraints(x):
        pe = state["instance"].point_eval(x)
        return pe.u_tilde, pe.v_tilde

    def certify(x):
        try:
            xp = a_infinity(problem.manifold, x)
        except OutOfNeighborhoodError:
            xp = x
        return xp, kkt_residual(problem, xp)

    def adapt(lam, mu, trace):
        if not opts.beta_adapt:
            return
        params = state["instance"].params
        if state["estimates"] is None:
            try:
                x_ref = a_infinity(problem.manifold, np.asarray(x0, dtype=float).ravel())
                state["estimates"] = estimate_constants(
                    problem, x_ref, radius=0.1, samples=30, seed=0)
            except Exception:
                state["estimates"] = False
                return
        est = state["estimates"]
        if est is False:
            return
        M = (est.L_fx + float(np.linalg.norm(lam, 1)) * est.M_ux
             + float(np.linalg.norm(mu, 1)) * est.M_vx)
        beta_req = (32.0 * est.L_Ax * (est.M_Ax + 1.0) * M / est.sigma1x ** 2
                    - float(np.dot(lam, params.tau))
                    - float(np.dot(mu, params.gamma)))
        if params.beta < beta_req:
            new_beta = opts.beta_growth * beta_req
            state["instance"] = build_cdp(
                problem, PenaltyParams(new_beta, params.tau, params.gamma))
            if trace.rows:
                trace.rows[-1].note = (trace.rows[-1].note + " "
                                       if trace.rows[-1].note else "") \
                    + f"beta_adapted:{new_beta:.6g}"

    pipeline = {
        "value_grad_weighted": value_grad_weighted,
        "constraints": constraints,
        "certify": certify,
        "adapt": adapt,
        "beta": lambda: state["instance"].params.beta,
        "rho": lambda lam: np.zeros(0),
        "lam": lambda lam: lam,
    }
    return _alm_loop(problem, pipeline, x0, opts,
                     problem.n_eq, problem.n_ineq)


def alm_solve_nlp_direct(problem: ProblemSpec, x0: Vector,
                         opts: AlmOptions = AlmOptions()) -> SolveResult:
    """Baseline: identical ALM machinery on the raw constraints
    [c; u] = 0, v <= 0 with objective f (no dissolving)."""
    p = problem.p
    mani = problem.manifold

    def value_grad_weighted(x):
        x = np.asarray(x, dtype=float).ravel()
        f = float(problem.eval_f(x))
        e = np.concatenate([mani.eval_c(x), problem.eval_u(x)])
        iv = problem.eval_v(x)

        def grad_from(a, b):
            g = problem.grad_f(x)
            if a is not None and a.size:
                if p:
                    g = g + mani.apply_Jc(x, a[:p])
                if problem.n_eq:
                    g = g + problem.apply_Ju(x, a[p:])
            if b is not None and b.size:
                g = g + problem.apply_Jv(x, b)
            return g

        return f, e, iv, grad_from

    def constraints(x):
        x = np.asarray(x, dtype=float).ravel()
        return np.concatenate([mani.eval_c(x), problem.eval_u(x)]), problem.eval_v(x)

    def certify(x):
        xp = x
        if p:
            try:
                xp = a_infinity(mani, x)
            except OutOfNeighborhoodError:
                xp = x
        return xp, kkt_residual(problem, xp)

    pipeline = {
        "value_grad_weighted": value_grad_weighted,
        "constraints": constraints,
        "certify": certify,
        "adapt": lambda lam, mu, trace: None,
        "beta": lambda: 0.0,
        "rho": lambda lam: lam[:p],
        "lam": lambda lam: lam[p:],
    }
    return _alm_loop(problem, pipeline, x0, opts, p + problem.n_eq,
                     problem.n_ineq)
