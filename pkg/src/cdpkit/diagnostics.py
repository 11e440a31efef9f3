"""KKT residuals, feasibility metric, LICQ check, neighborhood-constant
estimation and penalty-condition checkers.

Dense assembly of constraint gradients is permitted here: diagnostics run
at probe scale, not solver scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .core import (
    MultiplierSet,
    PenaltyParams,
    ProblemSpec,
    RankDeficiencyError,
    Vector,
)
from .manifolds import GenericManifoldSpec, make_handle

__all__ = [
    "ConditionReport",
    "ConstantEstimates",
    "KktReport",
    "check_condition",
    "check_licq",
    "estimate_constants",
    "feasibility",
    "kkt_residual",
    "make_synthetic_kkt",
]

ACTIVE_TOL = 1e-6


def feasibility(problem: ProblemSpec, x: Vector) -> float:
    """||u(x)|| + ||c(x)|| + ||max(v(x), 0)||."""
    x = np.asarray(x, dtype=float).ravel()
    u = problem.eval_u(x)
    c = problem.manifold.eval_c(x)
    v = problem.eval_v(x)
    return (float(np.linalg.norm(u)) + float(np.linalg.norm(c))
            + float(np.linalg.norm(np.maximum(v, 0.0))))


def _dense_columns(apply_comb, x: Vector, count: int, n: int) -> Vector:
    cols = np.empty((n, count))
    eye = np.eye(count)
    for k in range(count):
        cols[:, k] = apply_comb(x, eye[k])
    return cols


def dense_jacobians(problem: ProblemSpec, x: Vector):
    """Dense (n x p), (n x N_E), (n x N_I) constraint-gradient matrices."""
    n = problem.n
    Jc = _dense_columns(problem.manifold.apply_Jc, x, problem.p, n)
    Ju = _dense_columns(problem.apply_Ju, x, problem.n_eq, n)
    Jv = _dense_columns(problem.apply_Jv, x, problem.n_ineq, n)
    return Jc, Ju, Jv


@dataclass
class KktReport:
    stationarity: float
    feasibility: float
    multipliers: MultiplierSet
    active_set: list[int]
    complementarity: float
    rank_deficient: bool = False

    def as_record(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "feasibility": self.feasibility,
            "complementarity": self.complementarity,
            "n_active": len(self.active_set),
            "rank_deficient": self.rank_deficient,
        }


def kkt_residual(problem: ProblemSpec, x: Vector) -> KktReport:
    """Stationarity of the original NLP at x.

    Solves min_{rho, lambda, mu >= 0} ||grad f + Jc rho + Ju lambda + Jv mu||
    by eliminating the free multipliers with a least-squares projector and
    running non-negative least squares on the inequality block.
    """
    x = np.asarray(x, dtype=float).ravel()
    g = problem.grad_f(x)
    Jc, Ju, Jv = dense_jacobians(problem, x)
    B = np.hstack([Jc, Ju])
    n_free = B.shape[1]

    rank_deficient = False
    if n_free:
        Q, R, _ = scipy.linalg.qr(B, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-12 * max(diag.max(), 1.0))) if diag.size else 0
        if rank < n_free:
            rank_deficient = True
        # Only the first `rank` columns of Q span range(B); the rest are
        # numerical noise directions and must not enter the projector.
        Qr = Q[:, :rank]
        proj = lambda vec: vec - Qr @ (Qr.T @ vec)
    else:
        proj = lambda vec: vec

    if problem.n_ineq:
        PC = np.column_stack([proj(Jv[:, j]) for j in range(problem.n_ineq)])
        mu, _ = scipy.optimize.nnls(PC, -proj(g))
    else:
        mu = np.zeros(0)

    rhs = g + (Jv @ mu if mu.size else 0.0)
    if n_free:
        xi, _, rank, _ = np.linalg.lstsq(B, -rhs, rcond=None)
        if rank < n_free:
            rank_deficient = True
        resid = rhs + B @ xi
    else:
        xi = np.zeros(0)
        resid = rhs
    rho, lam = xi[: problem.p], xi[problem.p:]

    v = problem.eval_v(x)
    active = [j for j in range(problem.n_ineq)
              if abs(v[j]) <= ACTIVE_TOL * (1.0 + abs(v[j]))]
    comp = float(abs(np.dot(mu, v))) if mu.size else 0.0
    return KktReport(
        stationarity=float(np.linalg.norm(resid)),
        feasibility=feasibility(problem, x),
        multipliers=MultiplierSet(rho=rho, lam=lam, mu=mu),
        active_set=active,
        complementarity=comp,
        rank_deficient=rank_deficient)


def check_licq(problem: ProblemSpec, x: Vector, tol: float = 1e-8) -> bool:
    """True when the active constraint gradients are linearly independent
    (smallest singular value above ``tol`` times the largest)."""
    x = np.asarray(x, dtype=float).ravel()
    Jc, Ju, Jv = dense_jacobians(problem, x)
    v = problem.eval_v(x)
    active = [j for j in range(problem.n_ineq)
              if abs(v[j]) <= ACTIVE_TOL * (1.0 + abs(v[j]))]
    cols = [Jc, Ju] + ([Jv[:, active]] if active else [])
    M = np.hstack([c for c in cols if c.shape[1]]) if any(
        c.shape[1] for c in cols) else np.zeros((problem.n, 0))
    if M.shape[1] == 0:
        return True
    if M.shape[1] > problem.n:
        return False
    s = np.linalg.svd(M, compute_uv=False)
    return bool(s[-1] > tol * s[0])


@dataclass
class ConstantEstimates:
    """Sampled estimates of the neighborhood constants around a feasible
    point, and the radii they induce.  Maxima over samples are lower bounds
    on the true suprema; downstream condition checks apply a safety factor.
    """

    sigma1x: float
    M_cx: float
    M_Ax: float
    M_ux: float
    M_vx: float
    L_fx: float
    L_cx: float
    L_Ax: float
    L_Acx: float
    rho_x: float
    epsilon_x: float
    omega_bar_radius: float
    sample_count: int
    radius: float


def _dense_jat(problem: ProblemSpec, x: Vector) -> Vector:
    n = problem.n
    J = np.empty((n, n))
    eye = np.eye(n)
    for k in range(n):
        J[:, k] = problem.manifold.apply_JAT(x, eye[k])
    return J


def estimate_constants(problem: ProblemSpec, x: Vector, radius: float,
                       samples: int = 100, seed: int = 0) -> ConstantEstimates:
    """Estimate the neighborhood constants by sampling the ball of the given
    radius around a feasible x: suprema as maxima over samples, Lipschitz
    constants as maxima of difference quotients over consecutive pairs.
    """
    x = np.asarray(x, dtype=float).ravel()
    if radius > 1.0:
        raise ValueError("radius must be <= 1")
    mani = problem.manifold
    n = problem.n

    Jc0 = _dense_columns(mani.apply_Jc, x, problem.p, n)
    sigma1 = float(np.linalg.svd(Jc0, compute_uv=False)[-1]) if problem.p else 0.0
    if problem.p and sigma1 <= 1e-10:
        raise RankDeficiencyError(
            f"sigma_min(Jc) = {sigma1:.3e} at the base point; full-rank "
            "constraint Jacobian required")

    rng = np.random.default_rng(seed)
    pts = [x]
    for _ in range(samples):
        d = rng.standard_normal(n)
        d *= radius * rng.random() ** (1.0 / n) / np.linalg.norm(d)
        pts.append(x + d)

    M_c = M_A = M_u = M_v = L_f = 0.0
    L_c = L_A = L_Ac = 0.0
    prev = None
    for y in pts:
        Jc = _dense_columns(mani.apply_Jc, y, problem.p, n)
        Ja = _dense_jat(problem, y)
        ay = mani.eval_A(y)
        JcA = _dense_columns(mani.apply_Jc, ay, problem.p, n)
        JaJcA = Ja @ JcA if problem.p else np.zeros((n, 0))
        Ju = _dense_columns(problem.apply_Ju, y, problem.n_eq, n)
        Jv = _dense_columns(problem.apply_Jv, y, problem.n_ineq, n)
        M_c = max(M_c, _spec_norm(Jc))
        M_A = max(M_A, _spec_norm(Ja))
        M_u = max(M_u, _spec_norm(Ju))
        M_v = max(M_v, _spec_norm(Jv))
        L_f = max(L_f, float(np.linalg.norm(problem.grad_f(ay))))
        if prev is not None:
            dist = float(np.linalg.norm(y - prev["y"]))
            if dist > 1e-12:
                L_c = max(L_c, _spec_norm(Jc - prev["Jc"]) / dist)
                L_A = max(L_A, _spec_norm(Ja - prev["Ja"]) / dist)
                L_Ac = max(L_Ac, _spec_norm(JaJcA - prev["JaJcA"]) / dist)
        prev = {"y": y, "Jc": Jc, "Ja": Ja, "JaJcA": JaJcA}

    rho_x = _estimate_rho(problem, x, sigma1, radius, rng)
    with np.errstate(divide="ignore"):
        eps = min(
            rho_x / 2.0,
            sigma1 / (32.0 * L_c * (M_A + 1.0)) if L_c > 0 else np.inf,
            sigma1 ** 2 / (8.0 * L_Ac * M_c) if L_Ac > 0 and M_c > 0 else np.inf,
        )
    omega_bar = sigma1 * eps / (4.0 * M_c * (M_A + 1.0) + sigma1) if M_c > 0 else eps
    return ConstantEstimates(
        sigma1x=sigma1, M_cx=M_c, M_Ax=M_A, M_ux=M_u, M_vx=M_v, L_fx=L_f,
        L_cx=L_c, L_Ax=L_A, L_Acx=L_Ac, rho_x=rho_x, epsilon_x=float(eps),
        omega_bar_radius=float(omega_bar), sample_count=len(pts) - 1,
        radius=radius)


def _estimate_rho(problem, x, sigma1, radius, rng, probes_per_radius: int = 8):
    """Largest tested radius keeping sigma_min(Jc) >= sigma1 / 2."""
    if problem.p == 0:
        return 1.0
    best = 0.0
    for r in np.geomspace(max(radius, 1e-3), 1.0, 6):
        ok = True
        for _ in range(probes_per_radius):
            d = rng.standard_normal(problem.n)
            d *= r / np.linalg.norm(d)
            Jc = _dense_columns(problem.manifold.apply_Jc, x + d, problem.p, problem.n)
            if np.linalg.svd(Jc, compute_uv=False)[-1] < 0.5 * sigma1:
                ok = False
                break
        if ok:
            best = float(r)
        else:
            break
    return best if best > 0 else float(radius)


def _spec_norm(M: Vector) -> float:
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


@dataclass
class ConditionReport:
    """Numeric slacks for the penalty lower bounds.

    Estimated constants are maxima over samples (lower bounds on the true
    suprema), so each inequality is only declared met when the parameter
    exceeds twice its estimated threshold.
    """

    beta: float
    beta_threshold: float
    beta_slack: float
    beta_met: bool
    gamma_threshold: float | None = None
    gamma_slack: float | None = None
    gamma_met: bool | None = None
    M_x_lam_mu: float | None = None
    coupled_threshold: float | None = None
    coupled_lhs: float | None = None
    coupled_slack: float | None = None
    coupled_met: bool | None = None
    notes: list[str] = field(default_factory=list)

    def as_record(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "notes"}


SAFETY = 2.0


def check_condition(estimates: ConstantEstimates, params: PenaltyParams,
                    mult: MultiplierSet | None = None) -> ConditionReport:
    """Evaluate the multiplier-free penalty lower bounds

        beta   >= 64 L_f (M_A + 1)(L_Ac + sigma L_A) / sigma^3
        gamma_j >= 32 L_A M_v (M_A + 1) / sigma^2

    and, when multipliers are supplied, the multiplier-coupled bound

        beta + sum lambda_i tau_i + sum mu_j gamma_j
            >= 32 L_A (M_A + 1) M / sigma^2,
        M = L_f + ||lambda||_1 M_u + ||mu||_1 M_v.
    """
    s = estimates.sigma1x
    if s <= 0:
        raise RankDeficiencyError("sigma1x must be positive for condition checks")
    beta_thr = (64.0 * estimates.L_fx * (estimates.M_Ax + 1.0)
                * (estimates.L_Acx + s * estimates.L_Ax) / s ** 3)
    report = ConditionReport(
        beta=params.beta,
        beta_threshold=beta_thr,
        beta_slack=params.beta - beta_thr,
        beta_met=params.beta >= SAFETY * beta_thr)

    if params.gamma.size:
        gamma_thr = 32.0 * estimates.L_Ax * estimates.M_vx * (estimates.M_Ax + 1.0) / s ** 2
        gmin = float(np.min(params.gamma))
        report.gamma_threshold = gamma_thr
        report.gamma_slack = gmin - gamma_thr
        report.gamma_met = gmin >= SAFETY * gamma_thr

    if mult is not None:
        M = (estimates.L_fx
             + float(np.linalg.norm(mult.lam, 1)) * estimates.M_ux
             + float(np.linalg.norm(mult.mu, 1)) * estimates.M_vx)
        thr = 32.0 * estimates.L_Ax * (estimates.M_Ax + 1.0) * M / s ** 2
        lhs = params.beta
        if mult.lam.size and params.tau.size:
            lhs += float(np.dot(mult.lam, params.tau))
        if mult.mu.size and params.gamma.size:
            lhs += float(np.dot(mult.mu, params.gamma))
        report.M_x_lam_mu = M
        report.coupled_threshold = thr
        report.coupled_lhs = lhs
        report.coupled_slack = lhs - thr
        report.coupled_met = lhs >= SAFETY * thr
    return report


def make_synthetic_kkt(n: int = 12, p: int = 2, n_eq: int = 2,
                       n_active: int = 1, n_inactive: int = 1,
                       seed: int = 0) -> tuple[ProblemSpec, Vector, MultiplierSet]:
    """Plant an exact KKT point: quadratic objective, affine constraints,
    chosen multipliers with exact complementarity.

    Returns (problem, x_star, planted multipliers).  ``kkt_residual`` at
    x_star must vanish and recover the planted multipliers when the active
    constraint gradients are independent, which the construction enforces.
    """
    n_ineq = n_active + n_inactive
    if p + n_eq + n_active > n:
        raise ValueError("too many active constraints for the dimension")
    rng = np.random.default_rng(seed)
    x_star = rng.standard_normal(n)

    # Re-draw until the active gradient block is well conditioned.
    for _ in range(20):
        Jc = rng.standard_normal((n, p))
        Ju = rng.standard_normal((n, n_eq))
        Jv = rng.standard_normal((n, n_ineq))
        act = np.hstack([Jc, Ju, Jv[:, :n_active]])
        s = np.linalg.svd(act, compute_uv=False)
        if s[-1] > 0.1:
            break

    rho_star = rng.standard_normal(p)
    lam_star = rng.standard_normal(n_eq)
    mu_star = np.zeros(n_ineq)
    mu_star[:n_active] = rng.random(n_active) + 0.5
    v_offset = np.zeros(n_ineq)
    v_offset[n_active:] = -(rng.random(n_inactive) + 0.5)

    g0 = -(Jc @ rho_star + Ju @ lam_star + Jv @ mu_star)

    def eval_f(x):
        d = x - x_star
        return 0.5 * float(np.dot(d, d)) + float(np.dot(g0, d))

    def grad_f(x):
        return (x - x_star) + g0

    gspec = GenericManifoldSpec(
        n=n, p=p,
        eval_c=lambda x: Jc.T @ (x - x_star),
        apply_JcT=lambda x, d: Jc.T @ d,
        apply_Jc=lambda x, w: Jc @ w,
        apply_dJc=lambda x, d, w: np.zeros(n),
        name=f"affine({n},{p})")
    handle = make_handle("generic", spec=gspec)

    problem = ProblemSpec(
        manifold=handle, eval_f=eval_f, grad_f=grad_f,
        n_eq=n_eq,
        eval_u=lambda x: Ju.T @ (x - x_star),
        apply_JuT=lambda x, d: Ju.T @ d,
        apply_Ju=lambda x, w: Ju @ w,
        n_ineq=n_ineq,
        eval_v=lambda x: Jv.T @ (x - x_star) + v_offset,
        apply_JvT=lambda x, d: Jv.T @ d,
        apply_Jv=lambda x, w: Jv @ w,
        name=f"synthetic_kkt(seed={seed})")
    return problem, x_star, MultiplierSet(rho=rho_star, lam=lam_star, mu=mu_star)
