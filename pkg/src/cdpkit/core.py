"""Problem model: NLP / penalized-problem data types, evaluator contracts,
finite-difference utilities and configuration ingestion.

All evaluators work on flat float64 vectors of length ``n``.  Matrix
variables are flattened row-major; the owning handle carries the
``(rows, cols)`` metadata needed to reshape internally.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

Vector = np.ndarray

__all__ = [
    "CdpkitError",
    "ConfigurationError",
    "DegenerateStepError",
    "DimensionError",
    "EvaluatorFaultError",
    "OutOfNeighborhoodError",
    "ParameterError",
    "RankDeficiencyError",
    "ManifoldHandle",
    "MultiplierSet",
    "PenaltyParams",
    "Point",
    "ProblemSpec",
    "SolveTrace",
    "TraceRow",
    "ValidationReport",
    "default_fd_step",
    "finite_diff_check",
    "gradient_action",
    "load_problem",
    "validate_manifold",
]

FEASIBILITY_TOL = 1e-10  # absolute tolerance on ||c(x)|| for "feasible"


class CdpkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(CdpkitError):
    """Malformed or inconsistent problem configuration.

    Carries the dotted path of the offending field in ``path``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class EvaluatorFaultError(CdpkitError):
    """An evaluator returned a non-finite value."""


class DegenerateStepError(CdpkitError):
    """Finite-difference step underflows double precision."""


class OutOfNeighborhoodError(CdpkitError):
    """Iterated dissolving map left the operative neighborhood."""

    def __init__(self, message: str, last_violation: float = np.nan):
        self.last_violation = last_violation
        super().__init__(message)


class RankDeficiencyError(CdpkitError):
    """Constraint Jacobian is (numerically) rank deficient."""


class DimensionError(CdpkitError):
    """Inconsistent or invalid dimensions."""


class ParameterError(CdpkitError):
    """Invalid parameter values (negative penalties, bad tolerances...)."""


@dataclass(frozen=True)
class Point:
    """A point in the ambient space, flattened row-major.

    ``shape`` is ``(rows, cols)`` when the natural variable is a matrix,
    else ``None``.
    """

    coords: Vector
    shape: tuple[int, int] | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).ravel()
        object.__setattr__(self, "coords", coords)
        if not np.all(np.isfinite(coords)):
            raise EvaluatorFaultError("point has non-finite coordinates")
        if self.shape is not None and self.shape[0] * self.shape[1] != coords.size:
            raise DimensionError(
                f"shape {self.shape} inconsistent with {coords.size} coordinates"
            )

    @property
    def n(self) -> int:
        return self.coords.size

    def as_matrix(self) -> Vector:
        if self.shape is None:
            raise DimensionError("point carries no matrix shape")
        return self.coords.reshape(self.shape)


@dataclass(frozen=True)
class ManifoldHandle:
    """Evaluators for the manifold constraints c and the dissolving map A.

    * ``eval_c(x) -> (p,)``            constraint residual
    * ``apply_JcT(x, d) -> (p,)``      directional derivative of c along d
    * ``apply_Jc(x, w) -> (n,)``       weighted combination of constraint
                                       gradients, sum_l w_l grad c_l(x)
    * ``eval_A(x) -> (n,)``            dissolving map
    * ``apply_JAT(x, g) -> (n,)``      transposed-Jacobian action of A,
                                       i.e. the chain-rule factor in
                                       grad (f o A)(x)
    """

    name: str
    n: int
    p: int
    eval_c: Callable[[Vector], Vector]
    apply_JcT: Callable[[Vector, Vector], Vector]
    apply_Jc: Callable[[Vector, Vector], Vector]
    eval_A: Callable[[Vector], Vector]
    apply_JAT: Callable[[Vector, Vector], Vector]
    shape: tuple[int, int] | None = None


def _empty_vec(x: Vector) -> Vector:
    return np.zeros(0)


def _empty_comb(x: Vector, w: Vector) -> Vector:
    return np.zeros_like(x)


def _empty_dir(x: Vector, d: Vector) -> Vector:
    return np.zeros(0)


@dataclass(frozen=True)
class ProblemSpec:
    """A manifold-constrained nonlinear program.

        min f(x)  s.t.  c(x) = 0 (manifold),  u(x) = 0,  v(x) <= 0

    Jacobians of u and v are exposed as actions only: ``apply_JuT(x, d)``
    is the directional derivative of u along d and ``apply_Ju(x, w)`` the
    weighted combination of constraint gradients.
    """

    manifold: ManifoldHandle
    eval_f: Callable[[Vector], float]
    grad_f: Callable[[Vector], Vector]
    n_eq: int = 0
    eval_u: Callable[[Vector], Vector] = _empty_vec
    apply_JuT: Callable[[Vector, Vector], Vector] = _empty_dir
    apply_Ju: Callable[[Vector, Vector], Vector] = _empty_comb
    n_ineq: int = 0
    eval_v: Callable[[Vector], Vector] = _empty_vec
    apply_JvT: Callable[[Vector, Vector], Vector] = _empty_dir
    apply_Jv: Callable[[Vector, Vector], Vector] = _empty_comb
    name: str = "problem"
    description: str = ""

    @property
    def n(self) -> int:
        return self.manifold.n

    @property
    def p(self) -> int:
        return self.manifold.p


@dataclass(frozen=True)
class PenaltyParams:
    """Non-negative penalty parameters of the transformed problem."""

    beta: float
    tau: Vector = field(default_factory=lambda: np.zeros(0))
    gamma: Vector = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float).ravel())
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float).ravel())
        if self.beta < 0 or np.any(self.tau < 0) or np.any(self.gamma < 0):
            raise ParameterError("penalty parameters must be non-negative")


@dataclass
class MultiplierSet:
    """Multipliers (rho for manifold equalities, lambda for u, mu for v)."""

    rho: Vector = field(default_factory=lambda: np.zeros(0))
    lam: Vector = field(default_factory=lambda: np.zeros(0))
    mu: Vector = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).ravel()
        self.lam = np.asarray(self.lam, dtype=float).ravel()
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        if np.any(self.mu < 0):
            raise ParameterError("inequality multipliers mu must be non-negative")


@dataclass
class TraceRow:
    iteration: int
    objective: float
    feasibility: float
    stationarity: float
    beta: float
    sigma: float
    multiplier_norm: float
    wall_time: float
    note: str = ""

    def key_fields(self) -> tuple:
        """All fields except wall time, for determinism comparisons."""
        return (
            self.iteration,
            self.objective,
            self.feasibility,
            self.stationarity,
            self.beta,
            self.sigma,
            self.multiplier_norm,
            self.note,
        )


@dataclass
class SolveTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        if self.rows:
            if row.iteration <= self.rows[-1].iteration:
                raise ParameterError("trace iterations must strictly increase")
            if row.wall_time < self.rows[-1].wall_time:
                raise ParameterError("trace wall times must be nondecreasing")
        self.rows.append(row)

    def to_csv_rows(self) -> list[dict]:
        return [
            {
                "iter": r.iteration,
                "f": r.objective,
                "feas": r.feasibility,
                "stat": r.stationarity,
                "beta": r.beta,
                "sigma": r.sigma,
                "time": r.wall_time,
            }
            for r in self.rows
        ]


@dataclass
class ValidationReport:
    max_fixed_point_error: float
    max_jacobian_product_norm: float
    tol: float
    probes_used: int
    passed: bool
    notes: list[str] = field(default_factory=list)


def _project_feasible(handle: ManifoldHandle, y: Vector,
                      tol: float = FEASIBILITY_TOL, max_iter: int = 50) -> Vector:
    # Small local projection loop; the public iterated-map operator with the
    # full error contract lives in cdpkit.dissolve.
    z = np.asarray(y, dtype=float).ravel()
    viol = float(np.linalg.norm(handle.eval_c(z)))
    for _ in range(max_iter):
        if viol <= tol:
            return z
        z_next = handle.eval_A(z)
        viol_next = float(np.linalg.norm(handle.eval_c(z_next)))
        if not np.isfinite(viol_next) or viol_next > 10.0 * max(viol, tol):
            raise OutOfNeighborhoodError(
                f"projection diverged (||c|| = {viol_next:.3e})", viol_next)
        z, viol = z_next, viol_next
    if viol <= tol:
        return z
    raise OutOfNeighborhoodError(
        f"projection stalled at ||c|| = {viol:.3e}", viol)


def validate_manifold(handle: ManifoldHandle, probes: Sequence[Vector],
                      tol: float) -> ValidationReport:
    """Check the dissolving-map axioms at (projections of) the given probes.

    At each feasible probe x the report records ``||A(x) - x||_inf`` and an
    estimate of the operator norm of the product of the transposed Jacobian
    of A with the constraint Jacobian, obtained by pushing each of the p
    constraint-gradient columns through ``apply_JAT``.
    """
    max_fix = 0.0
    max_prod = 0.0
    notes: list[str] = []
    used = 0
    eye_p = np.eye(handle.p)
    for k, probe in enumerate(probes):
        x = np.asarray(probe, dtype=float).ravel()
        if x.size != handle.n:
            raise DimensionError(f"probe {k} has length {x.size}, expected {handle.n}")
        viol = float(np.linalg.norm(handle.eval_c(x)))
        if not np.isfinite(viol):
            raise EvaluatorFaultError(f"eval_c non-finite at probe {k}")
        if viol > FEASIBILITY_TOL:
            try:
                x = _project_feasible(handle, x)
            except OutOfNeighborhoodError as exc:
                notes.append(f"probe {k} skipped: {exc}")
                continue
        ax = handle.eval_A(x)
        if not np.all(np.isfinite(ax)):
            raise EvaluatorFaultError(f"eval_A non-finite at probe {k}")
        max_fix = max(max_fix, float(np.max(np.abs(ax - x), initial=0.0)))
        cols = np.empty((handle.n, handle.p))
        for l in range(handle.p):
            col = handle.apply_JAT(x, handle.apply_Jc(x, eye_p[l]))
            if not np.all(np.isfinite(col)):
                raise EvaluatorFaultError(f"Jacobian action non-finite at probe {k}")
            cols[:, l] = col
        if handle.p > 0:
            max_prod = max(max_prod, float(np.linalg.norm(cols, 2)))
        used += 1
    passed = used > 0 and max_fix <= tol and max_prod <= tol
    return ValidationReport(max_fix, max_prod, tol, used, passed, notes)


def default_fd_step(x: Vector) -> float:
    """Central-difference step 1e-6 * (1 + ||x||)."""
    return 1e-6 * (1.0 + float(np.linalg.norm(x)))


def gradient_action(grad_fn: Callable[[Vector], Vector]) -> Callable[[Vector, Vector], float]:
    """Adapt a gradient evaluator into a directional-derivative action."""

    def action(x: Vector, d: Vector) -> float:
        return float(np.dot(grad_fn(x), d))

    return action


def finite_diff_check(value_fn: Callable[[Vector], float | Vector],
                      deriv_action: Callable[[Vector, Vector], float | Vector],
                      point: Vector, step: float,
                      n_directions: int = 10, seed: int = 0) -> float:
    """Max relative mismatch between central differences and the claimed
    directional derivative over random unit directions.

    ``deriv_action(x, d)`` must return the derivative of ``value_fn`` along
    d (a scalar for scalar evaluators, a vector for vector evaluators).
    """
    x = np.asarray(point, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise EvaluatorFaultError("non-finite point")
    if step <= 0:
        raise DegenerateStepError("step must be positive")
    if step < 1e-13 * (1.0 + float(np.linalg.norm(x))):
        raise DegenerateStepError(f"step {step:.3e} underflows at this point scale")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_directions):
        d = rng.standard_normal(x.size)
        d /= np.linalg.norm(d)
        fd = (np.asarray(value_fn(x + step * d), dtype=float)
              - np.asarray(value_fn(x - step * d), dtype=float)) / (2.0 * step)
        dv = np.asarray(deriv_action(x, d), dtype=float)
        err = float(np.linalg.norm(np.atleast_1d(fd - dv)))
        scale = 1.0 + float(np.linalg.norm(np.atleast_1d(dv)))
        worst = max(worst, err / scale)
    return worst


_KNOWN_FAMILIES = ("center_of_mass", "balanced_cut", "custom")

_REQUIRED_FIELDS = {
    "center_of_mass": ("m", "q", "N", "r", "seed"),
    "balanced_cut": ("m", "q", "rho", "seed"),
}


def load_problem(config) -> ProblemSpec:
    """Build a registered benchmark problem from a configuration document.

    ``config`` may be a mapping, a YAML/JSON string, or a path to a YAML
    file.  Deterministic given identical seed.
    """
    doc = _ingest_config(config)
    family = doc.get("family")
    if family is None:
        raise ConfigurationError("family", "missing required field")
    if family not in _KNOWN_FAMILIES:
        raise ConfigurationError("family", f"unknown family {family!r}")
    if family == "custom":
        raise ConfigurationError(
            "family", "custom problems are supplied programmatically, not via config")
    for key in _REQUIRED_FIELDS[family]:
        if key not in doc:
            raise ConfigurationError(f"family.{key}", "missing required field")

    from . import bench  # local import: bench builds on core

    try:
        if family == "center_of_mass":
            cfg = bench.CenterOfMassConfig(
                m=int(doc["m"]), q=int(doc["q"]), N=int(doc["N"]),
                r=float(doc["r"]), seed=int(doc["seed"]))
            problem, _ = bench.gen_center_of_mass(cfg)
        else:
            cfg = bench.BalancedCutConfig(
                m=int(doc["m"]), q=int(doc["q"]),
                rho=float(doc["rho"]), seed=int(doc["seed"]))
            problem, _ = bench.gen_balanced_cut(cfg)
    except (DimensionError, ParameterError, ValueError) as exc:
        raise ConfigurationError(f"family.{family}", str(exc)) from exc
    return problem


def _ingest_config(config) -> dict:
    if isinstance(config, dict):
        return config
    if isinstance(config, (str, Path)):
        path = Path(config)
        if isinstance(config, Path) or (len(str(config)) < 4096 and path.is_file()):
            text = path.read_text()
        else:
            text = str(config)
        try:
            doc = yaml.safe_load(io.StringIO(text))
        except yaml.YAMLError as exc:
            raise ConfigurationError("<document>", f"unparseable config: {exc}")
        if not isinstance(doc, dict):
            raise ConfigurationError("<document>", "config must be a key-value tree")
        return doc
    raise ConfigurationError("<document>", f"unsupported config type {type(config)!r}")
