"""Problem descriptions, multiplier bundles and solver reports shared across modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

from .density_core import GridDensity, GridSpec
from .errors import InfeasibleConstraints, InvalidInput, NoisePDViolation

KINDS = ("max_entropy", "min_fisher", "worst_noise", "eei", "eei_two_noise", "wiretap")
SUPPORTS = ("full", "nonnegative")

DEFAULT_POINTS = {1: 1024, 2: 128, 3: 32}


def _matrix(value, name) -> np.ndarray | None:
    if value is None:
        return None
    m = np.atleast_2d(np.asarray(value, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise InvalidInput(f"{name} must be square")
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
        raise InvalidInput(f"{name} must be symmetric")
    return 0.5 * (m + m.T)


def _vector(value) -> np.ndarray | None:
    if value is None:
        return None
    return np.atleast_1d(np.asarray(value, dtype=float))


@dataclass(frozen=True)
class MomentConstraints:
    """mean μ, correlation Ω = E[XXᵀ], and an optional covariance ceiling Σ."""

    mean: np.ndarray | None = None
    correlation: np.ndarray | None = None
    bound: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean", _vector(self.mean))
        object.__setattr__(self, "correlation", _matrix(self.correlation, "correlation"))
        object.__setattr__(self, "bound", _matrix(self.bound, "bound"))
        dims = {a.shape[0] for a in (self.mean, self.correlation, self.bound) if a is not None}
        if len(dims) > 1:
            raise InvalidInput("constraint blocks disagree on dimension")
        if not dims:
            raise InvalidInput("at least one moment constraint is required")

    @property
    def dim(self) -> int:
        for a in (self.mean, self.correlation, self.bound):
            if a is not None:
                return a.shape[0]
        raise AssertionError

    @property
    def mean_or_zero(self) -> np.ndarray:
        return self.mean if self.mean is not None else np.zeros(self.dim)

    @property
    def covariance(self) -> np.ndarray:
        if self.correlation is None:
            raise InfeasibleConstraints("no second-moment constraint given")
        mu = self.mean_or_zero
        return self.correlation - np.outer(mu, mu)


@dataclass(frozen=True)
class WiretapParams:
    gain: float
    sigma_w2: float
    sigma_z2: float
    rate: float


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    constraints: MomentConstraints
    support: str = "full"
    regularity_required: bool = False
    mu: float | None = None
    noise_cov: np.ndarray | None = None
    noise_cov_v: np.ndarray | None = None
    entropy_floor: float | None = None
    grid: GridSpec | None = None
    seed: int = 0
    wiretap: WiretapParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown problem kind {self.kind!r}")
        if self.support not in SUPPORTS:
            raise InvalidInput(f"unknown support {self.support!r}")
        if self.mu is not None and not self.mu >= 1.0:
            raise InvalidInput("mu must be at least 1")
        for name in ("noise_cov", "noise_cov_v"):
            m = _matrix(getattr(self, name), name)
            if m is not None:
                if m.shape[0] != self.constraints.dim:
                    raise InvalidInput(f"{name} has the wrong dimension")
                if np.linalg.eigvalsh(m).min() <= 0:
                    raise NoisePDViolation(f"{name} must be positive definite")
            object.__setattr__(self, name, m)
        if self.kind in ("eei", "eei_two_noise") and self.mu is None:
            raise InvalidInput("eei problems need mu")
        if self.grid is not None and self.grid.dim != self.constraints.dim:
            raise InvalidInput("grid dimension differs from the constraints")

    @property
    def dim(self) -> int:
        return self.constraints.dim

    def with_grid(self, grid: GridSpec) -> "ProblemSpec":
        return replace(self, grid=grid)

    def default_points(self) -> int:
        return DEFAULT_POINTS[self.dim]


@dataclass(frozen=True)
class MultiplierSet:
    """Lagrange multipliers; unused entries stay ``None``.

    Sign convention (max entropy, min Fisher): the stationarity field is
    ``K'(f) + alpha + zetaᵀx + xᵀ Lambda x``.
    """

    alpha: float | None = None
    zeta: np.ndarray | None = None
    Lambda: np.ndarray | None = None
    alpha0: float | None = None
    alpha1: float | None = None
    eta: np.ndarray | None = None
    Gamma: np.ndarray | None = None
    Theta: np.ndarray | None = None
    Phi: np.ndarray | None = None
    theta: float | None = None
    bound_multiplier: np.ndarray | None = None
    lambda_of_y: np.ndarray | None = None
    cW: float | None = None
    cY: float | None = None


@dataclass(frozen=True)
class SolveReport:
    extremal: GridDensity
    multipliers: MultiplierSet
    objective_value: float
    el_residual_norm: float
    constraint_violation: float
    iterations: int
    converged: bool
    companion: GridDensity | None = None
    notes: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WiretapReport:
    extremal_input: GridDensity
    mse_legitimate: float
    mse_eavesdropper: float
    conditional_mean_slope: float
    linearity_residual: float
    iterations: int = 0
    converged: bool = True

    @property
    def mse_gap(self) -> float:
        return self.mse_eavesdropper - self.mse_legitimate


# --- JSON mapping -----------------------------------------------------------------------


def _plain(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def grid_to_dict(grid: GridSpec) -> dict:
    return {"lower": list(grid.lower), "upper": list(grid.upper), "points": list(grid.points)}


def grid_from_dict(data: dict) -> GridSpec:
    return GridSpec(tuple(data["lower"]), tuple(data["upper"]), tuple(data["points"]))


def problem_to_dict(spec: ProblemSpec) -> dict:
    c = spec.constraints
    out = {
        "kind": spec.kind,
        "constraints": {"mean": c.mean, "correlation": c.correlation, "bound": c.bound},
        "support": spec.support,
        "regularity_required": spec.regularity_required,
        "mu": spec.mu,
        "noise_cov": spec.noise_cov,
        "noise_cov_v": spec.noise_cov_v,
        "entropy_floor": spec.entropy_floor,
        "grid": grid_to_dict(spec.grid) if spec.grid else None,
        "seed": spec.seed,
        "wiretap": None,
    }
    if spec.wiretap is not None:
        out["wiretap"] = {f.name: getattr(spec.wiretap, f.name) for f in fields(spec.wiretap)}
    return _plain(out)


def problem_from_dict(data: dict) -> ProblemSpec:
    """Build a ProblemSpec from its JSON mapping; scalars are accepted for 1-D matrices."""
    try:
        c = data.get("constraints") or {}
        wiretap = data.get("wiretap")
        if data["kind"] == "wiretap" and wiretap is not None and not c:
            c = {"correlation": [[1.0]]}
        return ProblemSpec(
            kind=data["kind"],
            constraints=MomentConstraints(c.get("mean"), c.get("correlation"), c.get("bound")),
            support=data.get("support", "full"),
            regularity_required=bool(data.get("regularity_required", False)),
            mu=data.get("mu"),
            noise_cov=data.get("noise_cov"),
            noise_cov_v=data.get("noise_cov_v"),
            entropy_floor=data.get("entropy_floor"),
            grid=grid_from_dict(data["grid"]) if data.get("grid") else None,
            seed=int(data.get("seed", 0)),
            wiretap=WiretapParams(**wiretap) if wiretap else None,
        )
    except (KeyError, TypeError) as exc:
        raise InvalidInput(f"malformed problem description: {exc}") from exc


def multipliers_to_dict(m: MultiplierSet) -> dict:
    out = {}
    for f in fields(m):
        value = getattr(m, f.name)
        if f.name == "lambda_of_y" and value is not None:
            arr = np.asarray(value)
            value = {"min": float(arr.min()), "max": float(arr.max()), "shape": list(arr.shape)}
        out[f.name] = value
    return _plain(out)


def report_to_dict(report: SolveReport) -> dict:
    return _plain(
        {
            "objective_value": report.objective_value,
            "el_residual_norm": report.el_residual_norm,
            "constraint_violation": report.constraint_violation,
            "iterations": report.iterations,
            "converged": report.converged,
            "multipliers": multipliers_to_dict(report.multipliers),
            "grid": grid_to_dict(report.extremal.grid),
            "notes": list(report.notes),
            "details": report.details,
        }
    )


def wiretap_to_dict(report: WiretapReport) -> dict:
    return _plain(
        {
            "mse_legitimate": report.mse_legitimate,
            "mse_eavesdropper": report.mse_eavesdropper,
            "mse_gap": report.mse_gap,
            "conditional_mean_slope": report.conditional_mean_slope,
            "linearity_residual": report.linearity_residual,
            "iterations": report.iterations,
            "converged": report.converged,
            "grid": grid_to_dict(report.extremal_input.grid),
        }
    )
