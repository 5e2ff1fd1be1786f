"""Randomized certification of the extremal inequalities.

Candidates are drawn as random mixtures (or smooth log-perturbations) and then
exponentially tilted onto the constraint set, so every candidate satisfies the
moment constraints to tilt precision. Each margin is oriented so that a
nonnegative value means the extremal wins.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import closed_forms as cf
from .density_core import GridDensity, GridSpec, convolve, make_density, moments
from .errors import InfeasibleCandidate, InfeasibleConstraints, InvalidInput
from .functionals import entropy, fisher_matrix, fisher_quadratic_form
from .problems import MomentConstraints, ProblemSpec
from .tilting import max_abs_moment_error, mixture_log_density, tilt_to_moments

GENERATORS = ("mixture", "tilted", "perturbed_extremal")
MAXIMIZE = ("max_entropy", "eei", "eei_two_noise")
VIOLATION_TOL = 1e-4
FEASIBILITY_TOL = 1e-6
RANDOM_DIRECTIONS = 10


@dataclass(frozen=True)
class Margin:
    candidate_value: float
    extremal_value: float
    margin: float
    seed: int = 0
    feasibility_defect: float = 0.0
    direction: np.ndarray | None = None


@dataclass(frozen=True)
class SweepConfig:
    problem: ProblemSpec
    n_samples: int
    seed: int = 0
    generator: str = "mixture"
    perturbation: float = 0.05
    tolerance: float = VIOLATION_TOL

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise InvalidInput("n_samples must be at least 1")
        if self.generator not in GENERATORS:
            raise InvalidInput(f"unknown generator {self.generator!r}")


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[Margin, ...]
    tolerance: float
    kind: str = ""
    notes: tuple[str, ...] = field(default=())

    @property
    def margins(self) -> np.ndarray:
        return np.array([r.margin for r in self.rows])

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())

    @property
    def mean_margin(self) -> float:
        return float(self.margins.mean())

    @property
    def violated(self) -> bool:
        return self.min_margin < -self.tolerance

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "candidate_value", "extremal_value", "margin", "feasibility_defect"])
        for r in self.rows:
            w.writerow([r.seed, repr(r.candidate_value), repr(r.extremal_value), repr(r.margin),
                        repr(r.feasibility_defect)])
        w.writerow(["summary", "", "", repr(self.min_margin), repr(self.mean_margin)])
        return buf.getvalue()


# --- grids and candidates -------------------------------------------------------------


def problem_grid(problem: ProblemSpec) -> GridSpec:
    """The lattice the solver would use for this problem."""
    if problem.grid is not None:
        return problem.grid
    c = problem.constraints
    points = problem.default_points()
    if problem.support == "nonnegative":
        return GridSpec.half_line(float(c.correlation[0, 0]), points)
    if c.correlation is not None:
        return GridSpec.centered(c.mean_or_zero, c.covariance, points)
    return GridSpec.centered(np.zeros(c.dim), c.bound, points)


def _constraint_grid(constraints: MomentConstraints, support: str) -> GridSpec:
    probe = ProblemSpec("max_entropy", constraints, support=support)
    return problem_grid(probe)


def _candidate_targets(constraints: MomentConstraints, rng: np.random.Generator):
    """Mean and second-moment targets for a candidate; a bound alone draws a random covariance under it."""
    if constraints.correlation is not None:
        return constraints.mean, constraints.correlation
    d = constraints.dim
    evals, evecs = np.linalg.eigh(constraints.bound)
    root = evecs @ np.diag(np.sqrt(evals)) @ evecs.T
    rot = np.linalg.qr(rng.normal(size=(d, d)))[0]
    inner = rot @ np.diag(rng.uniform(0.2, 1.0, size=d)) @ rot.T
    mean = np.zeros(d) if constraints.mean is None else constraints.mean
    return mean, root @ inner @ root + np.outer(mean, mean)


def random_feasible_density(constraints: MomentConstraints, support: str = "full", seed: int = 0,
                            grid: GridSpec | None = None, regular: bool = False,
                            generator: str = "mixture") -> GridDensity:
    """A seeded random density meeting the constraints.

    ``generator="mixture"`` draws a 2-4 component Gaussian mixture;
    ``"tilted"`` a Gaussian with a random smooth log-perturbation. Either is
    then tilted onto the moments. On the half-line the mean is left free.
    """
    if constraints.correlation is not None:
        evals = np.linalg.eigvalsh(constraints.covariance)
        if evals.min() < -1e-12 or evals.max() <= 0:
            raise InfeasibleConstraints("second-moment constraint is not attainable")
    grid = _constraint_grid(constraints, support) if grid is None else grid
    rng = np.random.default_rng(seed)
    mean, corr = _candidate_targets(constraints, rng)
    center = np.zeros(grid.dim) if mean is None else mean
    cov = corr - np.outer(center, center)
    if generator == "tilted":
        base = _smooth_log_bumps(grid, rng, cov, support, regular)
    else:
        base = mixture_log_density(grid, rng, center, cov, support, regular)
    use_mean = None if support == "nonnegative" else mean
    f = tilt_to_moments(grid, base, mean=use_mean, correlation=corr).density
    if max_abs_moment_error(f, use_mean, corr) > 1e-8:
        raise InfeasibleConstraints("tilted candidate misses the moment targets")
    return f


def _smooth_log_bumps(grid: GridSpec, rng, cov, support, regular) -> np.ndarray:
    xs = grid.coordinates()
    sd = np.sqrt(np.maximum(np.diag(cov), 1e-12))
    out = np.zeros(grid.shape)
    for _ in range(int(rng.integers(2, 5))):
        k = rng.normal(size=grid.dim)
        k *= rng.uniform(0.5, 2.5) / np.linalg.norm(k)
        phase = sum(ki * x / s for ki, x, s in zip(k, xs, sd))
        out = out + rng.normal(0.0, 0.8) * np.cos(phase + rng.uniform(0, 2 * np.pi))
    if support == "nonnegative" and regular:
        out = out + rng.uniform(2.0, 3.5) * np.log(xs[0])
    return out


def _bounded_null_perturbation(f: GridDensity, constraint_fields: list[np.ndarray], rng) -> np.ndarray:
    """A bounded smooth h with ∫ f·h·φ = 0 for every constraint field φ (including 1)."""
    grid = f.grid
    xs = grid.coordinates()
    mom = moments(f)
    sd = np.sqrt(np.maximum(np.diag(mom.covariance), 1e-12))
    count = len(constraint_fields) + 3
    basis = []
    for _ in range(count):
        k = rng.normal(size=grid.dim)
        k *= rng.uniform(0.6, 2.0) / np.linalg.norm(k)
        phase = sum(ki * (x - m) / s for ki, x, m, s in zip(k, xs, mom.mean, sd))
        basis.append(np.cos(phase + rng.uniform(0, 2 * np.pi)) * np.ones(grid.shape))
    A = np.array([[f.integrate(b * phi) for b in basis] for phi in constraint_fields])
    _, _, vt = np.linalg.svd(A)
    null = vt[len(constraint_fields):]
    coef = rng.normal(size=null.shape[0]) @ null
    h = sum(c * b for c, b in zip(coef, basis))
    return h / np.abs(h).max()


def _constraint_fields(problem: ProblemSpec, grid: GridSpec) -> list[np.ndarray]:
    xs = grid.coordinates()
    d = grid.dim
    fields = [np.ones(grid.shape)]
    if problem.support != "nonnegative":
        fields += [np.broadcast_to(x, grid.shape) for x in xs]
    fields += [xs[i] * xs[j] * np.ones(grid.shape) for i in range(d) for j in range(i, d)]
    return fields


def perturbed_extremal(problem: ProblemSpec, eps: float, seed: int = 0) -> GridDensity:
    """f*·(1 + ε h) with h bounded and orthogonal to every moment constraint, so moments are exact."""
    f = extremal_density(problem)
    if eps == 0.0:
        return f
    h = _bounded_null_perturbation(f, _constraint_fields(problem, f.grid), np.random.default_rng(seed))
    if abs(eps) >= 1.0:
        raise InvalidInput("perturbation scale must be below 1 to keep the density positive")
    return GridDensity(f.grid, f.values * (1.0 + eps * h))


# --- extremals and objectives ---------------------------------------------------------


def _extremal_covariance(problem: ProblemSpec) -> np.ndarray:
    c = problem.constraints
    if problem.kind == "eei":
        return cf.eei_gaussian_optimum(float(problem.mu), c.bound, problem.noise_cov).covariance
    if problem.kind == "eei_two_noise":
        return cf.two_noise_gaussian_optimum(float(problem.mu), c.bound, problem.noise_cov,
                                             problem.noise_cov_v).covariance
    return c.covariance


def extremal_density(problem: ProblemSpec, grid: GridSpec | None = None) -> GridDensity:
    """The closed-form extremal of the problem, sampled on its lattice."""
    grid = problem_grid(problem) if grid is None else grid
    return _cached_extremal(problem, grid)


@lru_cache(maxsize=32)
def _cached_extremal_by_key(kind, support, regular, mean, corr, cov, grid):
    if support == "nonnegative":
        m2 = corr[0][0]
        fam = "chi" if kind == "min_fisher" and regular else "half_normal"
        return cf.chi_density(cf.NonnegFamilyParams(fam, m2, 3.0 if fam == "chi" else 1.0), grid)
    return cf.gaussian_density(cf.GaussianParams(np.array(mean), np.array(cov)), grid)


def _cached_extremal(problem: ProblemSpec, grid: GridSpec) -> GridDensity:
    c = problem.constraints
    cov = _extremal_covariance(problem)
    mean = c.mean_or_zero if problem.kind not in ("eei", "eei_two_noise") else np.zeros(c.dim)
    corr = None if c.correlation is None else tuple(map(tuple, c.correlation))
    return _cached_extremal_by_key(problem.kind, problem.support, problem.regularity_required,
                                   tuple(mean), corr, tuple(map(tuple, cov)), grid)


def _noise_for(cov, grid: GridSpec) -> GridDensity:
    from .variational_solver import noise_density

    return noise_density(cov, grid.steps)


def objective(problem: ProblemSpec, f: GridDensity) -> float:
    """The functional each problem optimizes, evaluated by quadrature."""
    kind = problem.kind
    if kind == "max_entropy":
        return entropy(f)
    if kind == "min_fisher":
        return float(np.trace(fisher_matrix(f)))
    if kind == "worst_noise":
        return entropy(convolve(f, _noise_for(problem.noise_cov, f.grid))) - entropy(f)
    if kind == "eei":
        return entropy(f) - float(problem.mu) * entropy(convolve(f, _noise_for(problem.noise_cov, f.grid)))
    if kind == "eei_two_noise":
        fW = _noise_for(problem.noise_cov, f.grid)
        fV = _noise_for(problem.noise_cov_v, f.grid)
        return entropy(convolve(f, fW)) - float(problem.mu) * entropy(convolve(f, fV))
    raise InvalidInput(f"no objective for {kind}")


def feasibility_defect(problem: ProblemSpec, f: GridDensity) -> float:
    c = problem.constraints
    m = moments(f)
    defect = abs(f.mass() - 1.0)
    if problem.support != "nonnegative" and c.mean is not None:
        defect = max(defect, float(np.abs(m.mean - c.mean).max()))
    if c.correlation is not None:
        defect = max(defect, float(np.abs(m.correlation - c.correlation).max()))
    if c.bound is not None:
        defect = max(defect, float(np.linalg.eigvalsh(m.covariance - c.bound).max()), 0.0)
    return defect


def _directions(dim: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    dirs = [np.eye(dim)[i] for i in range(dim)]
    if dim > 1:
        for _ in range(RANDOM_DIRECTIONS):
            v = rng.normal(size=dim)
            dirs.append(v / np.linalg.norm(v))
    return dirs


def check_inequality(problem: ProblemSpec, candidate: GridDensity, seed: int = 0,
                     extremal: GridDensity | None = None) -> Margin:
    """Oriented gap between the candidate and the extremal (≥ 0 when the inequality holds).

    Fisher problems compare ξᵀJξ over the coordinate directions plus seeded
    random unit vectors and report the worst direction.
    """
    defect = feasibility_defect(problem, candidate)
    if defect > FEASIBILITY_TOL:
        raise InfeasibleCandidate(f"candidate violates the constraints by {defect:.3e}")
    if problem.support == "nonnegative" and candidate.grid.lower[0] < 0:
        raise InfeasibleCandidate("candidate lives on a grid with negative support")
    ext = extremal_density(problem, candidate.grid) if extremal is None else extremal
    if problem.kind == "min_fisher":
        worst = None
        for xi in _directions(candidate.dim, seed):
            cv, ev = fisher_quadratic_form(candidate, xi), fisher_quadratic_form(ext, xi)
            if worst is None or cv - ev < worst.margin:
                worst = Margin(cv, ev, cv - ev, seed, defect, xi)
        return worst
    cv = objective(problem, candidate)
    if problem.kind == "eei_two_noise" and _singular(_extremal_covariance(problem)):
        ev = cf.two_noise_objective(_extremal_covariance(problem), float(problem.mu), problem.noise_cov,
                                    problem.noise_cov_v)
    else:
        ev = objective(problem, ext)
    margin = ev - cv if problem.kind in MAXIMIZE else cv - ev
    return Margin(cv, ev, margin, seed, defect)


def _singular(cov) -> bool:
    return bool(np.linalg.eigvalsh(cov).min() <= 1e-12 * max(1.0, np.abs(cov).max()))


def margin_sweep(cfg: SweepConfig) -> SweepTable:
    """Margins for ``n_samples`` candidates drawn with seeds seed, seed+1, ..."""
    problem = cfg.problem
    grid = problem_grid(problem)
    ext = extremal_density(problem, grid)
    rows = []
    for i in range(int(cfg.n_samples)):
        s = cfg.seed + i
        if cfg.generator == "perturbed_extremal":
            cand = perturbed_extremal(replace(problem, grid=grid), cfg.perturbation, s)
        else:
            cand = random_feasible_density(problem.constraints, problem.support, s, grid,
                                           regular=problem.regularity_required, generator=cfg.generator)
        rows.append(check_inequality(problem, cand, s, ext))
    return SweepTable(tuple(rows), cfg.tolerance, problem.kind)
