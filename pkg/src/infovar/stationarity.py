"""Executable optimality conditions: Euler-Lagrange residuals, per-cell second
variations, KKT gates, multiplier fitting and the noise-split equality check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import closed_forms as cf
from .density_core import GridDensity, GridSpec, convolution_grid, convolve, correlate_valid, moments
from .errors import DimensionMismatch, GridMismatch, InvalidInput, SingularInnerMatrix
from .functionals import FLOOR, entropy, fisher_first_variation, log_density
from .problems import MultiplierSet, ProblemSpec, SolveReport

FIT_ACCEPT = 1e-5
PSD_RELATIVE_TOL = 1e-9
SAMPLED_PAIRS = 200_000
FULL_PAIR_LIMIT = 8_000_000


@dataclass(frozen=True)
class ELResidualField:
    """Residual on the signal grid, plus the output-side residual for coupled problems."""

    residual: np.ndarray
    l2_norm: float
    linf_norm: float
    companion_residual: np.ndarray | None = None


@dataclass(frozen=True)
class PSDReport:
    min_eigenvalue_over_grid: float
    worst_cell: tuple[int, ...]
    matrix_dim: int
    min_relative_eigenvalue: float = 0.0
    max_relative_determinant: float = 0.0

    @property
    def passes(self) -> bool:
        return self.min_relative_eigenvalue >= -PSD_RELATIVE_TOL


@dataclass(frozen=True)
class KKTReport:
    theta_nonneg: bool
    alpha1_gate: bool
    slackness_defect: float
    active_set: tuple[str, ...]

    @property
    def passes(self) -> bool:
        return self.theta_nonneg and self.alpha1_gate and self.slackness_defect <= 1e-6


# --- helpers --------------------------------------------------------------------------


def _noise(problem: ProblemSpec, f: GridDensity) -> GridDensity:
    from .variational_solver import noise_density

    if problem.noise_cov is None:
        raise InvalidInput(f"{problem.kind} needs noise_cov")
    return noise_density(problem.noise_cov, f.grid.steps)


def _companion(problem: ProblemSpec, f: GridDensity, fY: GridDensity | None) -> tuple[GridDensity, GridDensity]:
    fW = _noise(problem, f)
    return fW, convolve(f, fW) if fY is None else fY


def _masked_norms(field: np.ndarray, f: GridDensity) -> tuple[np.ndarray, float, float]:
    mask = f.support_mask()
    field = np.where(mask, field, 0.0)
    return field, float(np.sqrt(np.sum(field**2) * f.cell_volume)), float(np.abs(field).max())


def _lower_edge(problem: ProblemSpec) -> str:
    if problem.support == "nonnegative":
        return "odd" if problem.regularity_required else "even"
    return "zero"


def _check_dims(problem: ProblemSpec, f: GridDensity):
    if f.dim != problem.dim:
        raise DimensionMismatch("density and problem dimensions differ")


def _quadratic(grid: GridSpec, linear, quad) -> np.ndarray:
    out = np.zeros(grid.shape)
    if linear is not None:
        out = out + grid.linear_form(np.atleast_1d(linear))
    if quad is not None:
        out = out + grid.quadratic_form(np.atleast_2d(quad))
    return out


def _base_field(problem: ProblemSpec, f: GridDensity, direction=None) -> np.ndarray:
    """The multiplier-free part of the single-density residual."""
    if problem.kind == "max_entropy":
        return log_density(f) + 1.0
    if problem.kind == "min_fisher":
        return fisher_first_variation(f, direction, _lower_edge(problem))
    raise InvalidInput(f"no single-density residual for {problem.kind}")


# --- Euler-Lagrange residuals ---------------------------------------------------------


def euler_lagrange_residual(problem: ProblemSpec, f: GridDensity, m: MultiplierSet,
                            fY: GridDensity | None = None, direction=None) -> ELResidualField:
    """First-variation field of the Lagrangian at f, zero at a stationary point.

    Fields are reported on the effective support of each density; the norm is
    the cell-volume weighted L² norm (combined over the two fields for coupled
    problems).
    """
    _check_dims(problem, f)
    if direction is not None and np.atleast_1d(direction).shape != (f.dim,):
        raise DimensionMismatch("direction must match the density dimension")
    kind = problem.kind
    if kind in ("max_entropy", "min_fisher"):
        if m.alpha is None or m.Lambda is None:
            raise InvalidInput("multipliers need alpha and Lambda")
        if np.atleast_2d(m.Lambda).shape != (f.dim, f.dim):
            raise DimensionMismatch("Lambda has the wrong shape")
        field = _base_field(problem, f, direction) + m.alpha + _quadratic(f.grid, m.zeta, m.Lambda)
        field, l2, linf = _masked_norms(field, f)
        return ELResidualField(field, l2, linf)
    if kind == "worst_noise":
        return _worst_noise_residual(problem, f, m, fY)
    if kind in ("eei", "eei_two_noise"):
        return _eei_residual(problem, f, m, fY)
    raise InvalidInput(f"no residual defined for {kind}")


def _pair_result(x_field, fX, y_field, fY) -> ELResidualField:
    x_field, lx, ix = _masked_norms(x_field, fX)
    y_field, ly, iy = _masked_norms(y_field, fY)
    return ELResidualField(x_field, float(np.hypot(lx, ly)), max(ix, iy), y_field)


def _lambda_field(m: MultiplierSet, grid: GridSpec, fallback) -> np.ndarray:
    if m.lambda_of_y is not None:
        lam = np.asarray(m.lambda_of_y, dtype=float)
        if lam.shape != grid.shape:
            raise DimensionMismatch("lambda_of_y is not on the output grid")
        return lam
    return np.broadcast_to(np.asarray(fallback(grid), dtype=float), grid.shape)


def _worst_noise_residual(problem, fX, m, fY) -> ELResidualField:
    fW, fY = _companion(problem, fX, fY)
    lam = _lambda_field(m, fY.grid, lambda g: 1.0 - m.alpha1 - _quadratic(g, m.eta, m.Theta))
    x_field = (
        correlate_valid(fW, -log_density(fY) - lam)
        + log_density(fX)
        + m.alpha0
        + 1.0
        + _quadratic(fX.grid, m.zeta, m.Gamma)
    )
    ratio = convolve(fX, fW).values / np.maximum(fY.values, FLOOR)
    y_field = -ratio + m.alpha1 + _quadratic(fY.grid, m.eta, m.Theta) + lam
    return _pair_result(x_field, fX, y_field, fY)


def _eei_residual(problem, fX, m, fY) -> ELResidualField:
    mu = float(problem.mu)
    fW, fY = _companion(problem, fX, fY)
    kappa = mu * (mu - 1.0)
    lam = _lambda_field(m, fY.grid, lambda g: mu)
    c = 1.0 - m.alpha1
    bound_mult = np.zeros((fX.dim, fX.dim)) if m.bound_multiplier is None else m.bound_multiplier
    # Γ enters through yᵀΓy − xᵀΓx − wᵀΓw = 2xᵀΓw, which a zero-mean W averages out.
    y_terms = -mu * log_density(fY) + _quadratic(fY.grid, None, m.Phi) - lam
    x_field = (
        correlate_valid(fW, y_terms)
        + c * log_density(fX)
        - kappa * entropy(fW)
        + m.alpha0
        + c
        + _quadratic(fX.grid, None, bound_mult)
    )
    ratio = convolve(fX, fW).values / np.maximum(fY.values, FLOOR)
    y_field = -mu * ratio + lam
    return _pair_result(x_field, fX, y_field, fY)


# --- second variation -----------------------------------------------------------------


def _pair_cells(shape_x, shape_y, rng) -> tuple[np.ndarray, np.ndarray]:
    """Flat (x, y) index pairs: all of them in 1-D, a seeded sample otherwise."""
    nx, ny = int(np.prod(shape_x)), int(np.prod(shape_y))
    if nx * ny <= FULL_PAIR_LIMIT:
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return ix.ravel(), iy.ravel()
    return rng.integers(0, nx, SAMPLED_PAIRS), rng.integers(0, ny, SAMPLED_PAIRS)


def _min_eig_2x2(a, b, c):
    """Smallest eigenvalue of [[a, b], [b, c]] in a cancellation-free form."""
    tr = a + c
    det = a * c - b * b
    big = 0.5 * (tr + np.sqrt((a - c) ** 2 + 4.0 * b * b))
    small = det / np.where(big > 0, big, 1.0)
    return small, det, tr


def second_variation_check(problem: ProblemSpec, f: GridDensity, fY: GridDensity | None = None,
                           m: MultiplierSet | None = None, seed: int = 0) -> PSDReport:
    """Minimum eigenvalue of the per-cell Hessian of the Lagrangian integrand.

    Single-density problems give a 1×1 (entropy) or 2×2 in (f, ∂f) (Fisher)
    matrix per cell; the coupled problems give a 2×2 matrix in (f_X, f_Y)
    per pair of cells (x, y), enumerated fully in 1-D and sampled otherwise.
    """
    _check_dims(problem, f)
    mask = f.support_mask()
    kind = problem.kind
    if kind == "max_entropy":
        inv = np.where(mask, 1.0 / np.maximum(f.values, FLOOR), np.inf)
        idx = np.unravel_index(int(np.argmin(inv)), f.grid.shape)
        return PSDReport(float(inv[idx]), tuple(int(i) for i in idx), 1, 1.0, 0.0)
    if kind == "min_fisher":
        # |∂f|²/f has Hessian (2/f)·[[s², −s], [−s, 1]] in (f, ∂f); s = ∂f/f.
        best = (np.inf, (0,) * f.dim, 1.0, 0.0)
        v = np.maximum(f.values, FLOOR)
        for axis, h in enumerate(f.grid.steps):
            s = np.gradient(log_density(f), h, axis=axis, edge_order=2)
            a, b, c = 2.0 * s**2 / v, -2.0 * s / v, 2.0 / v
            small, det, tr = _min_eig_2x2(a, b, c)
            rel = np.where(mask, small / tr, np.inf)
            k = np.unravel_index(int(np.argmin(rel)), f.grid.shape)
            if rel[k] < best[2] or best[0] == np.inf:
                dets = np.where(mask, np.abs(det) / tr**2, 0.0).max()
                best = (float(small[k]), tuple(int(i) for i in k), float(rel[k]), float(dets))
        return PSDReport(best[0], best[1], 2, best[2], best[3])
    if kind in ("worst_noise", "eei", "eei_two_noise"):
        fW, fY = _companion(problem, f, fY)
        if kind == "worst_noise":
            wx, wxy, wy = 1.0, 1.0, 1.0
        else:
            mu = float(problem.mu)
            if m is None:
                m = fit_multipliers(problem, f, fY)
            wx, wxy, wy = 1.0 - m.alpha1, mu, mu
        rng = np.random.default_rng(seed)
        ix, iy = _pair_cells(f.grid.shape, fY.grid.shape, rng)
        fx = f.values.ravel()[ix]
        fy = np.maximum(fY.values.ravel()[iy], FLOOR)
        keep = mask.ravel()[ix] & fY.support_mask().ravel()[iy]
        if fY.grid != convolution_grid(f.grid, fW.grid):
            raise GridMismatch("output density must live on the convolution grid")
        # On the convolution grid the noise index of a pair is (y index) − (x index).
        offs = np.array(np.unravel_index(iy, fY.grid.shape)) - np.array(np.unravel_index(ix, f.grid.shape))
        inside = np.all((offs >= 0) & (offs < np.array(fW.grid.shape)[:, None]), axis=0)
        keep &= inside
        fw = np.zeros(ix.shape)
        fw[inside] = fW.values[tuple(o[inside] for o in offs)]
        keep &= fw > 0
        fx, fy, fw = fx[keep], fy[keep], fw[keep]
        a = wx * fw / fx
        b = -wxy * fw / fy
        c = wy * fx * fw / fy**2
        small, det, tr = _min_eig_2x2(a, b, c)
        rel = small / tr
        k = int(np.argmin(rel))
        cell = (int(ix[keep][k]), int(iy[keep][k]))
        return PSDReport(float(small.min()), cell, 2, float(rel[k]), float((np.abs(det) / tr**2).max()))
    raise InvalidInput(f"no second variation defined for {kind}")


# --- KKT ------------------------------------------------------------------------------


def kkt_check(problem: ProblemSpec, report: SolveReport, tol: float = 1e-6) -> KKTReport:
    """θ ≥ 0, α₁ ≤ 1 − μ, and complementary slackness on the covariance bound.

    The direction set is the coordinate basis plus the eigenvectors of the
    bound multiplier; a direction is active when ξᵀ(Σ_X − Σ)ξ vanishes.
    """
    if problem.kind not in ("eei", "eei_two_noise"):
        raise InvalidInput("kkt_check applies to EEI problems")
    m = report.multipliers
    mu = float(problem.mu)
    bound = problem.constraints.bound
    if problem.kind == "eei_two_noise":
        bound = bound + report.details.get("noise_split", 0.0)
    cov = report.details.get("covariance")
    cov = moments(report.extremal).covariance if cov is None else np.atleast_2d(cov)
    if problem.kind == "eei_two_noise" and "reduced_covariance" in report.details:
        cov = report.details["reduced_covariance"]
    d = cov.shape[0]
    M = np.zeros((d, d)) if m.bound_multiplier is None else np.atleast_2d(m.bound_multiplier)
    theta = 0.0 if m.theta is None else float(m.theta)
    m_evals, m_vecs = np.linalg.eigh(M)
    theta_ok = theta >= 0.0 and m_evals.min() >= -1e-12 * max(1.0, abs(M).max())
    alpha1 = m.alpha1
    gate = alpha1 is not None and alpha1 <= 1.0 - mu
    dirs = [np.eye(d)[i] for i in range(d)] + [m_vecs[:, i] for i in range(d)]
    names = [f"e{i}" for i in range(d)] + [f"v{i}" for i in range(d)]
    gap = cov - bound
    defect = abs(float(np.trace(M @ gap)))
    active = []
    scale = max(1.0, abs(bound).max())
    for name, xi in zip(names, dirs):
        g = float(xi @ gap @ xi)
        defect = max(defect, abs(float(xi @ M @ xi) * g))
        if abs(g) <= tol * scale:
            active.append(name)
    floor = report.details.get("entropy_floor")
    if floor is not None and abs(entropy(report.extremal) - floor) <= tol:
        active.append("entropy_floor")
    return KKTReport(bool(theta_ok), bool(gate), float(defect), tuple(active))


# --- multiplier fitting ---------------------------------------------------------------


def _closed_form(problem: ProblemSpec, f: GridDensity, fY: GridDensity | None, direction):
    mom = moments(f)
    if problem.kind == "max_entropy":
        if problem.support == "nonnegative":
            return cf.half_normal_max_entropy_multipliers(float(mom.correlation[0, 0]))
        return cf.max_entropy_multipliers(cf.GaussianParams(mom.mean, mom.covariance))
    if problem.kind == "min_fisher":
        if problem.support == "nonnegative":
            shape = 3.0 if problem.regularity_required else 1.0
            fam = "chi" if problem.regularity_required else "half_normal"
            return cf.nonneg_min_fisher_multipliers(cf.NonnegFamilyParams(fam, float(mom.correlation[0, 0]), shape))
        return cf.min_fisher_multipliers(cf.GaussianParams(mom.mean, mom.covariance), direction)
    fW, fY = _companion(problem, f, fY)
    if problem.kind == "worst_noise":
        return cf.worst_noise_multipliers(cf.GaussianParams(mom.mean, mom.covariance), problem.noise_cov, fY.grid)
    return cf.eei_multipliers(float(problem.mu), mom.covariance, problem.noise_cov, fY.grid)


def _least_squares_quadratic(target: np.ndarray, grid: GridSpec, mask) -> tuple[float, np.ndarray, np.ndarray]:
    xs = grid.coordinates()
    d = grid.dim
    cols = [np.ones(grid.shape)] + [np.broadcast_to(x, grid.shape) for x in xs]
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    cols += [xs[i] * xs[j] * np.ones(grid.shape) for i, j in pairs]
    design = np.stack([c[mask] for c in cols], axis=1)
    coef, *_ = np.linalg.lstsq(design, target[mask], rcond=None)
    A = np.zeros((d, d))
    for (i, j), v in zip(pairs, coef[1 + d:]):
        A[i, j] += v if i == j else 0.5 * v
        if i != j:
            A[j, i] += 0.5 * v
    return float(coef[0]), coef[1:1 + d], A


def fit_multipliers(problem: ProblemSpec, f: GridDensity, fY: GridDensity | None = None,
                    direction=None) -> MultiplierSet:
    """Closed-form multipliers from the moments of f; a least-squares fit if those leave a residual.

    The least-squares fit keeps the parts of the stationarity system that the
    closed form pins (output-side multipliers, α₁ for EEI) and fits the
    quadratic-in-x multipliers to minimize the signal-side residual.
    """
    _check_dims(problem, f)
    plug = _closed_form(problem, f, fY, direction)
    if euler_lagrange_residual(problem, f, plug, fY, direction).l2_norm <= FIT_ACCEPT:
        return plug
    mask = f.support_mask()
    if problem.kind in ("max_entropy", "min_fisher"):
        c0, b, A = _least_squares_quadratic(-_base_field(problem, f, direction), f.grid, mask)
        return MultiplierSet(alpha=c0, zeta=b, Lambda=A)
    if problem.kind == "worst_noise":
        fW, fY = _companion(problem, f, fY)
        base = euler_lagrange_residual(problem, f, MultiplierSet(
            alpha0=0.0, alpha1=plug.alpha1, zeta=np.zeros(f.dim), Gamma=np.zeros((f.dim, f.dim)),
            eta=plug.eta, Theta=plug.Theta, lambda_of_y=plug.lambda_of_y), fY)
        c0, b, A = _least_squares_quadratic(-base.residual, f.grid, mask)
        return MultiplierSet(alpha0=c0, alpha1=plug.alpha1, zeta=b, Gamma=A, eta=plug.eta,
                             Theta=plug.Theta, lambda_of_y=plug.lambda_of_y)
    zeroed = MultiplierSet(alpha0=0.0, alpha1=plug.alpha1, Gamma=plug.Gamma, Phi=plug.Phi, theta=plug.theta,
                           bound_multiplier=np.zeros((f.dim, f.dim)), lambda_of_y=plug.lambda_of_y,
                           cW=plug.cW, cY=plug.cY)
    base = euler_lagrange_residual(problem, f, zeroed, fY)
    c0, _, A = _least_squares_quadratic(-base.residual, f.grid, mask)
    theta = max(float(np.linalg.eigvalsh(A).max()), 0.0)
    return MultiplierSet(alpha0=c0, alpha1=plug.alpha1, Gamma=plug.Gamma, Phi=plug.Phi, theta=theta,
                         bound_multiplier=A, lambda_of_y=plug.lambda_of_y, cW=plug.cW, cY=plug.cY)


# --- data-processing equality ---------------------------------------------------------


def dpi_equality_check(Sigma_Xstar, Sigma_W, Sigma_Wtilde) -> float:
    """|½ log det(I − (Σ_X+Σ_W)⁻¹Σ_X) − ½ log det(I − (Σ_X+Σ_W̃)⁻¹Σ_X)|.

    Zero exactly when adding the extra noise W − W̃ leaves the information
    about X unchanged, i.e. the Markov chain is tight.
    """
    sx = np.atleast_2d(np.asarray(Sigma_Xstar, dtype=float))
    n = sx.shape[0]

    def half_logdet(noise):
        noise = np.atleast_2d(np.asarray(noise, dtype=float))
        if noise.shape != sx.shape:
            raise DimensionMismatch("covariances must share a shape")
        try:
            inner = np.eye(n) - np.linalg.solve(sx + noise, sx)
        except np.linalg.LinAlgError as exc:
            raise SingularInnerMatrix("Σ_X + Σ is singular") from exc
        sign, logdet = np.linalg.slogdet(inner)
        if sign <= 0 or not np.isfinite(logdet):
            raise SingularInnerMatrix("I − (Σ_X + Σ)⁻¹Σ_X is singular")
        return 0.5 * logdet

    return abs(half_logdet(Sigma_W) - half_logdet(Sigma_Wtilde))
