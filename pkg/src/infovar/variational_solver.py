"""Numerical solvers for the constrained variational problems.

Every solver works on a grid density and returns a :class:`SolveReport`.
The concave/convex structure of each problem decides the scheme:

* max entropy: a single I-projection of the uniform density (exact);
* min Fisher: ground state of a discrete Schrödinger operator, with an outer
  Newton loop on the potential coefficients to hit the moments;
* worst noise and EEI: majorize-minimize with entropic (unit-step mirror)
  updates, each step an I-projection onto the constraint set;
* wiretap: entropic mirror ascent on a dense channel matrix.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy import sparse
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import eigsh

from . import closed_forms as cf
from .density_core import (
    GridDensity,
    GridSpec,
    convolve,
    correlate_valid,
    make_density,
    moments,
    reduce_singular,
)
from .errors import (
    InfeasibleBound,
    InfeasibleConstraints,
    InfeasibleR,
    InvalidInput,
    NonConvergence,
    ReductionFailure,
    TiltFailure,
)
from .functionals import entropy, fisher_matrix, kl_divergence, log_density, second_difference
from .problems import MomentConstraints, MultiplierSet, ProblemSpec, SolveReport, WiretapReport
from .tilting import mixture_log_density, project_covariance_bound, tilt_to_moments

MAX_ITER = 200_000
STALL_WINDOW = 50
RESIDUAL_TOL = 1e-6
ROUNDOFF_RESIDUAL = 1e-11  # early exit: the iterate has stopped moving
OBJECTIVE_TOL = 1e-12
ENTROPY_FLOOR_SLACK = 1e-9
WIRETAP_MAX_ITER = 5_000
LOG_RANGE = 600.0
WIRETAP_TOL = 1e-9

__all__ = [
    "solve",
    "solve_max_entropy",
    "solve_min_fisher",
    "solve_worst_noise",
    "solve_eei",
    "solve_eei_two_noise",
    "solve_wiretap",
    "noise_density",
]


# --- shared helpers -------------------------------------------------------------------


def _check_kind(spec: ProblemSpec, kind: str):
    if spec.kind != kind:
        raise InvalidInput(f"expected a {kind} problem, got {spec.kind}")


def _covariance(c: MomentConstraints) -> np.ndarray:
    cov = c.covariance
    evals = np.linalg.eigvalsh(cov)
    if evals.min() < -1e-10 * max(1.0, evals.max()):
        raise InfeasibleConstraints("second-moment constraint is not PSD")
    if evals.max() <= 0:
        raise InfeasibleConstraints("zero-variance constraint")
    return cov


def _grid_for(spec: ProblemSpec, center, cov) -> GridSpec:
    if spec.grid is not None:
        return spec.grid
    if spec.support == "nonnegative":
        return GridSpec.half_line(float(np.atleast_2d(cov)[0, 0]), spec.default_points())
    return GridSpec.centered(center, cov, spec.default_points())


def noise_density(cov_w, steps) -> GridDensity:
    """Centered Gaussian on a symmetric lattice sharing the given cell widths."""
    cov_w = np.atleast_2d(np.asarray(cov_w, dtype=float))
    sd = np.sqrt(np.diag(cov_w))
    points = [max(16, 2 * math.ceil(8.0 * s / h)) for s, h in zip(sd, steps)]
    lower = tuple(-0.5 * n * h for n, h in zip(points, steps))
    upper = tuple(0.5 * n * h for n, h in zip(points, steps))
    grid = GridSpec(lower, upper, tuple(points))
    return cf.gaussian_density(cf.GaussianParams.centered(cov_w), grid)


def _support_l2(field, f: GridDensity, mask=None) -> float:
    mask = f.support_mask() if mask is None else mask
    return float(np.sqrt(np.sum(np.asarray(field)[mask] ** 2) * f.cell_volume))


def _moment_violation(f: GridDensity, mean=None, correlation=None) -> float:
    m = moments(f)
    err = abs(f.mass() - 1.0)
    if mean is not None:
        err = max(err, float(np.abs(m.mean - mean).max()))
    if correlation is not None:
        err = max(err, float(np.abs(m.correlation - correlation).max()))
    return err


def _initial_density(spec: ProblemSpec, grid: GridSpec, center, cov) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    return mixture_log_density(grid, rng, center, cov, spec.support)


def _tilt_constant(logf, base, grid: GridSpec, linear, quadratic, mask) -> float:
    rest = logf - base - grid.linear_form(linear) - grid.quadratic_form(quadratic)
    return float(np.mean(rest[mask]))


def _fit_quadratic(log_values, grid: GridSpec, mask) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares c + bᵀy + yᵀAy over the masked cells."""
    xs = grid.coordinates()
    d = grid.dim
    cols = [np.ones(grid.shape)] + [np.broadcast_to(x, grid.shape) for x in xs]
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    cols += [xs[i] * xs[j] * np.ones(grid.shape) for i, j in pairs]
    design = np.stack([c[mask] for c in cols], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.asarray(log_values)[mask], rcond=None)
    A = np.zeros((d, d))
    for (i, j), v in zip(pairs, coef[1 + d:]):
        if i == j:
            A[i, i] = v
        else:
            A[i, j] = A[j, i] = 0.5 * v
    return float(coef[0]), coef[1:1 + d], A


# --- maximum entropy ------------------------------------------------------------------


def solve_max_entropy(spec: ProblemSpec) -> SolveReport:
    """Entropic mirror step of unit size from the uniform density.

    With unit step the update is the I-projection of the uniform density onto
    the moment constraints, which is already the maximizer.
    """
    _check_kind(spec, "max_entropy")
    c = spec.constraints
    if c.correlation is None:
        raise InfeasibleConstraints("max entropy needs a second-moment constraint")
    if spec.support == "nonnegative":
        return _max_entropy_half_line(spec)
    cov = _covariance(c)
    reduced = None
    if spec.grid is None and np.linalg.matrix_rank(cov, tol=1e-10 * np.abs(cov).max()) < spec.dim:
        reduced = reduce_singular(cov, np.eye(spec.dim))
        m = reduced.effective_dim
        sub = MomentConstraints(mean=np.zeros(m), correlation=reduced.reduced_signal_corr[:m, :m])
        inner = solve_max_entropy(replace(spec, constraints=sub, grid=None))
        details = dict(inner.details)
        details.update(
            effective_dim=m,
            principal_axes=reduced.projector[:, :m],
            reduced_variances=np.diag(reduced.reduced_signal_corr)[:m],
        )
        return replace(inner, details=details, notes=inner.notes + ("singular second moment reduced",))
    mean = c.mean
    grid = _grid_for(spec, c.mean_or_zero, cov)
    base = np.zeros(grid.shape)
    t = tilt_to_moments(grid, base, mean=mean, correlation=c.correlation)
    f = t.density
    logf = log_density(f)
    mask = f.support_mask()
    const = _tilt_constant(logf, base, grid, t.linear, t.quadratic, mask)
    mult = MultiplierSet(alpha=-1.0 - const, zeta=-t.linear, Lambda=-t.quadratic)
    residual = logf + 1.0 + mult.alpha + grid.linear_form(mult.zeta) + grid.quadratic_form(mult.Lambda)
    return SolveReport(
        extremal=f,
        multipliers=mult,
        objective_value=entropy(f),
        el_residual_norm=_support_l2(residual, f, mask),
        constraint_violation=_moment_violation(f, mean, c.correlation),
        iterations=max(t.iterations, 1),
        converged=True,
    )


def _max_entropy_half_line(spec: ProblemSpec) -> SolveReport:
    c = spec.constraints
    m2 = float(c.correlation[0, 0])
    if spec.dim != 1 or m2 <= 0:
        raise InfeasibleConstraints("nonnegative support needs a positive scalar second moment")
    grid = _grid_for(spec, None, [[m2]])
    if grid.lower[0] != 0.0:
        raise InvalidInput("nonnegative problems need a grid starting at 0")
    base = np.zeros(grid.shape)
    t = tilt_to_moments(grid, base, correlation=[[m2]])
    f = t.density
    logf = log_density(f)
    mask = f.support_mask()
    const = _tilt_constant(logf, base, grid, t.linear, t.quadratic, mask)
    mult = MultiplierSet(alpha=-1.0 - const, zeta=np.zeros(1), Lambda=-t.quadratic)
    residual = logf + 1.0 + mult.alpha + grid.quadratic_form(mult.Lambda)
    return SolveReport(
        extremal=f,
        multipliers=mult,
        objective_value=entropy(f),
        el_residual_norm=_support_l2(residual, f, mask),
        constraint_violation=_moment_violation(f, None, [[m2]]),
        iterations=max(t.iterations, 1),
        converged=True,
    )


# --- minimum Fisher information -------------------------------------------------------

def _kinetic(grid: GridSpec, lower_edge: str) -> sparse.csr_matrix:
    """−4·Laplacian on the lattice (row-major Kronecker sum)."""
    ops = []
    for i in range(grid.dim):
        edge = lower_edge if i == 0 else "zero"
        ops.append(second_difference(grid.points[i], grid.steps[i], edge))
    total = None
    for i, op in enumerate(ops):
        term = op
        for j in range(grid.dim):
            if j < i:
                term = sparse.kron(sparse.identity(grid.points[j]), term, format="csr")
            elif j > i:
                term = sparse.kron(term, sparse.identity(grid.points[j]), format="csr")
        total = term if total is None else total + term
    return (-4.0 * total).tocsc()


def _ground_state(kinetic, potential: np.ndarray):
    v = potential.ravel()
    H = kinetic + sparse.diags(v)
    shift = float(v.min()) - 1.0
    # Fixed start vector: ARPACK's default is random, which makes solves irreproducible.
    start = np.exp(-0.5 * (v - v.min()) / max(float(np.ptp(v)), 1e-300) * 50.0)
    vals, vecs = eigsh(H, k=1, sigma=shift, which="LM", v0=start)
    psi = np.abs(vecs[:, 0])
    return float(vals[0]), psi, H


def solve_min_fisher(spec: ProblemSpec) -> SolveReport:
    """Minimize the trace of the Fisher matrix under mean and second-moment constraints.

    With ψ = √f the objective is 4∫|∇ψ|², so the minimizer is the ground state
    of −4Δ + V(x) with V quadratic; V's coefficients are tuned by Newton's
    method until the ground-state density has the prescribed moments.
    """
    _check_kind(spec, "min_fisher")
    c = spec.constraints
    if c.correlation is None:
        raise InfeasibleConstraints("min Fisher needs a second-moment constraint")
    d = spec.dim
    if spec.support == "nonnegative":
        if d != 1:
            raise InvalidInput("nonnegative support is one-dimensional")
        if c.mean is not None:
            raise InvalidInput("the nonnegative problem constrains only the second moment")
        m2 = float(c.correlation[0, 0])
        if m2 <= 0:
            raise InfeasibleConstraints("second moment must be positive")
        grid = _grid_for(spec, None, [[m2]])
        if grid.lower[0] != 0.0:
            raise InvalidInput("nonnegative problems need a grid starting at 0")
        edge = "odd" if spec.regularity_required else "even"
        use_mean = False
        cov = np.array([[m2]])
        mean = np.zeros(1)
        start_scale = 3.0 if spec.regularity_required else 1.0
        lam0 = np.array([[(start_scale / m2) ** 2]])
        zeta0 = np.zeros(1)
    else:
        cov = _covariance(c)
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise InfeasibleConstraints("min Fisher needs a nonsingular covariance")
        mean = c.mean_or_zero
        grid = _grid_for(spec, mean, cov)
        edge = "zero"
        use_mean = c.mean is not None
        prec = np.linalg.inv(cov)
        lam0 = prec @ prec
        zeta0 = -2.0 * lam0 @ mean

    xs = grid.coordinates()
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    feats = ([np.broadcast_to(x, grid.shape) for x in xs] if use_mean else [])
    feats += [xs[i] * xs[j] * np.ones(grid.shape) for i, j in pairs]
    targets = (list(mean) if use_mean else []) + [float(c.correlation[i, j]) for i, j in pairs]
    targets = np.array(targets)
    theta = (list(zeta0) if use_mean else []) + [lam0[i, j] * (1 if i == j else 2) for i, j in pairs]
    theta = np.array(theta, dtype=float)
    kinetic = _kinetic(grid, edge)
    dv = grid.cell_volume
    phi = np.stack([f.ravel() for f in feats])

    def state(params):
        potential = np.tensordot(params, phi, axes=1).reshape(grid.shape)
        energy, psi, H = _ground_state(kinetic, potential)
        dens = psi**2 / (np.sum(psi**2) * dv)
        return energy, psi, H, dens, phi @ dens.ravel() * dv

    energy, psi, H, dens, moms = state(theta)
    scale = np.maximum(np.abs(targets), 1e-3 * np.abs(targets).max())
    iterations = 0
    for iterations in range(1, 60):
        err = moms - targets
        if np.abs(err / scale).max() <= 1e-11:
            break
        jac = np.empty((len(theta), len(theta)))
        for k in range(len(theta)):
            step = 1e-6 * max(abs(theta[k]), 1e-3 * np.abs(theta).max())
            bumped = theta.copy()
            bumped[k] += step
            jac[:, k] = (state(bumped)[4] - moms) / step
        delta = np.linalg.solve(jac, err)
        t = 1.0
        while True:
            trial = theta - t * delta
            out = state(trial)
            if np.abs((out[4] - targets) / scale).max() < np.abs(err / scale).max() or t < 1e-3:
                break
            t *= 0.5
        theta = trial
        energy, psi, H, dens, moms = out
    else:
        raise NonConvergence("moment matching for the Fisher ground state did not converge")

    f = make_density(grid, dens.reshape(grid.shape))
    zeta = np.array(theta[:d]) if use_mean else np.zeros(d)
    quad = theta[d:] if use_mean else theta
    Lam = np.zeros((d, d))
    for (i, j), v in zip(pairs, quad):
        if i == j:
            Lam[i, i] = v
        else:
            Lam[i, j] = Lam[j, i] = 0.5 * v
    mult = MultiplierSet(alpha=-energy, zeta=zeta, Lambda=Lam)
    mask = f.support_mask()
    local = (H @ psi - energy * psi).reshape(grid.shape)
    residual = np.where(mask, local / np.maximum(psi.reshape(grid.shape), 1e-300), 0.0)
    J = fisher_matrix(f)
    details = {"fisher_matrix": J}
    notes = []
    if spec.support == "nonnegative":
        details["boundary_condition"] = "dirichlet" if spec.regularity_required else "neumann"
        if spec.regularity_required:
            shape, kl = fit_chi_shape(f, float(c.correlation[0, 0]))
            details.update(chi_shape=shape, chi_kl=kl)
    violation = _moment_violation(f, mean if use_mean else None, c.correlation)
    return SolveReport(
        extremal=f,
        multipliers=mult,
        objective_value=float(np.trace(J)),
        el_residual_norm=_support_l2(residual, f, mask),
        constraint_violation=violation,
        iterations=iterations,
        converged=violation <= 1e-7,
        notes=tuple(notes),
        details=details,
    )


def fit_chi_shape(f: GridDensity, m2: float) -> tuple[float, float]:
    """Chi shape k minimizing KL(f ‖ chi_k) at the same second moment."""

    def loss(k):
        g = cf.chi_density(cf.NonnegFamilyParams("chi", m2, k), f.grid)
        return kl_divergence(f, g)

    res = minimize_scalar(loss, bounds=(1.05, 12.0), method="bounded", options={"xatol": 1e-8})
    return float(res.x), float(res.fun)


# --- worst additive noise -------------------------------------------------------------


def _mm_loop(step, start: GridDensity, objective, max_iter=MAX_ITER, tol=RESIDUAL_TOL):
    """Iterate a majorize-minimize map until the log-density stops moving."""
    f = start
    history = [objective(f)]
    residual = math.inf
    for it in range(1, max_iter + 1):
        new, aux = step(f)
        mask = new.support_mask()
        residual = _support_l2(log_density(new) - log_density(f), new, mask)
        f = new
        history.append(objective(f))
        settled = len(history) > STALL_WINDOW and abs(history[-1] - history[-1 - STALL_WINDOW]) <= OBJECTIVE_TOL
        if residual <= ROUNDOFF_RESIDUAL or (residual <= tol and settled):
            return f, aux, it, residual
    raise NonConvergence(f"majorize-minimize loop hit {max_iter} iterations (residual {residual:.3e})")


def solve_worst_noise(spec: ProblemSpec) -> SolveReport:
    """Minimize h(X+W) − h(X) over X with fixed second moments, W Gaussian.

    Each step replaces log f_X by the W-average of log f_Y (the minimizer of
    the linearized objective) and projects back onto the moment constraints.
    """
    _check_kind(spec, "worst_noise")
    c = spec.constraints
    if spec.noise_cov is None:
        raise InvalidInput("worst-noise problems need noise_cov")
    if c.correlation is None:
        raise InfeasibleConstraints("worst noise needs a second-moment constraint")
    cov = _covariance(c)
    mean = c.mean
    grid = _grid_for(spec, c.mean_or_zero, cov)
    fW = noise_density(spec.noise_cov, grid.steps)
    start = tilt_to_moments(grid, _initial_density(spec, grid, c.mean_or_zero, cov), mean, c.correlation).density

    def step(f):
        fY = convolve(f, fW)
        avg = correlate_valid(fW, log_density(fY))
        t = tilt_to_moments(grid, avg, mean=mean, correlation=c.correlation)
        return t.density, (t, avg)

    def objective(f):
        return entropy(convolve(f, fW)) - entropy(f)

    f, (t, avg), iters, residual = _mm_loop(step, start, objective)
    fY = convolve(f, fW)
    mask_x = f.support_mask()
    mask_y = fY.support_mask()
    # Y side: log f_Y = α₁ − 1 + ηᵀy + yᵀΘy on the support (λ(y) = −log f_Y).
    c0, eta, Theta = _fit_quadratic(log_density(fY), fY.grid, mask_y)
    alpha1 = c0 + 1.0
    lam = 1.0 - alpha1 - fY.grid.linear_form(eta) - fY.grid.quadratic_form(Theta)
    # X side from the fixed point log f_X = avg + aᵀx + xᵀQx + const.
    const = _tilt_constant(log_density(f), avg, grid, t.linear, t.quadratic, mask_x)
    w_corr = moments(fW).correlation
    mult = MultiplierSet(
        alpha0=float(-const - alpha1 - np.trace(Theta @ w_corr)),
        alpha1=float(alpha1),
        zeta=-t.linear - eta,
        Gamma=-t.quadratic - Theta,
        eta=eta,
        Theta=Theta,
        lambda_of_y=lam,
    )
    violation = _moment_violation(f, mean, c.correlation)
    return SolveReport(
        extremal=f,
        companion=fY,
        multipliers=mult,
        objective_value=entropy(fY) - entropy(f),
        el_residual_norm=residual,
        constraint_violation=violation,
        iterations=iters,
        converged=violation <= 1e-7,
        details={"noise": fW},
    )


# --- extremal entropy inequality ------------------------------------------------------


def _bound_covariance(spec: ProblemSpec) -> np.ndarray:
    bound = spec.constraints.bound
    if bound is None:
        raise InfeasibleConstraints("EEI problems need a covariance bound")
    if np.linalg.eigvalsh(bound).min() <= 0:
        raise InfeasibleConstraints("covariance bound must be positive definite")
    return bound


def solve_eei(spec: ProblemSpec) -> SolveReport:
    """Maximize h(X) − μ h(X+W) over zero-mean X with Cov(X) ⪯ bound and h(X) ≥ p_X."""
    _check_kind(spec, "eei")
    if spec.noise_cov is None:
        raise InvalidInput("EEI problems need noise_cov")
    bound = _bound_covariance(spec)
    mu = float(spec.mu)
    d = spec.dim
    gauss = cf.eei_gaussian_optimum(mu, bound, spec.noise_cov)
    max_entropy = cf.gaussian_entropy(bound)
    floor = cf.gaussian_entropy(gauss.covariance) if spec.entropy_floor is None else float(spec.entropy_floor)
    if floor > max_entropy + 1e-12:
        raise InfeasibleBound("entropy floor exceeds the entropy of the bound Gaussian")
    grid = _grid_for(spec, np.zeros(d), bound)
    fW = noise_density(spec.noise_cov, grid.steps)
    start_log = _initial_density(spec, grid, np.zeros(d), 0.5 * bound)
    start, _ = project_covariance_bound(grid, start_log, bound)

    def project(base):
        dens, M = project_covariance_bound(grid, base, bound)
        return dens, M, 0.0

    def step(f):
        fY = convolve(f, fW)
        avg = mu * correlate_valid(fW, log_density(fY))
        dens, M, a = project(avg)
        if entropy(dens) < floor - ENTROPY_FLOOR_SLACK:
            # Floor active: the surrogate minimizer is exp(avg/(1+a)) projected,
            # with a ≥ 0 chosen so the entropy sits on the floor.
            lo, hi = 0.0, 1.0
            while entropy(project_covariance_bound(grid, avg / (1 + hi), bound)[0]) < floor:
                hi *= 2.0
                if hi > 1e12:
                    raise InfeasibleBound("entropy floor unreachable")
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if entropy(project_covariance_bound(grid, avg / (1 + mid), bound)[0]) < floor:
                    lo = mid
                else:
                    hi = mid
            a = hi
            dens, M = project_covariance_bound(grid, avg / (1 + a), bound)
        return dens, (M, a)

    def objective(f):
        return entropy(f) - mu * entropy(convolve(f, fW))

    f, (M, a), iters, residual = _mm_loop(step, start, objective)
    fY = convolve(f, fW)
    cov_x = moments(f).covariance
    mult = cf.eei_multipliers(mu, cov_x, spec.noise_cov, fY.grid)
    gap = np.linalg.eigvalsh(cov_x - bound).max()
    violation = max(
        abs(f.mass() - 1.0),
        float(np.abs(moments(f).mean).max()),
        max(gap, 0.0),
        max(floor - entropy(f) - ENTROPY_FLOOR_SLACK, 0.0),
    )
    return SolveReport(
        extremal=f,
        companion=fY,
        multipliers=mult,
        objective_value=entropy(f) - mu * entropy(fY),
        el_residual_norm=residual,
        constraint_violation=violation,
        iterations=iters,
        converged=violation <= 1e-7 and mult.alpha1 <= 1.0 - mu and mult.theta >= 0.0,
        details={
            "covariance": cov_x,
            "gaussian_optimum": gauss.covariance,
            "projection_multiplier": M,
            "entropy_floor": floor,
            "floor_multiplier": a,
            "noise": fW,
        },
    )


def _wtilde_candidates(cov_w: np.ndarray, cov_v: np.ndarray):
    """Common lower bound G ⪯ Σ_W, Σ_V, then scaled copies τG."""
    n = cov_w.shape[0]
    if np.allclose(cov_w @ cov_v, cov_v @ cov_w, atol=1e-12):
        evals, evecs = np.linalg.eigh(cov_w + np.pi * cov_v)  # generic combination separates shared eigenspaces
        w_diag = np.diag(evecs.T @ cov_w @ evecs)
        v_diag = np.diag(evecs.T @ cov_v @ evecs)
        G = evecs @ np.diag(np.minimum(w_diag, v_diag)) @ evecs.T
    else:
        lam = min(np.linalg.eigvalsh(cov_w).min(), np.linalg.eigvalsh(cov_v).min())
        G = lam * np.eye(n)
    yield 1.0, G
    tau = 0.99
    for _ in range(21):
        yield tau, tau * G
        tau *= 0.5


def solve_eei_two_noise(spec: ProblemSpec) -> SolveReport:
    """Maximize h(X+W) − μ h(X+V) over X with Cov(X) ⪯ bound.

    The Gaussian optimum is computed in closed form / by projected ascent,
    a Gaussian W̃ with Σ_W̃ ⪯ Σ_W, Σ_V is chosen so that the data-processing
    equality holds at that optimum, and the reduced single-noise problem in
    X̂ = X + W̃ is solved on the grid as a consistency check.
    """
    from .stationarity import dpi_equality_check

    _check_kind(spec, "eei_two_noise")
    if spec.noise_cov is None or spec.noise_cov_v is None:
        raise InvalidInput("two-noise problems need noise_cov and noise_cov_v")
    bound = _bound_covariance(spec)
    mu = float(spec.mu)
    cov_w, cov_v = spec.noise_cov, spec.noise_cov_v
    d = spec.dim
    notes = []
    if mu == 1.0 and np.allclose(cov_w, cov_v):
        notes.append("degenerate objective: identical noises at mu = 1 give zero for every input")
    opt = cf.two_noise_gaussian_optimum(mu, bound, cov_w, cov_v).covariance

    chosen, defect = None, math.inf
    for tau, wt in _wtilde_candidates(cov_w, cov_v):
        if np.linalg.eigvalsh(wt).min() <= 0:
            continue
        defect = dpi_equality_check(opt, cov_w, wt)
        if defect <= 1e-8:
            chosen = (tau, wt)
            break
    if chosen is None:
        raise ReductionFailure(f"no admissible noise split passes the equality check (last defect {defect:.3e})")
    tau, wt = chosen

    grid = _grid_for(spec, np.zeros(d), bound)
    h_min = min(grid.steps)
    singular = np.linalg.eigvalsh(opt).min() <= 1e-12 * max(1.0, np.abs(opt).max())
    shown = opt + (h_min**2) * np.eye(d) if singular else opt
    if singular:
        notes.append("optimal covariance is singular; extremal shown with one-cell smoothing")
    f = cf.gaussian_density(cf.GaussianParams.centered(shown), grid)
    fW = noise_density(cov_w, grid.steps)
    fV = noise_density(cov_v, grid.steps)
    grid_value = entropy(convolve(f, fW)) - mu * entropy(convolve(f, fV))

    details = {
        "covariance": opt,
        "noise_split": wt,
        "tau": tau,
        "dpi_defect": defect,
        "grid_objective": grid_value,
    }
    residual, iterations = 0.0, 0
    mult = MultiplierSet()
    v_hat = cov_v - wt
    w_hat = cov_w - wt
    if np.allclose(w_hat, 0.0, atol=1e-12) and np.linalg.eigvalsh(v_hat).min() > 1e-9 and not singular:
        reduced_spec = ProblemSpec(
            kind="eei",
            constraints=MomentConstraints(bound=bound + wt),
            mu=mu,
            noise_cov=v_hat,
            seed=spec.seed,
        )
        reduced = solve_eei(reduced_spec)
        residual, iterations, mult = reduced.el_residual_norm, reduced.iterations, reduced.multipliers
        reduced_cov = reduced.details["covariance"]
        details["reduced_covariance"] = reduced_cov
        details["reduction_gap"] = float(np.abs(reduced_cov - (opt + wt)).max())
    else:
        notes.append("reduced single-noise problem not solved on the grid (noise split leaves no PD residual noise)")
    return SolveReport(
        extremal=f,
        multipliers=mult,
        objective_value=cf.two_noise_objective(opt, mu, cov_w, cov_v),
        el_residual_norm=residual,
        constraint_violation=max(float(np.linalg.eigvalsh(opt - bound).max()), 0.0),
        iterations=iterations,
        converged=True,
        notes=tuple(notes),
        details=details,
    )


# --- Gaussian wiretap MSE gap ---------------------------------------------------------


class _Channel:
    """Dense kernel y ← a·x + N(0, σ²) on a uniform output lattice."""

    def __init__(self, x: np.ndarray, gain: float, var: float):
        h = x[1] - x[0]
        reach = abs(gain) * np.abs(x).max() + 9.0 * math.sqrt(var)
        self.x = x
        self.dx = h
        self.y = np.arange(-reach, reach + h / 2, h)
        self.dy = h
        diff = self.y[:, None] - gain * x[None, :]
        self.K = np.exp(-0.5 * diff**2 / var) / math.sqrt(2 * math.pi * var)

    def estimate(self, f: np.ndarray):
        """Output density f_Y and conditional mean E[X | Y = y] on the output lattice."""
        fy = self.K @ f * self.dx
        g = self.K @ (self.x * f) * self.dx
        return fy, g / np.maximum(fy, 1e-300)

    def power_and_gradient(self, f: np.ndarray):
        """Q(f) = E[E[X|Y]²] and its functional gradient ∫(2m(y)x − m(y)²)k(y|x)dy."""
        fy, m = self.estimate(f)
        q = float(np.sum(fy * m**2) * self.dy)
        grad = (self.K.T @ (2.0 * m) * self.x - self.K.T @ (m**2)) * self.dy
        return q, grad


def solve_wiretap(a: float, sigmaW2: float, sigmaZ2: float, R: float, points: int = 1024) -> WiretapReport:
    """Maximize Var(X|Y₂) − Var(X|Y₁) at Var(X|Y₁) = R over zero-mean unit-variance X.

    Y₁ = aX + W and Y₂ = Y₁ + Z. Q(f) = E[E[X|Y]²] is convex in the input
    density, and the Gaussian minimizes it, so Var(X|Y₁) never exceeds the
    linear value σ_w²/(a²+σ_w²); there the feasible set is the Gaussian alone
    and mirror descent on Q₁ finds it. Smaller R use an augmented Lagrangian
    on min Q₂ subject to Q₁ = 1 − R.
    """
    if not (sigmaW2 > 0 and sigmaZ2 > 0):
        raise InvalidInput("noise variances must be positive")
    if not 0.0 < R < 1.0:
        raise InfeasibleR("R must lie in (0, 1)")
    r_gauss = sigmaW2 / (a**2 + sigmaW2)
    if R > r_gauss * (1 + 1e-9):
        raise InfeasibleR(f"Var(X|Y1) = {R} is unattainable; the largest value for a unit-variance input is {r_gauss}")
    grid = GridSpec((-8.0,), (8.0,), (points,))
    x = grid.axis(0)
    ch1 = _Channel(x, a, sigmaW2)
    ch2 = _Channel(x, a, sigmaW2 + sigmaZ2)
    at_gaussian = R >= r_gauss * (1 - 1e-9)
    start = mixture_log_density(grid, np.random.default_rng(0), [0.0], [[1.0]])
    logf = np.log(np.maximum(tilt_to_moments(grid, start, mean=[0.0], correlation=[[1.0]]).density.values, 1e-300))
    target = 1.0 - R
    nu, rho, step = 0.0, 10.0, 2.0

    def merit(dens):
        q1, g1 = ch1.power_and_gradient(dens)
        if at_gaussian:
            return q1, q1, g1
        q2, g2 = ch2.power_and_gradient(dens)
        gap = q1 - target
        return q1, q2 + nu * gap + 0.5 * rho * gap**2, g2 + (nu + rho * gap) * g1

    f = np.exp(logf)
    q1, value, direction = merit(f)
    history = [value]
    settled = False
    for iterations in range(1, WIRETAP_MAX_ITER + 1):
        while True:
            trial = logf - step * direction
            trial = np.maximum(trial, trial.max() - LOG_RANGE)
            try:
                new = tilt_to_moments(grid, trial, mean=[0.0], correlation=[[1.0]]).density.values
            except TiltFailure as exc:
                raise NonConvergence(
                    "wiretap search collapsed toward a concentrated (near-discrete) input the grid cannot represent"
                ) from exc
            q1_new, value_new, direction_new = merit(new)
            if value_new <= value + 1e-15 or step < 1e-6:
                break
            step *= 0.5
        f, q1, value, direction = new, q1_new, value_new, direction_new
        logf = np.log(np.maximum(f, 1e-300))
        history.append(value)
        if at_gaussian:
            if abs((1.0 - q1) - R) <= WIRETAP_TOL:
                settled = True
                break
        elif len(history) > STALL_WINDOW and abs(history[-1] - history[-1 - STALL_WINDOW]) <= 1e-10:
            if abs(q1 - target) <= 1e-7:
                settled = True
                break
            nu += rho * (q1 - target)
            q1, value, direction = merit(f)
            history = [value]
        elif not at_gaussian and iterations % STALL_WINDOW == 0:
            nu += rho * (q1 - target)
            q1, value, direction = merit(f)
    q1, _ = ch1.power_and_gradient(f)
    q2, _ = ch2.power_and_gradient(f)
    fy2, m2 = ch2.estimate(f)
    weights = fy2 * ch2.dy
    slope = float(np.sum(weights * m2 * ch2.y) / np.sum(weights * ch2.y**2))
    linearity = float(np.sqrt(np.sum(weights * (m2 - slope * ch2.y) ** 2)))
    if abs((1.0 - q1) - R) > 1e-6:
        raise NonConvergence(f"wiretap solution misses the R constraint (Var(X|Y1) = {1 - q1:.6g})")
    # Below the Gaussian value the objective may still drift slowly at the cap;
    # the constraint holds, so the point is returned flagged as unconverged.
    return WiretapReport(
        extremal_input=make_density(grid, f),
        mse_legitimate=1.0 - q1,
        mse_eavesdropper=1.0 - q2,
        conditional_mean_slope=slope,
        linearity_residual=linearity,
        iterations=iterations,
        converged=settled,
    )


# --- dispatch -------------------------------------------------------------------------


def solve(spec: ProblemSpec):
    if spec.kind == "wiretap":
        if spec.wiretap is None:
            raise InvalidInput("wiretap problems need wiretap parameters")
        w = spec.wiretap
        return solve_wiretap(w.gain, w.sigma_w2, w.sigma_z2, w.rate)
    solver = {
        "max_entropy": solve_max_entropy,
        "min_fisher": solve_min_fisher,
        "worst_noise": solve_worst_noise,
        "eei": solve_eei,
        "eei_two_noise": solve_eei_two_noise,
    }[spec.kind]
    return solver(spec)

