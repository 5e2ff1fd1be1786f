"""Closed-form extremal densities, their functional values and their multipliers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .density_core import GridDensity, GridSpec, density_from_log
from .errors import BadSupport, InvalidInput, NonConvergence, NotPSD, SingularCovariance
from .problems import MultiplierSet

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidInput("mean and covariance sizes disagree")
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))
        object.__setattr__(self, "mean", mean)

    @classmethod
    def centered(cls, covariance) -> "GaussianParams":
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        return cls(np.zeros(cov.shape[0]), cov)


@dataclass(frozen=True)
class NonnegFamilyParams:
    family: str
    second_moment: float
    chi_shape: float = 1.0

    def __post_init__(self):
        if self.family not in ("half_normal", "chi"):
            raise InvalidInput(f"unknown family {self.family!r}")
        if not self.second_moment > 0:
            raise InvalidInput("second moment must be positive")
        if not self.chi_shape > 0:
            raise InvalidInput("chi shape must be positive")

    @property
    def shape(self) -> float:
        return 1.0 if self.family == "half_normal" else self.chi_shape

    @property
    def scale2(self) -> float:
        return self.second_moment / self.shape


def _pd_inverse(cov) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if np.linalg.eigvalsh(cov).min() <= 1e-14 * max(1.0, abs(cov).max()):
        raise SingularCovariance("covariance must be positive definite")
    return np.linalg.inv(cov)


def _logdet(cov) -> float:
    sign, val = np.linalg.slogdet(np.atleast_2d(cov))
    if sign <= 0:
        raise SingularCovariance("covariance must be positive definite")
    return float(val)


def _require_half_line(grid: GridSpec):
    if grid.dim != 1 or grid.lower[0] != 0.0:
        raise BadSupport("nonnegative families need a 1-D grid starting at 0")


# --- densities ------------------------------------------------------------------------


def gaussian_log_density(p: GaussianParams, grid: GridSpec) -> np.ndarray:
    prec = _pd_inverse(p.covariance)
    if p.mean.size != grid.dim:
        raise InvalidInput("Gaussian dimension differs from the grid")
    centered = [x - m for x, m in zip(grid.coordinates(), p.mean)]
    quad = sum(prec[i, j] * centered[i] * centered[j] for i in range(grid.dim) for j in range(grid.dim))
    return -0.5 * quad - 0.5 * (grid.dim * LOG_2PI + _logdet(p.covariance))


def gaussian_density(p: GaussianParams, grid: GridSpec) -> GridDensity:
    return density_from_log(grid, gaussian_log_density(p, grid))


def chi_density(p: NonnegFamilyParams, grid: GridSpec) -> GridDensity:
    _require_half_line(grid)
    x = grid.axis(0)
    k = p.shape
    logf = -0.5 * x**2 / p.scale2
    if k != 1.0:
        logf = logf + (k - 1.0) * np.log(x)
    return density_from_log(grid, logf)


def half_normal_density(m2: float, grid: GridSpec) -> GridDensity:
    return chi_density(NonnegFamilyParams("half_normal", m2), grid)


# --- functional values ----------------------------------------------------------------


def gaussian_entropy(cov) -> float:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = cov.shape[0]
    return 0.5 * (n * (LOG_2PI + 1.0) + _logdet(cov))


def gaussian_fisher(cov) -> np.ndarray:
    return _pd_inverse(cov)


def chi_entropy(p: NonnegFamilyParams) -> float:
    k, s = p.shape, math.sqrt(p.scale2)
    return float(gammaln(k / 2) + math.log(s / math.sqrt(2.0)) - 0.5 * (k - 1) * digamma(k / 2) + k / 2)


def half_normal_entropy(m2: float) -> float:
    return 0.5 * math.log(math.pi * math.e * m2 / 2.0)


def chi_fisher(p: NonnegFamilyParams) -> float:
    """∫ f'²/f for the chi family at fixed second moment; infinite for 1 < k ≤ 2."""
    k = p.shape
    if k == 1.0:
        return 1.0 / p.second_moment
    if k <= 2.0:
        return math.inf
    return k * (2 * k - 3) / ((k - 2) * p.second_moment)


def gaussian_channel_information(cov_x, cov_w) -> float:
    """h(X+W) − h(X) for independent Gaussians."""
    return gaussian_entropy(np.atleast_2d(cov_x) + np.atleast_2d(cov_w)) - gaussian_entropy(cov_x)


def eei_objective(cov_x, mu: float, cov_w) -> float:
    """h(X) − μ h(X+W) for Gaussian X; −inf when cov_x is singular."""
    cov_x = np.atleast_2d(np.asarray(cov_x, dtype=float))
    sign, _ = np.linalg.slogdet(cov_x)
    if sign <= 0:
        return -math.inf
    return gaussian_entropy(cov_x) - mu * gaussian_entropy(cov_x + np.atleast_2d(cov_w))


def two_noise_objective(cov_x, mu: float, cov_w, cov_v) -> float:
    """h(X+W) − μ h(X+V) for Gaussian X."""
    cov_x = np.atleast_2d(np.asarray(cov_x, dtype=float))
    return gaussian_entropy(cov_x + cov_w) - mu * gaussian_entropy(cov_x + cov_v)


# --- Gaussian optima of the entropy-inequality objectives -----------------------------


def _sqrt_and_inverse_sqrt(bound: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    evals, evecs = np.linalg.eigh(bound)
    if evals.min() <= 0:
        raise NotPSD("the covariance bound must be positive definite")
    root = evecs @ np.diag(np.sqrt(evals)) @ evecs.T
    inv_root = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    return root, inv_root


def _clip_unit_interval(s: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(0.5 * (s + s.T))
    return evecs @ np.diag(np.clip(evals, 0.0, 1.0)) @ evecs.T


def _commute(a: np.ndarray, b: np.ndarray) -> bool:
    return np.allclose(a @ b, b @ a, rtol=0.0, atol=1e-12 * max(1.0, abs(a).max() * abs(b).max()))


def _projected_ascent(value, gradient, start, max_iter=10_000, tol=1e-13):
    """Maximize ``value`` over {0 ⪯ S ⪯ I} with backtracking projected gradient steps."""
    s = _clip_unit_interval(start)
    current = value(s)
    step = 1e-2 * max(1.0, s.shape[0])
    for _ in range(max_iter):
        g = gradient(s)
        while True:
            trial = _clip_unit_interval(s + step * g)
            trial_value = value(trial)
            if trial_value >= current - 1e-15:
                break
            step *= 0.5
            if step < 1e-16:
                return s
        moved = np.abs(trial - s).max()
        s, current = trial, trial_value
        step *= 2.0
        if moved <= tol:
            return s
    raise NonConvergence("projected ascent on the covariance interval did not settle")


def _scalar_eei(mu: float, bound: float, w: float) -> float:
    if mu == 1.0:
        return bound
    return min(bound, w / (mu - 1.0))


def eei_gaussian_optimum(mu: float, Sigma_bound, Sigma_W) -> GaussianParams:
    """Maximize h(X) − μ h(X+W) over Gaussian X with 0 ⪯ Cov(X) ⪯ Sigma_bound."""
    if mu < 1:
        raise InvalidInput("mu must be at least 1")
    bound = np.atleast_2d(np.asarray(Sigma_bound, dtype=float))
    cov_w = np.atleast_2d(np.asarray(Sigma_W, dtype=float))
    n = bound.shape[0]
    root, inv_root = _sqrt_and_inverse_sqrt(bound)
    # In coordinates whitened by the bound the constraint becomes 0 ⪯ S ⪯ I and
    # the noise W̃ = B^{-1/2} W B^{-1/2}; the optimum shares W̃'s eigenbasis.
    w_tilde = inv_root @ cov_w @ inv_root
    evals, evecs = np.linalg.eigh(0.5 * (w_tilde + w_tilde.T))
    s_diag = np.array([_scalar_eei(mu, 1.0, w) for w in evals])
    s = evecs @ np.diag(s_diag) @ evecs.T
    if n > 1 and not _commute(bound, cov_w):
        def value(x):
            return eei_objective(x, mu, w_tilde)

        def grad(x):
            return 0.5 * np.linalg.inv(x) - 0.5 * mu * np.linalg.inv(x + w_tilde)

        s = _projected_ascent(value, grad, s)
    cov = root @ s @ root
    return GaussianParams(np.zeros(n), 0.5 * (cov + cov.T))


def _scalar_two_noise(mu: float, bound: float, w: float, v: float) -> float:
    if mu == 1.0:
        return bound if v >= w else 0.0
    return float(np.clip((v - mu * w) / (mu - 1.0), 0.0, bound))


def two_noise_gaussian_optimum(mu: float, Sigma_bound, Sigma_W, Sigma_V) -> GaussianParams:
    """Maximize h(X+W) − μ h(X+V) over Gaussian X with 0 ⪯ Cov(X) ⪯ Sigma_bound."""
    if mu < 1:
        raise InvalidInput("mu must be at least 1")
    bound = np.atleast_2d(np.asarray(Sigma_bound, dtype=float))
    cov_w = np.atleast_2d(np.asarray(Sigma_W, dtype=float))
    cov_v = np.atleast_2d(np.asarray(Sigma_V, dtype=float))
    n = bound.shape[0]
    root, inv_root = _sqrt_and_inverse_sqrt(bound)
    w_t = inv_root @ cov_w @ inv_root
    v_t = inv_root @ cov_v @ inv_root
    if _commute(w_t, v_t):
        evals, evecs = np.linalg.eigh(0.5 * (w_t + w_t.T))
        v_diag = np.diag(evecs.T @ v_t @ evecs)
        s_diag = [_scalar_two_noise(mu, 1.0, w, v) for w, v in zip(evals, v_diag)]
        s = evecs @ np.diag(s_diag) @ evecs.T
    else:
        def value(x):
            return two_noise_objective(x, mu, w_t, v_t)

        def grad(x):
            return 0.5 * np.linalg.inv(x + w_t) - 0.5 * mu * np.linalg.inv(x + v_t)

        s = _projected_ascent(value, grad, 0.5 * np.eye(n))
    cov = root @ s @ root
    return GaussianParams(np.zeros(n), 0.5 * (cov + cov.T))


def scalar_eei_grid_search(mu: float, bound: float, w: float, points: int = 100_000) -> tuple[float, float]:
    """Brute-force maximizer of ½ln s − (μ/2)ln(s+w) over a uniform grid on (0, bound]."""
    s = np.linspace(bound / points, bound, points)
    values = 0.5 * np.log(s) - 0.5 * mu * np.log(s + w)
    return float(s[np.argmax(values)]), bound / points


# --- multipliers ----------------------------------------------------------------------


def max_entropy_multipliers(p: GaussianParams) -> MultiplierSet:
    """Multipliers for which log f + 1 + α + ζᵀx + xᵀΛx vanishes at the Gaussian."""
    prec = _pd_inverse(p.covariance)
    n = p.mean.size
    alpha = -1.0 + 0.5 * (n * LOG_2PI + _logdet(p.covariance)) + 0.5 * p.mean @ prec @ p.mean
    return MultiplierSet(alpha=float(alpha), zeta=-prec @ p.mean, Lambda=0.5 * prec)


def half_normal_max_entropy_multipliers(m2: float) -> MultiplierSet:
    return MultiplierSet(
        alpha=-1.0 + 0.5 * math.log(math.pi * m2 / 2.0),
        zeta=np.zeros(1),
        Lambda=np.array([[0.5 / m2]]),
    )


def min_fisher_multipliers(p: GaussianParams, xi=None) -> MultiplierSet:
    """Multipliers annihilating −(ξᵀs)² − 2ξᵀ(∇s)ξ + α + ζᵀx + xᵀΛx at the Gaussian.

    ``xi=None`` means the trace objective Σ_i J_ii (all canonical directions).
    """
    prec = _pd_inverse(p.covariance)
    if xi is None:
        Lam = prec @ prec
        alpha = p.mean @ Lam @ p.mean - 2.0 * np.trace(prec)
    else:
        u = prec @ np.atleast_1d(np.asarray(xi, dtype=float))
        Lam = np.outer(u, u)
        alpha = p.mean @ Lam @ p.mean - 2.0 * float(np.atleast_1d(xi) @ u)
    return MultiplierSet(alpha=float(alpha), zeta=-2.0 * Lam @ p.mean, Lambda=Lam)


def nonneg_min_fisher_multipliers(p: NonnegFamilyParams) -> MultiplierSet:
    """Half-normal (k=1) and chi with k=3, the two nonnegative minimizers."""
    s2 = p.scale2
    if p.shape == 1.0:
        alpha, lam = -2.0 / s2, 1.0 / s2**2
    elif p.shape == 3.0:
        alpha, lam = -6.0 / s2, 1.0 / s2**2
    else:
        raise InvalidInput("closed-form multipliers exist for chi shapes 1 and 3 only")
    return MultiplierSet(alpha=alpha, zeta=np.zeros(1), Lambda=np.array([[lam]]))


def worst_noise_multipliers(signal: GaussianParams, cov_w, y_grid: GridSpec | None = None) -> MultiplierSet:
    cov_w = np.atleast_2d(np.asarray(cov_w, dtype=float))
    n = signal.mean.size
    cov_y = signal.covariance + cov_w
    prec_x = _pd_inverse(signal.covariance)
    prec_y = _pd_inverse(cov_y)
    mean_y = signal.mean
    alpha0 = -1.0 + 0.5 * (n * LOG_2PI + _logdet(signal.covariance)) + 0.5 * signal.mean @ prec_x @ signal.mean
    alpha1 = 1.0 - 0.5 * (n * LOG_2PI + _logdet(cov_y)) - 0.5 * mean_y @ prec_y @ mean_y
    eta = prec_y @ mean_y
    Theta = -0.5 * prec_y
    lam = None
    if y_grid is not None:
        lam = 1.0 - alpha1 - y_grid.linear_form(eta) - y_grid.quadratic_form(Theta)
    return MultiplierSet(
        alpha0=float(alpha0),
        alpha1=float(alpha1),
        zeta=-prec_x @ signal.mean,
        Gamma=0.5 * prec_x,
        eta=eta,
        Theta=Theta,
        lambda_of_y=lam,
    )


def eei_multipliers(mu: float, cov_x, cov_w, y_grid: GridSpec | None = None) -> MultiplierSet:
    """Multipliers for the EEI stationarity system at Gaussian X* (zero mean).

    The system fixes Γ, Φ, c_W, c_Y and λ(y)=μ but leaves a one-parameter family
    in (α₁, bound multiplier). The choice here takes the smallest 1 − α₁ ≥ μ
    for which the bound multiplier c/2·Σ_X*⁻¹ − μ(μ−1)/2·Σ_W⁻¹ stays PSD; in
    1-D this gives θ = 0 at interior optima.
    """
    cov_x = np.atleast_2d(np.asarray(cov_x, dtype=float))
    cov_w = np.atleast_2d(np.asarray(cov_w, dtype=float))
    n = cov_x.shape[0]
    prec_x = _pd_inverse(cov_x)
    prec_w = _pd_inverse(cov_w)
    cov_y = cov_x + cov_w
    prec_y = _pd_inverse(cov_y)
    kappa = mu * (mu - 1.0)
    evals, evecs = np.linalg.eigh(cov_x)
    root = evecs @ np.diag(np.sqrt(evals)) @ evecs.T
    c = max(mu, kappa * float(np.linalg.eigvalsh(root @ prec_w @ root).max()))
    alpha1 = 1.0 - c
    bound_mult = 0.5 * c * prec_x - 0.5 * kappa * prec_w
    bound_mult = 0.5 * (bound_mult + bound_mult.T)
    theta = max(float(np.linalg.eigvalsh(bound_mult).max()), 0.0)
    if theta <= 1e-12 * c * abs(prec_x).max():
        theta = 0.0
    Gamma = -0.5 * kappa * prec_w
    Phi = -Gamma - 0.5 * mu * prec_y
    cW = 0.5 * kappa * (n * LOG_2PI + _logdet(cov_w))
    cY = -0.5 * mu * (n * LOG_2PI + _logdet(cov_y))
    alpha0 = mu - c + cW + cY + 0.5 * c * (n * LOG_2PI + _logdet(cov_x))
    lam = None if y_grid is None else np.full(y_grid.shape, float(mu))
    return MultiplierSet(
        alpha0=float(alpha0),
        alpha1=float(alpha1),
        Gamma=Gamma,
        Phi=Phi,
        theta=theta,
        bound_multiplier=bound_mult,
        lambda_of_y=lam,
        cW=float(cW),
        cY=float(cY),
    )
