"""Exponential tilting: the I-projection of a base density onto moment constraints.

Given a base log-density b on a grid and feature fields φ_k with targets t_k,
the projection is f ∝ exp(b + Σ c_k φ_k) with coefficients c solving the convex
dual  min_c  log ∫exp(b + cᵀφ) − cᵀt.  Newton's method with backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density_core import GridDensity, GridSpec, make_density, moments
from .errors import InfeasibleConstraints, NonConvergence, TiltFailure


@dataclass(frozen=True)
class Tilt:
    density: GridDensity
    linear: np.ndarray  # a in  log f = b + aᵀx + xᵀ Q x + const
    quadratic: np.ndarray  # Q (symmetric)
    iterations: int


def _feature_stack(grid: GridSpec, use_mean: bool, use_second: bool, axes_pairs=None):
    xs = grid.coordinates()
    d = grid.dim
    feats, labels = [], []
    if use_mean:
        for i in range(d):
            feats.append(np.broadcast_to(xs[i], grid.shape))
            labels.append(("lin", i))
    if use_second:
        pairs = axes_pairs if axes_pairs is not None else [(i, j) for i in range(d) for j in range(i, d)]
        for i, j in pairs:
            feats.append(xs[i] * xs[j] * np.ones(grid.shape))
            labels.append(("quad", i, j))
    return feats, labels


def solve_dual(log_base: np.ndarray, features: list[np.ndarray], targets: np.ndarray,
               cell_volume: float, tol: float = 1e-13, max_iter: int = 200, start=None):
    """Return (coefficients, normalized weights, iterations) for the tilt problem."""
    k = len(features)
    targets = np.asarray(targets, dtype=float)
    if k == 0:
        w = np.exp(log_base - log_base.max())
        return np.zeros(0), w / (w.sum() * cell_volume), 0
    phi = np.stack([np.asarray(f, dtype=float).ravel() for f in features])
    base = np.asarray(log_base, dtype=float).ravel()
    finite = np.isfinite(base)
    # Standardize features: tilt coefficients then live on a common scale.
    scale = np.maximum(np.abs(phi[:, finite]).max(axis=1), 1e-300)
    phi_s = phi / scale[:, None]
    t_s = targets / scale
    c = np.zeros(k) if start is None else np.asarray(start, dtype=float) * scale

    def evaluate(coef):
        expo = np.where(finite, base + coef @ phi_s, -np.inf)
        top = expo.max()
        w = np.exp(expo - top)
        z = w.sum()
        p = w / z
        mean = phi_s @ p
        value = top + np.log(z * cell_volume) - coef @ t_s
        return value, p, mean

    value, p, mean = evaluate(c)
    for it in range(1, max_iter + 1):
        grad = mean - t_s
        if np.abs(grad).max() <= tol:
            return c / scale, p / cell_volume, it - 1
        centered = phi_s - mean[:, None]
        hess = (centered * p) @ centered.T
        try:
            step = np.linalg.solve(hess + 1e-15 * np.eye(k), grad)
        except np.linalg.LinAlgError as exc:
            raise TiltFailure("singular moment covariance in tilt") from exc
        t = 1.0
        while True:
            trial = evaluate(c - t * step)
            if np.isfinite(trial[0]) and trial[0] <= value + 1e-4 * t * (grad @ -step) + 1e-15 * abs(value):
                break
            t *= 0.5
            if t < 1e-12:
                # Numerically flat: accept whatever the last full evaluation gives.
                if np.abs(grad).max() <= 1e3 * tol:
                    return c / scale, p / cell_volume, it
                raise TiltFailure("tilt line search stalled")
        c = c - t * step
        value, p, mean = trial
    if np.abs(mean - t_s).max() <= 1e3 * tol:
        return c / scale, p / cell_volume, max_iter
    raise TiltFailure("tilt did not reach the moment targets")


def _unpack(grid: GridSpec, labels, coef):
    d = grid.dim
    a = np.zeros(d)
    q = np.zeros((d, d))
    for lab, val in zip(labels, coef):
        if lab[0] == "lin":
            a[lab[1]] += val
        else:
            _, i, j = lab
            if i == j:
                q[i, i] += val
            else:
                q[i, j] += 0.5 * val
                q[j, i] += 0.5 * val
    return a, q


def tilt_to_moments(grid: GridSpec, log_base, mean=None, correlation=None, tol: float = 1e-13) -> Tilt:
    """Closest density (in KL) to exp(log_base) with the given mean and/or E[xxᵀ]."""
    log_base = np.asarray(log_base, dtype=float)
    feats, labels = _feature_stack(grid, mean is not None, correlation is not None)
    targets = []
    if mean is not None:
        targets.extend(np.atleast_1d(mean))
    if correlation is not None:
        corr = np.atleast_2d(correlation)
        targets.extend(corr[i, j] for i in range(grid.dim) for j in range(i, grid.dim))
    coef, dens, iters = solve_dual(log_base, feats, np.array(targets), grid.cell_volume, tol=tol)
    a, q = _unpack(grid, labels, coef)
    density = make_density(grid, dens.reshape(grid.shape))
    return Tilt(density, a, q, iters)


def max_abs_moment_error(f: GridDensity, mean=None, correlation=None) -> float:
    m = moments(f)
    err = 0.0
    if mean is not None:
        err = max(err, float(np.abs(m.mean - np.atleast_1d(mean)).max()))
    if correlation is not None:
        err = max(err, float(np.abs(m.correlation - np.atleast_2d(correlation)).max()))
    return err


def project_covariance_bound(grid: GridSpec, log_base, bound, mean=None, tol: float = 1e-13):
    """I-projection onto {E[x] = mean, Cov ⪯ bound}.

    Returns ``(density, multiplier)`` where the multiplier M ⪰ 0 enters as
    f ∝ base·exp(aᵀx − xᵀ M x). Active directions are found by an active-set
    loop in coordinates whitened by the bound.
    """
    d = grid.dim
    bound = np.atleast_2d(np.asarray(bound, dtype=float))
    mean = np.zeros(d) if mean is None else np.atleast_1d(np.asarray(mean, dtype=float))
    evals, evecs = np.linalg.eigh(bound)
    if evals.min() <= 0:
        raise InfeasibleConstraints("covariance bound must be positive definite")
    inv_root = evecs @ np.diag(evals**-0.5) @ evecs.T

    free = tilt_to_moments(grid, log_base, mean=mean, tol=tol)
    cov = moments(free.density).covariance
    s_evals, s_vecs = np.linalg.eigh(inv_root @ cov @ inv_root)
    if s_evals.max() <= 1.0 + 1e-12:
        return free.density, np.zeros((d, d))

    active = s_vecs[:, s_evals > 1.0]
    xs = grid.coordinates()
    for _ in range(2 * d + 2):
        # Whitened projections u_a = (inv_root·active)_aᵀ (x − mean).
        dirs = (inv_root @ active).T
        proj = [sum(dirs[a, i] * (xs[i] - mean[i]) for i in range(d)) * np.ones(grid.shape)
                for a in range(dirs.shape[0])]
        k = len(proj)
        feats = [np.broadcast_to(x, grid.shape) for x in xs]
        targets = list(mean)
        pairs = [(a, b) for a in range(k) for b in range(a, k)]
        for a, b in pairs:
            feats.append(proj[a] * proj[b])
            targets.append(1.0 if a == b else 0.0)
        coef, dens, _ = solve_dual(np.asarray(log_base, float), feats, np.array(targets), grid.cell_volume, tol=tol)
        K = np.zeros((k, k))
        for (a, b), val in zip(pairs, coef[d:]):
            K[a, b] += val if a == b else 0.5 * val
            if a != b:
                K[b, a] += 0.5 * val
        # f ∝ base·exp(uᵀKu) with K ⪯ 0 required; drop directions where K has positive curvature.
        k_evals, k_vecs = np.linalg.eigh(K)
        density = make_density(grid, dens.reshape(grid.shape))
        cov = moments(density).covariance
        s_evals, s_vecs = np.linalg.eigh(inv_root @ cov @ inv_root)
        if k_evals.max() > 1e-12 * max(1.0, abs(K).max()):
            active = active @ k_vecs[:, k_evals <= 0]
            if active.shape[1] == 0:
                break
            continue
        if s_evals.max() > 1.0 + 1e-9:
            extra = s_vecs[:, s_evals > 1.0 + 1e-9]
            active = np.linalg.qr(np.hstack([active, extra]))[0][:, : min(d, active.shape[1] + extra.shape[1])]
            continue
        m_white = -(active @ K @ active.T)
        multiplier = inv_root @ m_white @ inv_root
        return density, 0.5 * (multiplier + multiplier.T)
    raise NonConvergence("active-set projection onto the covariance bound did not settle")


def mixture_log_density(grid: GridSpec, rng: np.random.Generator, center, cov,
                        support: str = "full", regular: bool = False) -> np.ndarray:
    """Log of a random 2-4 component Gaussian mixture roughly matched to ``center``/``cov``.

    On the half-line the components are folded at the origin; ``regular``
    multiplies by x^p with p in [2, 3.5] so the density vanishes at 0.
    """
    d = grid.dim
    center = np.atleast_1d(np.asarray(center, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    evals, evecs = np.linalg.eigh(cov)
    root = evecs @ np.diag(np.sqrt(np.maximum(evals, 0.0))) @ evecs.T
    count = int(rng.integers(2, 5))
    weights = rng.dirichlet(np.ones(count))
    xs = grid.coordinates()
    logs = []
    for w in weights:
        shift = root @ rng.uniform(-1.2, 1.2, size=d)
        widths = rng.uniform(0.35, 0.9, size=d)
        rot = np.linalg.qr(rng.normal(size=(d, d)))[0]
        comp_cov = root @ rot @ np.diag(widths**2) @ rot.T @ root.T + 1e-12 * np.eye(d)
        prec = np.linalg.inv(comp_cov)
        mu = center + shift
        if support == "nonnegative":
            mu = np.abs(mu)
        diff = [x - m for x, m in zip(xs, mu)]
        quad = sum(prec[i, j] * diff[i] * diff[j] for i in range(d) for j in range(d))
        logs.append(np.log(w) - 0.5 * quad - 0.5 * np.linalg.slogdet(comp_cov)[1])
    top = np.maximum.reduce(logs)
    log_mix = top + np.log(sum(np.exp(l - top) for l in logs))
    if support == "nonnegative" and regular:
        log_mix = log_mix + rng.uniform(2.0, 3.5) * np.log(xs[0])
    return log_mix
