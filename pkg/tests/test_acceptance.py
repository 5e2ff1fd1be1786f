"""Acceptance gate: one check per criterion, each printing a single PASS/FAIL line.

Run under pytest or directly with ``python tests/test_acceptance.py``.
Oracle constants were computed with mpmath/scipy.stats and frozen here.
"""

from __future__ import annotations

import math
import sys
from dataclasses import replace

import numpy as np
import pytest

from infovar import closed_forms as cf
from infovar.density_core import GridSpec, convolution_grid, convolve, moments
from infovar.functionals import entropy, face_values, fisher_matrix, kl_divergence, regularity_defect
from infovar.harness import SweepConfig, margin_sweep
from infovar.problems import MomentConstraints, ProblemSpec
from infovar.stationarity import (
    dpi_equality_check,
    euler_lagrange_residual,
    kkt_check,
    second_variation_check,
)
from infovar.variational_solver import noise_density, solve, solve_wiretap

# mpmath: ½ln(2πe), ½ln(πe/2), ½ln 2
GAUSS_ENTROPY = 1.4189385332046727
HALF_NORMAL_ENTROPY = 0.7257913526447274
GAUSS_CHANNEL_INFO = 0.34657359027997264
WIRETAP_GAP = 1.0 / 6.0


def report(number: int, ok: bool, detail: str):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line, file=sys.__stdout__, flush=True)
    return ok


def best_gaussian_kl(f) -> float:
    m = moments(f)
    g = cf.gaussian_density(cf.GaussianParams(m.mean, m.covariance), f.grid)
    return kl_divergence(f, g)


def eei_grid_search(mu: float, bound: float, w: float, points: int = 100_000) -> tuple[float, float]:
    s = np.linspace(bound / points, bound, points)
    values = 0.5 * np.log(s) - 0.5 * mu * np.log(s + w)
    return float(s[np.argmax(values)]), bound / points


# --- the ten criteria -----------------------------------------------------------------


def criterion_1():
    r = solve(ProblemSpec("max_entropy", MomentConstraints(correlation=[[1.0]])))
    grid = r.extremal.grid
    kl = kl_divergence(r.extremal, cf.gaussian_density(cf.GaussianParams.centered([[1.0]]), grid))
    h = entropy(r.extremal)
    ok = kl <= 1e-4 and abs(h - GAUSS_ENTROPY) <= 1e-3
    return report(1, ok, f"KL={kl:.2e} entropy={h:.6f}")


def criterion_2():
    r = solve(ProblemSpec("max_entropy", MomentConstraints(correlation=[[1.0]]), support="nonnegative"))
    kl = kl_divergence(r.extremal, cf.half_normal_density(1.0, r.extremal.grid))
    h = entropy(r.extremal)
    ok = kl <= 1e-4 and abs(h - HALF_NORMAL_ENTROPY) <= 1e-3
    return report(2, ok, f"KL={kl:.2e} entropy={h:.6f}")


def criterion_3():
    one = solve(ProblemSpec("min_fisher", MomentConstraints(mean=[0.0], correlation=[[1.0]])))
    j1 = float(fisher_matrix(one.extremal)[0, 0])
    sigma = np.array([[2.0, 1.0], [1.0, 2.0]])
    two = solve(ProblemSpec("min_fisher", MomentConstraints(mean=[0.0, 0.0], correlation=sigma)))
    j2 = fisher_matrix(two.extremal)
    rel2 = float(np.abs(j2 / np.linalg.inv(sigma) - 1.0).max())
    table = margin_sweep(SweepConfig(ProblemSpec("min_fisher", MomentConstraints(mean=[0.0], correlation=[[1.0]])),
                                     200, seed=0))
    ok = abs(j1 - 1.0) <= 0.02 and rel2 <= 0.02 and table.min_margin >= -1e-3
    return report(3, ok, f"J={j1:.5f} 2-D max rel err={rel2:.2e} min margin={table.min_margin:.3e}")


def criterion_4():
    half = ProblemSpec("min_fisher", MomentConstraints(correlation=[[1.0]]), support="nonnegative")
    chi = ProblemSpec("min_fisher", MomentConstraints(correlation=[[2.0]]), support="nonnegative",
                      regularity_required=True)
    rh, rc = solve(half), solve(chi)
    defect = float(np.abs(regularity_defect(rc.extremal)).max())
    f0 = float(np.abs(face_values(rc.extremal, 0)[0]).max())
    mh = margin_sweep(SweepConfig(half, 50, seed=0)).min_margin
    mc = margin_sweep(SweepConfig(chi, 50, seed=0)).min_margin
    ok = rh.converged and rc.converged and defect <= 1e-6 and f0 <= 1e-6 and min(mh, mc) >= -1e-3
    return report(4, ok, f"regularity defect={defect:.1e} f(0)={f0:.1e} margins half={mh:.3e} chi={mc:.3e}")


def criterion_5():
    spec = ProblemSpec("worst_noise", MomentConstraints(mean=[0.0], correlation=[[1.0]]), noise_cov=[[1.0]])
    r = solve(spec)
    sweep = margin_sweep(SweepConfig(spec, 200, seed=0)).min_margin
    ref = cf.worst_noise_multipliers(cf.GaussianParams.centered([[1.0]]), [[1.0]], r.companion.grid)
    got = r.multipliers
    mult_err = max(abs(float(np.ravel(getattr(got, k))[0]) - float(np.ravel(getattr(ref, k))[0]))
                   for k in ("eta", "Theta", "Gamma"))
    psd = second_variation_check(spec, r.extremal, r.companion, got)
    ok = (abs(r.objective_value - GAUSS_CHANNEL_INFO) <= 1e-3 and sweep >= -1e-4 and mult_err <= 1e-3
          and psd.min_eigenvalue_over_grid >= -1e-9 and psd.max_relative_determinant <= 1e-12)
    return report(5, ok, f"objective={r.objective_value:.6f} min margin={sweep:.3e} multiplier err={mult_err:.1e} "
                         f"min eig={psd.min_eigenvalue_over_grid:.1e} det/tr^2={psd.max_relative_determinant:.1e}")


def criterion_6():
    parts, ok = [], True
    for mu, bound, target, interior in ((2.0, 4.0, 1.0, True), (1.25, 2.0, 2.0, False)):
        spec = ProblemSpec("eei", MomentConstraints(bound=[[bound]]), mu=mu, noise_cov=[[1.0]])
        r = solve(spec)
        s2 = float(np.atleast_2d(r.details["covariance"])[0, 0])
        kkt = kkt_check(spec, r)
        oracle, step = eei_grid_search(mu, bound, 1.0)
        theta = float(r.multipliers.theta)
        ok &= r.converged and abs(s2 / target - 1.0) <= 0.02 and abs(s2 - oracle) <= step
        ok &= kkt.alpha1_gate and r.multipliers.alpha1 <= 1.0 - mu
        ok &= abs(theta) <= 1e-6 if interior else (theta > 0 and kkt.slackness_defect <= 1e-6)
        parts.append(f"mu={mu} sigma2={s2:.6f} oracle={oracle:.5f} theta={theta:.3g} "
                     f"slack={kkt.slackness_defect:.1e} alpha1={r.multipliers.alpha1:.3g}")
    return report(6, bool(ok), "; ".join(parts))


def criterion_7():
    defect = dpi_equality_check(np.diag([1.0, 0.0]), np.eye(2), np.diag([1.0, 0.5]))
    spec = ProblemSpec("eei_two_noise", MomentConstraints(bound=[[4.0]]), mu=1.5, noise_cov=[[1.0]],
                       noise_cov_v=[[3.0]])
    r = solve(spec)
    cov = np.atleast_2d(r.details["covariance"])
    within = float(np.linalg.eigvalsh(cov - spec.constraints.bound).max()) <= 1e-9
    sweep = margin_sweep(SweepConfig(spec, 100, seed=0)).min_margin
    ok = defect <= 1e-12 and within and sweep >= -1e-4
    return report(7, ok, f"dpi defect={defect:.1e} Sigma*={cov.ravel()} min margin={sweep:.3e}")


def criterion_8():
    w = solve_wiretap(1.0, 1.0, 1.0, 0.5)
    kl = best_gaussian_kl(w.extremal_input)
    ok = kl <= 1e-3 and abs(w.mse_gap - WIRETAP_GAP) <= 1e-3 and w.linearity_residual <= 1e-3
    return report(8, ok, f"KL={kl:.1e} gap={w.mse_gap:.6f} linearity residual={w.linearity_residual:.1e}")


def _catalog(points: int):
    """(label, problem, density, multipliers, output density) for each catalog extremal."""
    unit = cf.GaussianParams.centered([[1.0]])
    g = GridSpec.centered([0.0], [[1.0]], points)
    gauss = cf.gaussian_density(unit, g)
    half = GridSpec.half_line(1.0, points)
    chi_grid = GridSpec.half_line(2.0, points)
    chi_p = cf.NonnegFamilyParams("chi", 2.0, 3.0)
    rows = [
        ("max-entropy gaussian", ProblemSpec("max_entropy", MomentConstraints(correlation=[[1.0]])),
         gauss, cf.max_entropy_multipliers(unit), None),
        ("max-entropy half-normal", ProblemSpec("max_entropy", MomentConstraints(correlation=[[1.0]]),
                                                support="nonnegative"),
         cf.half_normal_density(1.0, half), cf.half_normal_max_entropy_multipliers(1.0), None),
        ("min-fisher gaussian", ProblemSpec("min_fisher", MomentConstraints(mean=[0.0], correlation=[[1.0]])),
         gauss, cf.min_fisher_multipliers(unit), None),
        ("min-fisher half-normal", ProblemSpec("min_fisher", MomentConstraints(correlation=[[1.0]]),
                                               support="nonnegative"),
         cf.half_normal_density(1.0, half),
         cf.nonneg_min_fisher_multipliers(cf.NonnegFamilyParams("half_normal", 1.0)), None),
        ("min-fisher chi3", ProblemSpec("min_fisher", MomentConstraints(correlation=[[2.0]]),
                                        support="nonnegative", regularity_required=True),
         cf.chi_density(chi_p, chi_grid), cf.nonneg_min_fisher_multipliers(chi_p), None),
    ]
    fW = noise_density([[1.0]], g.steps)
    fY = convolve(gauss, fW)
    rows.append(("worst-noise", ProblemSpec("worst_noise", MomentConstraints(mean=[0.0], correlation=[[1.0]]),
                                            noise_cov=[[1.0]]),
                 gauss, cf.worst_noise_multipliers(unit, [[1.0]], fY.grid), fY))
    for mu, bound, s2 in ((2.0, 4.0, 1.0), (1.25, 2.0, 2.0)):
        gx = GridSpec.centered([0.0], [[s2]], points)
        fx = cf.gaussian_density(cf.GaussianParams.centered([[s2]]), gx)
        fy = convolve(fx, noise_density([[1.0]], gx.steps))
        rows.append((f"eei mu={mu}", ProblemSpec("eei", MomentConstraints(bound=[[bound]]), mu=mu,
                                                 noise_cov=[[1.0]]),
                     fx, cf.eei_multipliers(mu, [[s2]], [[1.0]], fy.grid), fy))
    return rows


def criterion_9():
    worst = max(euler_lagrange_residual(p, f, m, fy).l2_norm for _, p, f, m, fy in _catalog(1024))
    # Halving: the discretized fields whose residual is pure truncation error.
    ladders = {}
    for n in (256, 512, 1024, 2048):
        for label, p, f, m, fy in _catalog(n):
            if label.startswith("min-fisher"):
                ladders.setdefault(label, []).append(euler_lagrange_residual(p, f, m, fy).l2_norm)
    halving = all(a >= 2.0 * b for seq in ladders.values() for a, b in zip(seq, seq[1:]))
    # Injected violations.
    _, p, f, m, _ = _catalog(1024)[0]
    wrong = euler_lagrange_residual(p, f, replace(m, Lambda=np.atleast_2d(m.Lambda) * 1.5)).l2_norm
    label, p, f, m, fy = _catalog(1024)[-2]
    broken = replace(m, alpha1=1.0 - float(p.mu) + 0.5)
    eig = second_variation_check(p, f, fy, broken).min_relative_eigenvalue
    ok = worst <= 1e-5 and halving and wrong > 0.1 and eig < 0
    ratios = {k: round(v[-2] / v[-1], 1) for k, v in ladders.items()}
    return report(9, ok, f"max catalog residual={worst:.1e} halving ratios={ratios} "
                         f"wrong-multiplier residual={wrong:.2f} broken-gate eig={eig:.3f}")


def criterion_10():
    problems = {
        "max_entropy": ProblemSpec("max_entropy", MomentConstraints(correlation=[[1.0]])),
        "min_fisher": ProblemSpec("min_fisher", MomentConstraints(mean=[0.0], correlation=[[1.0]])),
        "worst_noise": ProblemSpec("worst_noise", MomentConstraints(mean=[0.0], correlation=[[1.0]]),
                                   noise_cov=[[1.0]]),
        "eei": ProblemSpec("eei", MomentConstraints(bound=[[4.0]]), mu=2.0, noise_cov=[[1.0]]),
    }
    ratios = {}
    for name, p in problems.items():
        small = margin_sweep(SweepConfig(p, 3, 0, "perturbed_extremal", perturbation=1e-2)).margins
        large = margin_sweep(SweepConfig(p, 3, 0, "perturbed_extremal", perturbation=2e-2)).margins
        ratios[name] = large / small
    ok = all(np.all((r >= 3.5) & (r <= 4.5)) for r in ratios.values())
    shown = {k: f"{v.min():.3f}-{v.max():.3f}" for k, v in ratios.items()}
    return report(10, bool(ok), f"ratios {shown}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("check", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_acceptance(check):
    assert check()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
