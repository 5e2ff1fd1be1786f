import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from infovar.density_core import GridSpec, density_from_log, moments
from infovar.errors import InfeasibleCandidate, InvalidInput
from infovar.harness import (
    SweepConfig,
    check_inequality,
    extremal_density,
    margin_sweep,
    perturbed_extremal,
    problem_grid,
    random_feasible_density,
)
from infovar.problems import MomentConstraints, ProblemSpec
from infovar.tilting import tilt_to_moments

UNIT = MomentConstraints(correlation=[[1.0]])
MAXENT = ProblemSpec("max_entropy", UNIT)
WORST = ProblemSpec("worst_noise", MomentConstraints(mean=[0.0], correlation=[[1.0]]), noise_cov=[[1.0]])
EEI = ProblemSpec("eei", MomentConstraints(bound=[[4.0]]), mu=2.0, noise_cov=[[1.0]])
# Unit-variance Laplace: 1 + ln(2/√2) (scipy.stats.laplace(scale=2**-0.5).entropy()).
LAPLACE_H = 1.3465735902799727
GAUSS_H = 1.4189385332046727


class TestRandomFeasible:
    def test_hits_second_moment(self):
        f = random_feasible_density(UNIT, seed=42)
        assert moments(f).correlation[0, 0] == pytest.approx(1.0, abs=1e-8)

    def test_deterministic(self):
        a = random_feasible_density(UNIT, seed=7)
        b = random_feasible_density(UNIT, seed=7)
        assert np.array_equal(a.values, b.values)

    def test_nonnegative_support(self):
        f = random_feasible_density(UNIT, support="nonnegative", seed=3)
        assert f.grid.lower[0] == 0.0
        assert moments(f).correlation[0, 0] == pytest.approx(1.0, abs=1e-8)

    def test_bound_only_draws_covariance_under_bound(self):
        f = random_feasible_density(MomentConstraints(bound=[[2.0, 0.5], [0.5, 1.0]]), seed=1)
        gap = np.array([[2.0, 0.5], [0.5, 1.0]]) - moments(f).covariance
        assert np.linalg.eigvalsh(gap).min() >= -1e-8

    @given(st.integers(0, 100_000), st.sampled_from(["mixture", "tilted"]), st.floats(0.3, 4.0))
    def test_always_feasible(self, seed, generator, var):
        c = MomentConstraints(mean=[0.5], correlation=[[var + 0.25]])
        f = random_feasible_density(c, seed=seed, generator=generator)
        m = moments(f)
        assert abs(f.mass() - 1) <= 1e-8
        assert m.mean[0] == pytest.approx(0.5, abs=1e-8)
        assert m.correlation[0, 0] == pytest.approx(var + 0.25, abs=1e-8)


class TestCheckInequality:
    def test_self_comparison_is_zero(self):
        ext = extremal_density(MAXENT, problem_grid(MAXENT))
        assert check_inequality(MAXENT, ext).margin == pytest.approx(0.0, abs=1e-8)

    def test_laplace_loses_to_gaussian(self):
        grid = problem_grid(MAXENT)
        x = grid.axis(0)
        raw = -np.abs(x) * math.sqrt(2)
        f = tilt_to_moments(grid, raw, correlation=[[1.0]]).density
        margin = check_inequality(MAXENT, f).margin
        assert margin > 0.05
        assert margin == pytest.approx(GAUSS_H - LAPLACE_H, abs=2e-3)

    def test_worst_noise_bimodal(self):
        grid = problem_grid(WORST)
        x = grid.axis(0)
        base = np.logaddexp(-0.5 * ((x - 0.8) / 0.5) ** 2, -0.5 * ((x + 0.8) / 0.5) ** 2)
        f = tilt_to_moments(grid, base, mean=[0.0], correlation=[[1.0]]).density
        assert check_inequality(WORST, f).margin >= -1e-4

    def test_infeasible_candidate(self):
        grid = problem_grid(MAXENT)
        f = density_from_log(grid, -np.abs(grid.axis(0)))
        with pytest.raises(InfeasibleCandidate):
            check_inequality(MAXENT, f)

    def test_fisher_reports_worst_direction(self):
        p = ProblemSpec("min_fisher", MomentConstraints(mean=[0.0, 0.0], correlation=[[2.0, 1.0], [1.0, 2.0]]))
        grid = problem_grid(p)
        f = random_feasible_density(p.constraints, seed=0, grid=grid)
        m = check_inequality(p, f)
        assert m.direction is not None and m.margin >= -1e-3


class TestSweep:
    def test_zero_samples_rejected(self):
        with pytest.raises(InvalidInput):
            SweepConfig(MAXENT, 0)

    def test_unknown_generator(self):
        with pytest.raises(InvalidInput):
            SweepConfig(MAXENT, 3, generator="sobol")

    @pytest.mark.parametrize("problem", [MAXENT, EEI], ids=["max_entropy", "eei"])
    def test_two_hundred_samples(self, problem):
        t = margin_sweep(SweepConfig(problem, 200, seed=0))
        assert t.min_margin >= -1e-4
        assert not t.violated

    def test_zero_perturbation(self):
        t = margin_sweep(SweepConfig(MAXENT, 1, generator="perturbed_extremal", perturbation=0.0))
        assert abs(t.min_margin) <= 1e-8

    def test_deterministic_and_csv(self):
        cfg = SweepConfig(WORST, 5, seed=11)
        a, b = margin_sweep(cfg), margin_sweep(cfg)
        assert a.to_csv() == b.to_csv()
        lines = a.to_csv().strip().splitlines()
        assert lines[0].startswith("seed,")
        assert len(lines) >= 6

    @pytest.mark.parametrize("eps", [1e-2, 2e-2])
    def test_perturbed_extremal_stays_feasible(self, eps):
        p = MAXENT.with_grid(problem_grid(MAXENT))
        f = perturbed_extremal(p, eps, seed=4)
        assert moments(f).correlation[0, 0] == pytest.approx(1.0, abs=1e-8)

    @given(st.integers(0, 1000))
    def test_margins_nonnegative_for_nonnegative_fisher(self, seed):
        p = ProblemSpec("min_fisher", MomentConstraints(correlation=[[1.0]]), support="nonnegative")
        t = margin_sweep(SweepConfig(p, 2, seed=seed))
        assert t.min_margin >= -1e-3
