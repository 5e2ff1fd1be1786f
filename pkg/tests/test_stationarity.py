import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from infovar import closed_forms as cf
from infovar.density_core import GridSpec, convolve, make_density
from infovar.errors import InvalidInput, SingularInnerMatrix
from infovar.problems import MomentConstraints, MultiplierSet, ProblemSpec, SolveReport
from infovar.stationarity import (
    dpi_equality_check,
    euler_lagrange_residual,
    fit_multipliers,
    kkt_check,
    second_variation_check,
)
from infovar.variational_solver import noise_density, solve

UNIT = GridSpec.centered([0.0], [[1.0]], 1024)
STD = cf.GaussianParams.centered([[1.0]])
MAXENT = ProblemSpec("max_entropy", MomentConstraints(correlation=[[1.0]]))
FISHER = ProblemSpec("min_fisher", MomentConstraints(mean=[0.0], correlation=[[1.0]]))
WORST = ProblemSpec("worst_noise", MomentConstraints(mean=[0.0], correlation=[[1.0]]), noise_cov=[[1.0]])


def eei(mu, bound):
    return ProblemSpec("eei", MomentConstraints(bound=[[bound]]), mu=mu, noise_cov=[[1.0]])


def gaussian_pair(var=1.0, points=1024):
    g = GridSpec.centered([0.0], [[var]], points)
    f = cf.gaussian_density(cf.GaussianParams.centered([[var]]), g)
    return f, convolve(f, noise_density([[1.0]], g.steps))


class TestResidual:
    def test_max_entropy_gaussian(self):
        f = cf.gaussian_density(STD, UNIT)
        assert euler_lagrange_residual(MAXENT, f, cf.max_entropy_multipliers(STD)).l2_norm <= 1e-6

    def test_max_entropy_uniform_fails(self):
        g = GridSpec((-1.0,), (1.0,), (512,))
        f = make_density(g, np.ones(512))
        assert euler_lagrange_residual(MAXENT, f, cf.max_entropy_multipliers(STD)).l2_norm > 0.1

    def test_min_fisher_gaussian(self):
        f = cf.gaussian_density(STD, UNIT)
        assert euler_lagrange_residual(FISHER, f, cf.min_fisher_multipliers(STD)).l2_norm <= 1e-4

    def test_worst_noise_pair_has_companion_field(self):
        f, fy = gaussian_pair()
        el = euler_lagrange_residual(WORST, f, cf.worst_noise_multipliers(STD, [[1.0]], fy.grid), fy)
        assert el.l2_norm <= 1e-5
        assert el.companion_residual is not None
        assert el.companion_residual.shape == fy.grid.shape

    def test_dimension_mismatch(self):
        f = cf.gaussian_density(cf.GaussianParams.centered(np.eye(2)), GridSpec.centered([0, 0], np.eye(2), 32))
        with pytest.raises(InvalidInput):
            euler_lagrange_residual(MAXENT, f, cf.max_entropy_multipliers(STD))

    @given(st.floats(0.2, 5.0))
    def test_gaussian_residual_vanishes_for_any_variance(self, var):
        p = cf.GaussianParams.centered([[var]])
        f = cf.gaussian_density(p, GridSpec.centered([0.0], [[var]], 1024))
        spec = ProblemSpec("max_entropy", MomentConstraints(correlation=[[var]]))
        assert euler_lagrange_residual(spec, f, cf.max_entropy_multipliers(p)).l2_norm <= 1e-6


class TestSecondVariation:
    @given(st.integers(0, 10_000))
    def test_max_entropy_positive(self, seed):
        rng = np.random.default_rng(seed)
        g = GridSpec((0.0,), (1.0,), (64,))
        f = make_density(g, rng.uniform(0.1, 1.0, 64))
        rep = second_variation_check(MAXENT, f)
        assert rep.min_eigenvalue_over_grid == pytest.approx(1 / f.values.max())
        assert rep.min_eigenvalue_over_grid > 0

    def test_worst_noise_rank_one(self):
        f, fy = gaussian_pair(points=256)
        rep = second_variation_check(WORST, f, fy)
        assert rep.min_eigenvalue_over_grid >= -1e-9
        assert rep.max_relative_determinant <= 1e-12

    def test_eei_gate(self):
        f, fy = gaussian_pair(points=256)
        p = eei(2.0, 4.0)
        good = cf.eei_multipliers(2.0, [[1.0]], [[1.0]], fy.grid)
        assert second_variation_check(p, f, fy, good).min_relative_eigenvalue >= -1e-9
        bad = MultiplierSet(**{**good.__dict__, "alpha1": 1 - 2.0 + 0.5})
        assert second_variation_check(p, f, fy, bad).min_relative_eigenvalue < 0


class TestKKT:
    def test_interior(self):
        p = eei(2.0, 4.0)
        k = kkt_check(p, solve(p))
        assert k.passes
        assert k.slackness_defect <= 1e-9
        assert "e0" not in k.active_set

    def test_boundary(self):
        p = eei(1.25, 2.0)
        r = solve(p)
        k = kkt_check(p, r)
        assert r.multipliers.theta > 0
        assert k.passes and "e0" in k.active_set

    def test_negative_theta_rejected(self):
        p = eei(2.0, 4.0)
        r = solve(p)
        bad = SolveReport(r.extremal, MultiplierSet(**{**r.multipliers.__dict__, "theta": -0.1,
                                                       "bound_multiplier": np.array([[-0.1]])}),
                          r.objective_value, r.el_residual_norm, r.constraint_violation, r.iterations,
                          r.converged, r.companion, r.notes, r.details)
        assert not kkt_check(p, bad).theta_nonneg

    def test_only_eei(self):
        with pytest.raises(InvalidInput):
            kkt_check(MAXENT, solve(MAXENT))


class TestFitMultipliers:
    def test_max_entropy(self):
        m = fit_multipliers(MAXENT, cf.gaussian_density(STD, UNIT))
        assert m.Lambda[0, 0] == pytest.approx(0.5, abs=1e-6)
        assert m.alpha == pytest.approx(-1 + 0.5 * math.log(2 * math.pi), abs=1e-6)

    def test_worst_noise(self):
        f, fy = gaussian_pair()
        m = fit_multipliers(WORST, f, fy)
        assert m.Gamma[0, 0] == pytest.approx(0.5, abs=1e-6)
        assert m.Theta[0, 0] == pytest.approx(-0.25, abs=1e-6)

    def test_eei(self):
        f, fy = gaussian_pair()
        m = fit_multipliers(eei(2.0, 4.0), f, fy)
        assert m.Gamma[0, 0] == pytest.approx(-1.0, abs=1e-6)
        assert euler_lagrange_residual(eei(2.0, 4.0), f, m, fy).l2_norm <= 1e-5

    def test_least_squares_fallback_for_non_gaussian(self):
        # A Laplace-shaped density is not stationary; the fit still returns multipliers.
        x = UNIT.axis(0)
        f = make_density(UNIT, np.exp(-np.sqrt(1 + x**2)))
        m = fit_multipliers(MAXENT, f)
        assert m.Lambda is not None and np.isfinite(m.alpha)


class TestDPI:
    def test_rank_deficient_example(self):
        assert dpi_equality_check(np.diag([1.0, 0.0]), np.eye(2), np.diag([1.0, 0.5])) <= 1e-12

    def test_scalar_failure(self):
        want = abs(0.5 * math.log(1 / 2) - 0.5 * math.log(1 / 3))
        assert dpi_equality_check([[1.0]], [[1.0]], [[0.5]]) == pytest.approx(want, abs=1e-12)

    def test_identical_noises(self):
        assert dpi_equality_check([[2.0]], [[1.0]], [[1.0]]) == 0.0

    def test_singular_inner_matrix(self):
        with pytest.raises(SingularInnerMatrix):
            dpi_equality_check(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2))

    @given(st.integers(0, 10_000))
    def test_symmetric_in_noises(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.normal(size=(2, 2)) for _ in range(3))
        sx, w1, w2 = a @ a.T, b @ b.T + 0.1 * np.eye(2), c @ c.T + 0.1 * np.eye(2)
        assert dpi_equality_check(sx, w1, w2) == pytest.approx(dpi_equality_check(sx, w2, w1), abs=1e-12)
