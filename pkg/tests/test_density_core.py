import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from infovar import closed_forms as cf
from infovar.density_core import (
    GridSpec,
    convolution_grid,
    convolve,
    crop,
    density_from_log,
    from_bytes,
    from_csv,
    make_density,
    moments,
    reduce_singular,
    to_bytes,
    to_csv,
)
from infovar.errors import (
    AllZero,
    GridMismatch,
    InvalidInput,
    NegativeEntry,
    NoisePDViolation,
    NotPSD,
    ShapeMismatch,
    TruncationError,
)
from infovar.functionals import kl_divergence

UNIT = GridSpec((-8.0,), (8.0,), (1024,))


def gaussian(var=1.0, mean=0.0, grid=UNIT):
    return cf.gaussian_density(cf.GaussianParams([mean], [[var]]), grid)


def test_grid_rejects_bad_shapes():
    with pytest.raises(InvalidInput):
        GridSpec((0.0,), (1.0,), (4,))
    with pytest.raises(InvalidInput):
        GridSpec((1.0,), (0.0,), (64,))
    with pytest.raises(ShapeMismatch):
        GridSpec((0.0, 0.0), (1.0, 1.0), (64,))
    with pytest.raises(InvalidInput):
        GridSpec((0.0,) * 2, (1.0,) * 2, (8192, 8192))


def test_uniform_normalizes_to_one():
    g = GridSpec((0.0,), (1.0,), (100,))
    f = make_density(g, np.ones(100))
    assert np.allclose(f.values, 1.0)
    assert f.mass() == pytest.approx(1.0, abs=1e-14)


def test_normalized_input_is_unchanged():
    f = gaussian()
    assert np.allclose(make_density(UNIT, f.values).values, f.values, rtol=0, atol=1e-12)


def test_scaled_input_is_halved():
    f = gaussian()
    g = make_density(UNIT, 2 * f.values)
    assert np.allclose(g.values, f.values, atol=1e-14)
    assert abs(g.values.sum() * UNIT.cell_volume - 1) <= 1e-12


@pytest.mark.parametrize("raw, err", [(np.zeros(1024), AllZero), (-np.ones(1024), NegativeEntry)])
def test_make_density_rejects(raw, err):
    with pytest.raises(err):
        make_density(UNIT, raw)


def test_make_density_rejects_nan_and_shape():
    with pytest.raises(InvalidInput):
        make_density(UNIT, np.full(1024, np.nan))
    with pytest.raises(ShapeMismatch):
        make_density(UNIT, np.ones(10))


def test_values_are_read_only():
    f = gaussian()
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_gaussian_moments():
    m = moments(gaussian())
    assert abs(m.mean[0]) <= 1e-6
    assert m.correlation[0, 0] == pytest.approx(1.0, abs=1e-4)


def test_uniform_moments():
    g = GridSpec((0.0,), (1.0,), (1000,))
    m = moments(make_density(g, np.ones(1000)))
    assert m.mean[0] == pytest.approx(0.5, abs=1e-6)
    assert m.correlation[0, 0] == pytest.approx(1 / 3, abs=1e-6)


def test_bimodal_moments():
    x = UNIT.axis(0)
    f = make_density(UNIT, np.exp(-0.5 * (x + 2) ** 2) + np.exp(-0.5 * (x - 2) ** 2))
    m = moments(f)
    assert abs(m.mean[0]) <= 1e-6
    assert m.correlation[0, 0] == pytest.approx(5.0, abs=1e-3)


def test_gaussian_convolution_matches_sum_law():
    out = convolve(gaussian(), gaussian())
    ref = cf.gaussian_density(cf.GaussianParams([0.0], [[2.0]]), out.grid)
    assert kl_divergence(out, ref) <= 1e-6


def test_near_delta_is_identity():
    f = gaussian()
    h = UNIT.steps[0]
    delta = make_density(GridSpec((-8 * h,), (8 * h,), (16,)), np.eye(16)[7] + np.eye(16)[8])
    out = convolve(f, delta)
    # The two-cell delta shifts by half a cell; compare against the shifted reference.
    ref = cf.gaussian_density(cf.GaussianParams([0.0], [[1.0]]), out.grid)
    assert kl_divergence(out, ref) <= 1e-4


def test_uniform_self_convolution_is_triangle():
    g = GridSpec((0.0,), (1.0,), (400,))
    u = make_density(g, np.ones(400))
    out = convolve(u, u)
    y = out.grid.axis(0)
    tri = np.where(y < 1, y, 2 - y)
    assert np.abs(out.values - tri).max() <= 2 * g.steps[0]


def test_convolution_needs_matching_steps():
    with pytest.raises(GridMismatch):
        convolution_grid(UNIT, GridSpec((-1.0,), (1.0,), (64,)))


@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(-1.0, 1.0))
def test_convolution_is_symmetric(v1, v2, shift):
    g = GridSpec((-12.0,), (12.0,), (256,))
    a = cf.gaussian_density(cf.GaussianParams([shift], [[v1]]), g)
    b = density_from_log(g, -np.abs(g.axis(0)) / math.sqrt(v2))
    assert np.abs(convolve(a, b).values - convolve(b, a).values).max() <= 1e-12


@given(st.lists(st.floats(0.0, 10.0), min_size=16, max_size=64).filter(lambda v: sum(v) > 0))
def test_mass_is_conserved(raw):
    g = GridSpec((0.0,), (1.0,), (len(raw),))
    f = make_density(g, raw)
    assert abs(f.mass() - 1.0) <= 1e-8
    h = make_density(g, np.ones(len(raw)))
    assert abs(convolve(f, h).mass() - 1.0) <= 1e-8


def test_refinement_is_second_order():
    # f ∝ (1 − x²)² on [−1, 1] has E[X²] = 1/7; midpoint quadrature error is O(h²).
    errors = []
    for n in (32, 64, 128):
        g = GridSpec((-1.0,), (1.0,), (n,))
        f = make_density(g, (1 - g.axis(0) ** 2) ** 2)
        errors.append(abs(moments(f).correlation[0, 0] - 1 / 7))
    assert errors[1] <= errors[0] / 4 * 1.05
    assert errors[2] <= errors[1] / 4 * 1.05


def test_crop_keeps_mass_and_refuses_truncation():
    f = gaussian()
    small = crop(f, [-7.0], [7.0])
    assert small.grid.points[0] < 1024
    assert abs(small.mass() - 1) <= 1e-12
    with pytest.raises(TruncationError):
        crop(f, [-1.0], [1.0])


def test_byte_and_csv_round_trip():
    f = cf.gaussian_density(cf.GaussianParams([0.0, 0.0], [[2.0, 1.0], [1.0, 2.0]]),
                            GridSpec((-6.0, -6.0), (6.0, 6.0), (32, 32)))
    assert np.array_equal(from_bytes(to_bytes(f)).values, f.values)
    back = from_csv(to_csv(f), f.grid)
    assert np.array_equal(back.values, f.values)
    with pytest.raises(InvalidInput):
        from_bytes(b"nope" + to_bytes(f)[4:])


def test_csv_on_wrong_grid():
    f = gaussian()
    with pytest.raises((ShapeMismatch, GridMismatch)):
        from_csv(to_csv(f), GridSpec((-8.0,), (8.0,), (512,)))
    with pytest.raises(GridMismatch):
        from_csv(to_csv(f), GridSpec((-9.0,), (9.0,), (1024,)))


class TestReduceSingular:
    def test_nonsingular_passthrough(self):
        r = reduce_singular(np.eye(2), np.eye(2))
        assert r.effective_dim == 2
        assert np.allclose(r.whitener, np.eye(2))
        assert np.allclose(r.reduced_noise_cov, np.eye(2))

    def test_rank_one(self):
        r = reduce_singular([[1, 1], [1, 1]], np.eye(2))
        assert r.effective_dim == 1
        full = r.whitener @ r.projector.T @ np.eye(2) @ r.projector @ r.whitener.T
        assert np.linalg.norm(full[:1, 1:]) <= 1e-12

    def test_schur_complement(self):
        r = reduce_singular(np.diag([1.0, 0.0]), [[2, 1], [1, 2]])
        assert r.effective_dim == 1
        assert r.reduced_noise_cov[0, 0] == pytest.approx(1.5, abs=1e-12)

    def test_errors(self):
        with pytest.raises(NotPSD):
            reduce_singular(np.diag([1.0, -1.0]), np.eye(2))
        with pytest.raises(NoisePDViolation):
            reduce_singular(np.eye(2), np.diag([1.0, 0.0]))
        with pytest.raises(ShapeMismatch):
            reduce_singular(np.eye(2), np.eye(3))

    @given(st.integers(0, 10_000), st.integers(1, 3))
    def test_block_structure(self, seed, rank):
        rng = np.random.default_rng(seed)
        n = 3
        a = rng.normal(size=(n, rank))
        omega_x = a @ a.T
        b = rng.normal(size=(n, n))
        omega_w = b @ b.T + 0.5 * np.eye(n)
        r = reduce_singular(omega_x, omega_w)
        assert r.effective_dim == rank
        full = r.whitener @ r.projector.T @ omega_w @ r.projector @ r.whitener.T
        m = r.effective_dim
        assert np.linalg.norm(full[:m, m:]) <= 1e-10 * np.linalg.norm(omega_w)
