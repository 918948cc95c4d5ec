import numpy as np
import pytest

from engine.errors import GridMismatch, TruncationWarning
from engine.flows_kalman import MatrixPair
from engine.spectral_field import (
    GridSpec,
    SpectralField,
    apply_propagator,
    check_aliasing,
    derivative_field,
    mask_multiply,
    multi_factorial,
    windowed_l2,
)
from engine.symbol_engine import heat_family, ou_family


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(n=1, L=8.0, N=100)
    with pytest.raises(ValueError):
        GridSpec(n=4, L=8.0, N=16)
    with pytest.raises(ValueError):
        GridSpec(n=1, L=0.0, N=16)


def test_cell_centered_axis(line_grid):
    axis = line_grid.axis()
    assert axis[0] == pytest.approx(-8.0 + 0.125)
    assert axis[-1] == pytest.approx(8.0 - 0.125)
    assert line_grid.frequency_axis()[1] == pytest.approx(np.pi / 8.0)


def test_parseval(line_grid, rng):
    field = SpectralField.random(line_grid, rng)
    assert field.fourier_norm_sq() == pytest.approx(field.norm_sq(), rel=1e-12)


def test_normalized_gaussian(bump):
    assert bump.norm() == pytest.approx(1.0, rel=1e-12)


def test_propagator_identity_at_horizon(heat_line, bump):
    assert apply_propagator(heat_line, 1.0, bump) is bump


def test_heat_propagation_matches_exact_solution():
    grid = GridSpec(n=1, L=16.0, N=256)
    fam = heat_family(1, 1.0)
    u = apply_propagator(fam, 0.0, SpectralField.gaussian(grid, [0.0], 1.0))
    x = grid.axis()
    exact = np.exp(-x ** 2 / 6.0) / np.sqrt(3.0)
    assert np.max(np.abs(u.values - exact)) < 1e-10


def test_propagator_composes():
    grid = GridSpec(n=1, L=8.0, N=64)
    fam = heat_family(1, 1.0)
    g = SpectralField.gaussian(grid, [1.0], 0.7)
    twice = apply_propagator(fam, 0.5, apply_propagator(fam, 0.5, g))
    once = apply_propagator(fam, 0.0, g)
    assert np.allclose(twice.values, once.values, atol=1e-13)


def test_fourier_mode_decay():
    grid = GridSpec(n=1, L=8.0, N=64)
    mode = SpectralField.fourier_mode(grid, [3])
    out = apply_propagator(heat_family(1, 1.0), 0.5, mode)
    xi = 3 * np.pi / 8.0
    assert np.allclose(out.values, np.exp(-0.5 * xi ** 2) * mode.values, atol=1e-13)


def test_derivative_of_mode():
    grid = GridSpec(n=2, L=4.0, N=32)
    fam = ou_family(MatrixPair.example("kolmogorov"), 1.0)
    mode = SpectralField.fourier_mode(grid, [2, -1])
    xi = np.pi * np.array([2, -1]) / 4.0
    out = derivative_field(fam, 1.0, mode, 0, (1, 2))
    assert np.allclose(out.values, (1j * xi[0]) * (1j * xi[1]) ** 2 * mode.values, atol=1e-12)


def test_dimension_mismatch():
    grid = GridSpec(n=2, L=4.0, N=16)
    with pytest.raises(GridMismatch):
        apply_propagator(heat_family(1, 1.0), 0.5, SpectralField.zeros(grid))
    with pytest.raises(GridMismatch):
        SpectralField.zeros(grid) + SpectralField.zeros(GridSpec(n=2, L=5.0, N=16))


def test_aliasing_guard_warns():
    grid = GridSpec(n=1, L=8.0, N=16)
    with pytest.warns(TruncationWarning):
        margin = check_aliasing(heat_family(1, 0.01), grid)
    assert margin < 30.0


def test_masks(line_grid):
    ones = SpectralField(line_grid, np.ones(line_grid.shape))
    positive = lambda points: points[..., 0] > 0
    assert windowed_l2(ones, positive) == pytest.approx(8.0)
    assert mask_multiply(ones, positive).norm_sq() == pytest.approx(8.0)


def test_inner_product_conjugate_symmetric(line_grid, rng):
    u = SpectralField.random(line_grid, rng)
    v = SpectralField.random(line_grid, rng)
    assert u.inner(v) == pytest.approx(np.conj(v.inner(u)))


def test_multi_factorial():
    assert multi_factorial((2, 3)) == 12
    assert multi_factorial((0,)) == 1


@pytest.fixture(params=["heat", "kolmogorov"])
def plane_family(request):
    if request.param == "heat":
        return heat_family(2, 1.0)
    return ou_family(MatrixPair.example("kolmogorov"), 1.0)


def test_propagator_is_a_contraction(plane_family, rng):
    grid = GridSpec(n=2, L=8.0, N=32)
    for t in np.linspace(0.0, 1.0, 9):
        g = SpectralField.random(grid, rng)
        assert apply_propagator(plane_family, t, g).norm() <= g.norm() * (1 + 1e-12)


def test_propagated_norm_grows_towards_horizon(plane_family, rng):
    grid = GridSpec(n=2, L=8.0, N=32)
    g = SpectralField.random(grid, rng)
    norms = [apply_propagator(plane_family, t, g).norm() for t in np.linspace(0.0, 1.0, 21)]
    assert np.all(np.diff(norms) >= -1e-12 * norms[-1])
    assert norms[-1] == pytest.approx(g.norm())


def test_propagator_is_self_adjoint(plane_family, rng):
    grid = GridSpec(n=2, L=8.0, N=32)
    for t in (0.0, 0.3, 0.8):
        f = SpectralField.random(grid, rng)
        g = SpectralField.random(grid, rng)
        left = apply_propagator(plane_family, t, g).inner(f)
        right = g.inner(apply_propagator(plane_family, t, f))
        assert left == pytest.approx(right, rel=1e-10, abs=1e-12 * f.norm() * g.norm())
