import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from semirel import fields as F
from semirel.errors import GridMismatchError, ImaginaryResidueError, NonFiniteError
from semirel.fields import SIGMA, Grid, OrbitalSet


@pytest.fixture
def grid():
    return Grid((12, 10, 8), (2 * np.pi, 4.0, 3.0))


def test_grid_broadcasts_scalars():
    g = Grid(8, 2.0)
    assert g.n == (8, 8, 8)
    assert g.L == (2.0, 2.0, 2.0)
    assert g.cell_volume == pytest.approx(8.0 / 512)


@pytest.mark.parametrize("n, L", [((0, 4, 4), 1.0), (4, (1.0, -1.0, 1.0)), (4, np.inf)])
def test_grid_rejects_bad_shapes(n, L):
    with pytest.raises(ValueError):
        Grid(n, L)


def test_nyquist_removed_only_from_first_derivatives():
    g = Grid(8, 2 * np.pi)
    assert g.kvec[0].ravel()[4] == 0.0
    assert g.k2[4, 0, 0] == pytest.approx(16.0)


def test_derivatives_of_trig_functions_are_exact(grid):
    x, y, z = grid.coords
    ky = 2 * np.pi / grid.L[1]
    f = np.sin(2 * x) * np.cos(ky * y)
    assert_allclose(F.partial(f, 0, grid), 2 * np.cos(2 * x) * np.cos(ky * y), atol=1e-12)
    assert_allclose(F.partial(f, 1, grid), -ky * np.sin(2 * x) * np.sin(ky * y), atol=1e-12)
    assert_allclose(F.laplacian(f, grid), -(4 + ky**2) * f, atol=1e-11)


def test_vector_identities_hold_on_noise(grid):
    rng = np.random.default_rng(1)
    phi = F.band_limited_noise(grid, (), rng)
    v = F.band_limited_noise(grid, (3,), rng)
    assert np.max(np.abs(F.curl(F.gradient(phi, grid), grid))) < 1e-12
    assert np.max(np.abs(F.divergence(F.curl(v, grid), grid))) < 1e-12
    assert_allclose(F.divergence(F.gradient(phi, grid), grid), F.laplacian(phi, grid), atol=1e-11)


def test_spinor_derivatives_match_separate_calls(grid):
    psi = F.band_limited_noise(grid, (2, 2), 3, complex_=True)
    grad, lap = F.spinor_derivatives(psi, grid)
    assert_allclose(grad, F.spinor_gradient(psi, grid), atol=1e-14)
    assert_allclose(lap, F.laplacian(psi, grid), atol=1e-12)


def test_sigma_helpers_match_explicit_matrices():
    rng = np.random.default_rng(2)
    g = Grid(4, 1.0)
    psi = rng.standard_normal((2, 4, 4, 4)) + 1j * rng.standard_normal((2, 4, 4, 4))
    v = rng.standard_normal((3, 4, 4, 4))
    expected = np.einsum("iab,i...,b...->a...", SIGMA, v, psi)
    assert_allclose(F.sigma_apply(v, psi), expected, atol=1e-14)
    w = rng.standard_normal((3, 2, 4, 4, 4)) + 1j * rng.standard_normal((3, 2, 4, 4, 4))
    assert_allclose(F.sigma_sum(w), np.einsum("iab,ib...->a...", SIGMA, w), atol=1e-14)
    spin = np.einsum("a...,iab,b...->i...", psi.conj(), SIGMA, psi)
    assert_allclose(F.spin_density(psi), spin.real, atol=1e-13)
    assert g.check(psi) is psi


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cross_and_dot_satisfy_vector_algebra(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.standard_normal((3, 3, 2, 2, 2))
    assert_allclose(F.cross(a, b), -F.cross(b, a))
    assert_allclose(F.dot(a, F.cross(a, b)), 0.0, atol=1e-12)
    assert_allclose(F.dot(a, F.cross(b, c)), F.dot(F.cross(a, b), c), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_parseval_and_spin_density_bound(seed):
    g = Grid((6, 4, 4), (1.0, 2.0, 3.0))
    psi = F.band_limited_noise(g, (2,), seed, fraction=1.0, complex_=True)
    assert F.norm2(psi, g) == pytest.approx(F.norm2_spectral(psi, g), rel=1e-13)
    s = F.spin_density(psi)
    rho = F.density_bilinear(psi, psi).real
    assert np.all(np.sqrt(F.dot(s, s)) <= rho * (1 + 1e-12))


def test_band_limited_noise_respects_cutoff(grid):
    f = F.band_limited_noise(grid, (), 5, fraction=0.25)
    spec = np.abs(F.forward(f))
    kx = np.abs(grid._k_full[0])
    cut = 0.25 * np.pi * grid.n[0] / grid.L[0]
    assert np.max(spec[kx > cut + 1e-9]) < 1e-10 * np.max(spec)
    assert np.max(np.abs(f)) == pytest.approx(1.0)


def test_as_real_checks_residue_against_scale():
    z = np.array([1.0 + 1e-10j])
    with pytest.raises(ImaginaryResidueError):
        F.as_real(z, "probe")
    assert F.as_real(np.array([1e-20 + 1e-22j]), scale=1.0)[0] == 1e-20


def test_nonfinite_and_grid_mismatch_are_rejected(grid):
    bad = grid.zeros()
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        F.gradient(bad, grid)
    with pytest.raises(GridMismatchError):
        F.laplacian(np.zeros((4, 4, 4)), grid)
    with pytest.raises(GridMismatchError):
        F.l2_inner(grid.zeros(2), grid.zeros(3), grid)


def test_orbital_set_validation_and_weights(grid):
    psi = np.ones((2, 2) + grid.n, dtype=complex)
    orbs = OrbitalSet(psi, grid, weights=[2.0, 0.5])
    assert len(orbs) == 2
    assert_allclose(orbs.norms(), 2 * grid.volume)
    assert orbs.weighted_sum(np.array([1.0, 4.0])) == pytest.approx(4.0)
    assert OrbitalSet(psi[0], grid).psi.shape == (1, 2) + grid.n
    with pytest.raises(ValueError):
        OrbitalSet(psi, grid, weights=[1.0])
    with pytest.raises(ValueError):
        OrbitalSet(psi, grid, weights=[1.0, -1.0])
    with pytest.raises(TypeError):
        F.as_orbitals(psi)
