import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from semirel import fields as F
from semirel.checks import random_potentials
from semirel.constants import PhysicalConstants
from semirel.errors import GridMismatchError
from semirel.fields import Grid
from semirel.hamiltonian import (
    HamiltonianOptions, Potentials, apply_h, apply_h_minimal, energy_expectation,
    hamiltonian_terms, hermiticity_defect, soft_core_coulomb,
)

K = PhysicalConstants()


@pytest.fixture
def grid():
    return Grid(12, 2 * np.pi)


def up_plane_wave(grid, kx):
    x = grid.coords[0]
    psi = grid.zeros(2, dtype=complex)
    psi[0] = np.exp(1j * kx * x)
    return psi


def test_free_plane_wave_is_an_eigenstate(grid):
    psi = up_plane_wave(grid, 3)
    hpsi = apply_h(psi, Potentials(grid), K)
    assert_allclose(hpsi, 4.5 * psi, atol=1e-12)


def test_rest_mass_is_opt_in(grid):
    psi = up_plane_wave(grid, 1)
    k = PhysicalConstants(c=3.0)
    with_rest = apply_h(psi, Potentials(grid), k, HamiltonianOptions(include_rest_mass=True))
    assert_allclose(with_rest - apply_h(psi, Potentials(grid), k), 9.0 * psi, atol=1e-12)


def test_zeeman_splitting_in_uniform_field(grid):
    psi = grid.zeros(2, dtype=complex)
    psi[0] = 1.0
    pot = Potentials(grid, direct_B=np.array([0.0, 0.0, 2.0]))
    # -(q hbar / 2m) B sigma_z with q = -1 gives +B/2 on spin up
    assert_allclose(apply_h(psi, pot, K), 1.0 * psi, atol=1e-14)


def test_darwin_term_follows_laplacian_of_phi(grid):
    x = grid.coords[0]
    k = PhysicalConstants(c=2.0)
    psi = up_plane_wave(grid, 0)
    terms = hamiltonian_terms(psi, Potentials(grid, phi=np.cos(x)), k)
    expected = (k.charge / (8 * 4.0)) * (-np.cos(x)) * psi
    assert_allclose(terms["darwin"], expected, atol=1e-13)


def test_spin_orbit_plane_wave_oracle(grid):
    _, y, _ = grid.coords
    k = PhysicalConstants(c=2.0)
    kx = 2
    psi = up_plane_wave(grid, kx)
    terms = hamiltonian_terms(psi, Potentials(grid, phi=np.sin(y)), k)
    # (q hbar / 4 m^2 c^2) sigma . (grad phi x p) with grad phi x p = -kx cos(y) z_hat
    expected = (k.charge / 16.0) * (-kx * np.cos(y)) * psi
    assert_allclose(terms["soc"], expected, atol=1e-12)


def test_minimal_model_matches_independent_implementation(grid):
    rng = np.random.default_rng(4)
    k = PhysicalConstants(c=1.7)
    pot = random_potentials(grid, rng, da_scale=0.0)
    psi = F.band_limited_noise(grid, (3, 2), rng, complex_=True)
    opt = HamiltonianOptions(model="minimal")
    a = apply_h(psi, pot, k, opt)
    b = apply_h_minimal(psi, pot.phi, pot.A, k, opt, grid=grid)
    assert np.max(np.abs(a - b)) < 1e-13 * np.max(np.abs(a))


def test_second_order_terms_scale_as_inverse_c_squared(grid):
    rng = np.random.default_rng(5)
    pot = random_potentials(grid, rng)
    psi = F.band_limited_noise(grid, (2,), rng, complex_=True)
    t1 = hamiltonian_terms(psi, pot, PhysicalConstants(c=3.0))
    t2 = hamiltonian_terms(psi, pot, PhysicalConstants(c=6.0))
    for name in ("darwin", "soc"):
        assert_allclose(t1[name], 4.0 * t2[name], rtol=1e-12, atol=1e-15)
    for name in ("potential", "kinetic", "zeeman"):
        assert_allclose(t1[name], t2[name], rtol=1e-14, atol=1e-15)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1.0, 2.0, 137.035999]))
def test_full_hamiltonian_is_hermitian(seed, c):
    g = Grid(8, 2 * np.pi)
    pot = random_potentials(g, np.random.default_rng(seed))
    assert hermiticity_defect(pot, PhysicalConstants(c=c), trials=3, rng=seed) < 1e-12


def test_unsymmetrized_spin_orbit_ordering_is_not_hermitian():
    g = Grid(8, 2 * np.pi)
    pot = random_potentials(g, np.random.default_rng(6))
    k = PhysicalConstants(c=1.0)
    unsymmetrized = hermiticity_defect(pot, k, HamiltonianOptions(soc_form="unsymmetrized"), trials=5)
    hermitian = hermiticity_defect(pot, k, trials=5)
    assert hermitian < 1e-13
    assert unsymmetrized > 1e-4


def test_energy_expectation_weights_orbitals(grid):
    psi = np.stack([up_plane_wave(grid, 1), up_plane_wave(grid, 2)])
    psi /= np.sqrt(grid.volume)
    e = energy_expectation(psi, Potentials(grid), K, weights=[2.0, 1.0])
    assert e == pytest.approx(2 * 0.5 + 2.0, rel=1e-13)
    value, residue = energy_expectation(psi[0], Potentials(grid), K, return_residue=True)
    assert value == pytest.approx(0.5, rel=1e-13)
    assert residue < 1e-14


def test_soft_core_coulomb_peak_and_minimum_image():
    g = Grid(16, 8.0)
    phi = soft_core_coulomb(g, K, [(0.0, 0.0, 0.0)], [2.0], softening=0.5)
    assert phi[0, 0, 0] == pytest.approx(2.0 / 0.5)
    assert phi[1, 0, 0] == pytest.approx(phi[-1, 0, 0])


def test_invalid_options_and_shapes(grid):
    with pytest.raises(ValueError):
        HamiltonianOptions(model="relativistic")
    with pytest.raises(ValueError):
        HamiltonianOptions(soc_form="other")
    with pytest.raises((GridMismatchError, ValueError)):
        apply_h(np.zeros((2, 4, 4, 4), dtype=complex), Potentials(grid), K)
