import numpy as np
import pytest
from numpy.testing import assert_allclose

from semirel import checks
from semirel import fields as F
from semirel import maxwell as MX
from semirel import sources as S
from semirel.config import parse_config
from semirel.constants import PhysicalConstants
from semirel.dynamics import gaussian_packet, init_scenario, rk4_step, run_selfconsistent
from semirel.errors import NetChargeError
from semirel.fields import Grid, OrbitalSet
from semirel.hamiltonian import Potentials, apply_h

K = PhysicalConstants()


@pytest.fixture
def grid():
    return Grid(16, 2 * np.pi)


def test_cosine_source_in_atomic_units(grid):
    x = grid.coords[0]
    phi, mean = MX.solve_poisson(np.cos(x), grid, K)
    assert_allclose(phi, -4 * np.pi * np.cos(x), atol=1e-12)
    assert abs(mean) < 1e-15


def test_zero_sources_give_zero_potentials(grid):
    assert not np.any(MX.solve_poisson(grid.zeros(), grid, K)[0])
    phi2, _ = MX.solve_phi2(grid.zeros(), grid.zeros(), grid, K)
    assert not np.any(phi2)


def test_vector_source_uses_magnetic_prefactor(grid):
    x = grid.coords[0]
    j = np.stack([np.cos(x), grid.zeros(), np.sin(2 * x)])
    A, _ = MX.solve_A2(j, grid, K)
    pre = K.charge / (K.eps0 * K.c**2)
    assert_allclose(A[0], pre * np.cos(x), atol=1e-15)
    assert_allclose(A[2], pre * np.sin(2 * x) / 4, atol=1e-15)
    with pytest.raises(ValueError):
        MX.solve_A2(grid.zeros(), grid, K)


def test_gaussian_charge_matches_free_space_potential():
    assert checks.gaussian_poisson_error() <= 1e-5


def test_neutralizing_background_is_reported_or_refused(grid):
    src = 1.0 + np.cos(grid.coords[1])
    phi, mean = MX.solve_poisson(src, grid, K)
    assert mean == pytest.approx(1.0)
    assert_allclose(phi, -4 * np.pi * np.cos(grid.coords[1]), atol=1e-12)
    with pytest.raises(NetChargeError):
        MX.solve_poisson(src, grid, K, neutralize=False)
    with pytest.raises(NetChargeError):
        MX.solve_phi2(src, None, grid, K, neutralize=False)


def test_laplacian_round_trip_self_adjointness_and_linearity(grid):
    rng = np.random.default_rng(0)
    f = F.band_limited_noise(grid, (), rng, fraction=1.0)
    g = F.band_limited_noise(grid, (), rng, fraction=1.0)
    f -= f.mean()
    g -= g.mean()
    inv = lambda s: MX.solve_poisson(s, grid, K, prefactor=1.0)[0]
    assert np.max(np.abs(-F.laplacian(inv(f), grid) - f)) <= 1e-11
    lhs = F.integrate(f * inv(g), grid)
    rhs = F.integrate(inv(f) * g, grid)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)
    assert F.integrate(f * inv(f), grid) > 0
    assert_allclose(inv(2 * f - 3 * g), 2 * inv(f) - 3 * inv(g), atol=1e-12)


def test_phi2_cosine_and_retardation_term(grid):
    x = grid.coords[0]
    k = PhysicalConstants(c=2.0)
    phi2, _ = MX.solve_phi2(np.cos(x), None, grid, k)
    assert_allclose(phi2, -4 * np.pi * np.cos(x), atol=1e-12)
    phi2, _ = MX.solve_phi2(grid.zeros(), np.cos(2 * x), grid, k)
    assert_allclose(phi2, -np.cos(2 * x) / (4 * 4), atol=1e-14)


def test_phi2_from_bound_charge_of_gaussian_matches_polarization_chain():
    grid = Grid(40, 20.0)
    k = PhysicalConstants(c=3.0)
    orbs = OrbitalSet(gaussian_packet(grid, 1.0, (2 * np.pi / 20, 0, 0), (1, 1, 0)), grid)
    P = S.polarization_spin(orbs, None, k) + S.polarization_darwin(orbs, k)
    rho2 = S.rho_full(orbs, None, k) - S.rho_free(orbs)
    phi2, _ = MX.solve_phi2(rho2, None, grid, k)
    # -lap phi2 = -div P / eps0  =>  phi2 = div u / eps0 with -lap u = -P
    u, _ = MX.solve_poisson(P, grid, k, prefactor=-1.0)
    direct = F.divergence(u, grid) / k.eps0
    assert np.max(np.abs(phi2 - direct)) <= 1e-10 * np.max(np.abs(direct))


def test_fields_from_potentials(grid):
    x = grid.coords[0]
    state = MX.EMState(grid, phi0=np.cos(x), A2=np.stack([grid.zeros(), np.sin(x), grid.zeros()]))
    E0, E2, B2 = MX.fields_from_potentials(state)
    assert_allclose(E0[0], np.sin(x), atol=1e-13)
    assert_allclose(B2[2], np.cos(x), atol=1e-13)
    assert not np.any(E2)
    assert not np.any(state.A0) and not np.any(state.B0)
    assert_allclose(state.E0, E0)
    rng = np.random.default_rng(1)
    B = MX.EMState(grid, A2=F.band_limited_noise(grid, (3,), rng)).B2
    assert np.max(np.abs(F.divergence(B, grid))) <= 1e-12


def test_gauge_residual_of_manufactured_pair(grid):
    rng = np.random.default_rng(2)
    chi = F.band_limited_noise(grid, (), rng)
    k = PhysicalConstants(c=3.0)
    A2 = F.gradient(chi, grid)
    dphi = -k.c**2 * F.laplacian(chi, grid)
    assert MX.gauge_residual(A2, dphi, grid, k) <= 1e-12
    assert MX.gauge_residual(grid.zeros(3), grid.zeros(), grid, k) == 0.0


def test_gauge_residual_vanishes_for_static_uniform_current():
    cfg, _ = parse_config(
        "grid.n = 8\ngrid.L = 6.283185307179586\nscenario.name = plane_wave\nscenario.k = 1 0 0\n"
    )
    state, _ = init_scenario(cfg)
    assert state.field_info["gauge_residual"] <= 1e-10


def _gaussian_config(n, L=20.0):
    return parse_config(
        f"grid.n = {n}\ngrid.L = {L}\nscenario.name = gaussian_packet\nscenario.sigma = 1.0\n"
        "scenario.k0 = 0.6283185307179586 0.3141592653589793 0\nscenario.spin = 1 1 0\n"
    )[0]


def test_gauge_residual_decreases_under_refinement():
    residuals = [init_scenario(_gaussian_config(n))[0].field_info["gauge_residual"] for n in (40, 44, 48)]
    assert residuals[0] > residuals[1] > residuals[2]
    assert residuals[-1] < 1e-12


def test_gauge_residual_stays_bounded_while_evolving():
    cfg = _gaussian_config(24, L=12.0).replace(steps=10, dt=0.01, output_cadence=1)
    _, rows = run_selfconsistent(cfg)
    assert max(r["gauge_residual"] for r in rows) < 1e-5


def test_dphi0_dt_agrees_with_snapshot_difference():
    grid = Grid(16, 2 * np.pi)
    rng = np.random.default_rng(4)
    orbs = checks.random_orbitals(grid, rng)
    pot = checks.random_potentials(grid, rng, da_scale=0.0)
    rhs = lambda t, p: -1j * apply_h(p, pot, K)
    dt = 1e-3
    before = rk4_step(orbs.psi, 0.0, -dt, rhs)
    after = rk4_step(orbs.psi, 0.0, dt, rhs)
    phi = lambda p: MX.solve_phi0(S.rho_free(orbs.like(p)), grid, K)[0]
    fd = MX.dphi_dt_from_snapshots(phi(before), phi(after), dt)
    exact = MX.dphi0_dt(orbs, orbs.like(rhs(0.0, orbs.psi)), K)
    assert np.max(np.abs(fd - exact)) <= 1e-5 * np.max(np.abs(exact))
    with pytest.raises(ValueError):
        MX.dphi_dt_from_snapshots(phi(before), phi(after), 0.0)


def test_second_density_rate_matches_difference_of_first_rates():
    grid = Grid(12, 2 * np.pi)
    rng = np.random.default_rng(5)
    orbs = checks.random_orbitals(grid, rng)
    pot = Potentials(grid, phi=F.band_limited_noise(grid, (), rng, 1 / 4))
    rhs = lambda p: -1j * apply_h(p, pot, K)
    d1 = orbs.like(rhs(orbs.psi))
    d2 = orbs.like(rhs(d1.psi))
    exact = MX.density_second_rate(orbs, d1, d2)
    dt = 1e-4
    rate = lambda p: MX.density_rate(orbs.like(p), orbs.like(rhs(p)))
    fwd = rk4_step(orbs.psi, 0.0, dt, lambda t, p: rhs(p))
    bwd = rk4_step(orbs.psi, 0.0, -dt, lambda t, p: rhs(p))
    fd = (rate(fwd) - rate(bwd)) / (2 * dt)
    assert np.max(np.abs(fd - exact)) <= 1e-6 * np.max(np.abs(exact))
