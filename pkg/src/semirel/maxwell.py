"""Periodic elliptic solvers for the electric-limit potentials phi0, phi2 and A2.

    -lap phi0 = q rho0 / eps0
    -lap phi2 = q rho2 / eps0 - c^-2 d^2 phi0 / dt^2
    -lap A2   = q j / (eps0 c^2)

with A0 = 0 and B0 = 0. The zero Fourier mode is removed by a uniform
neutralizing background whose value is reported back to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fields as F
from .constants import PhysicalConstants
from .errors import NetChargeError

NET_CHARGE_TOL = 1e-10


def solve_poisson(source, grid: F.Grid, k: PhysicalConstants, prefactor=None,
                  neutralize=True, tol=NET_CHARGE_TOL):
    """Solve -lap u = prefactor * source on the periodic grid.

    ``prefactor`` defaults to q/eps0 for a scalar source and q/(eps0 c^2) for a
    vector source (leading axis of length 3, solved componentwise).

    Returns ``(u, mean)`` where ``mean`` is the subtracted source mean (a float
    for scalars, an array of three for vectors). With ``neutralize=False`` a
    source whose net integral ``|mean| * V`` exceeds ``tol`` raises
    :class:`NetChargeError`.
    """
    source = np.asarray(source, dtype=float)
    grid.check(source, "Poisson source")
    F.require_finite(source, "Poisson source")
    vector = source.ndim == 4
    if prefactor is None:
        prefactor = k.charge / k.eps0
        if vector:
            prefactor = prefactor / (k.c * k.c)
    mean = np.mean(source, axis=F.AXES)
    net = float(np.max(np.abs(mean))) * grid.volume
    if not neutralize and net > tol:
        raise NetChargeError(
            f"periodic Poisson source has net integral {net:.3e} > {tol:g} "
            "and no neutralizing background"
        )
    k2 = grid.k2.copy()
    k2[0, 0, 0] = 1.0
    sk = F.forward(source) / k2
    sk[..., 0, 0, 0] = 0.0
    u = prefactor * F.backward(sk).real
    return u, (mean if vector else float(mean))


def solve_phi0(rho0, grid, k, neutralize=True):
    return solve_poisson(rho0, grid, k, neutralize=neutralize)


def solve_A2(j, grid, k, neutralize=True):
    """Vector potential sourced by a probability current ``j``."""
    j = np.asarray(j, dtype=float)
    if j.ndim != 4 or j.shape[0] != 3:
        raise ValueError(f"current must have shape (3, nx, ny, nz), got {j.shape}")
    return solve_poisson(j, grid, k, neutralize=neutralize)


def solve_phi2(rho2, d2phi0_dt2, grid, k: PhysicalConstants, neutralize=True, tol=NET_CHARGE_TOL):
    """-lap phi2 = q rho2 / eps0 - c^-2 d^2 phi0/dt^2."""
    rhs = (k.charge / k.eps0) * np.asarray(rho2, dtype=float)
    if d2phi0_dt2 is not None:
        rhs = rhs - np.asarray(d2phi0_dt2, dtype=float) / (k.c * k.c)
    # the net check is on the charge, so compare in charge units
    u, mean = solve_poisson(rhs, grid, k, prefactor=1.0, neutralize=neutralize,
                            tol=tol * abs(k.charge) / k.eps0)
    return u, mean * k.eps0 / k.charge


@dataclass
class EMState:
    """Self-consistent potentials in the electric limit (A0 = B0 = 0)."""

    grid: F.Grid
    phi0: np.ndarray = None
    phi2: np.ndarray = None
    A2: np.ndarray = None
    dA2_dt: np.ndarray = None
    background_neutralized: bool = True
    subtracted_mean: float = 0.0
    time: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        g = self.grid
        if self.phi0 is None:
            self.phi0 = g.zeros()
        if self.phi2 is None:
            self.phi2 = g.zeros()
        if self.A2 is None:
            self.A2 = g.zeros(3)
        if self.dA2_dt is None:
            self.dA2_dt = g.zeros(3)

    @property
    def A0(self):
        return self.grid.zeros(3)

    @property
    def B0(self):
        return self.grid.zeros(3)

    @property
    def E0(self):
        return -F.gradient(self.phi0, self.grid)

    @property
    def E2(self):
        return -F.gradient(self.phi2, self.grid) - self.dA2_dt

    @property
    def B2(self):
        return F.curl(self.A2, self.grid)


def fields_from_potentials(state: EMState, dA2_dt=None):
    """(E0, E2, B2) with E0 = -grad phi0, E2 = -grad phi2 - dA2/dt, B2 = curl A2."""
    g = state.grid
    dA2_dt = g.zeros(3) if dA2_dt is None else dA2_dt
    E0 = -F.gradient(state.phi0, g)
    E2 = -F.gradient(state.phi2, g) - dA2_dt
    return E0, E2, F.curl(state.A2, g)


def _l2(f, grid):
    return float(np.sqrt(np.sum(f * f) * grid.cell_volume))


def gauge_residual(A2, dphi0_dt, grid, k: PhysicalConstants, floor=1e-300, current=None):
    """Normalized L2 norm of div A2 + c^-2 dphi0/dt.

    The norm is divided by |div A2| + |c^-2 dphi0/dt|. When the source
    ``current`` is given, the divisor is at least the size div A2 would have
    for that current at the box scale, (|q|/eps0 c^2) |j| L_max / 2 pi, so a
    static state whose two terms are both rounding noise reports ~0, not O(1).
    """
    div_a = F.divergence(A2, grid)
    term = np.asarray(dphi0_dt, dtype=float) / (k.c * k.c)
    denom = max(_l2(div_a, grid) + _l2(term, grid), floor)
    if current is not None:
        scale = abs(k.charge) / (k.eps0 * k.c * k.c) * _l2(np.asarray(current), grid) * max(grid.L) / (2 * np.pi)
        denom = max(denom, scale)
    return _l2(div_a + term, grid) / denom


def density_rate(orbs, dorbs):
    """d/dt sum_n w_n psi_n^dag psi_n from explicit orbital rates."""
    per = 2.0 * np.sum((np.conj(orbs.psi) * dorbs.psi).real, axis=-4)
    return orbs.weighted_sum(per)


def density_second_rate(orbs, dorbs, d2orbs):
    """d^2/dt^2 of the density: 2 Re(psi^dag psi'') + 2 |psi'|^2."""
    per = 2.0 * np.sum((np.conj(orbs.psi) * d2orbs.psi).real + np.abs(dorbs.psi) ** 2, axis=-4)
    return orbs.weighted_sum(per)


def dphi0_dt(orbs, dorbs, k: PhysicalConstants):
    """dphi0/dt from the Poisson solve of the density rate."""
    u, _ = solve_poisson(density_rate(orbs, dorbs), orbs.grid, k)
    return u


def d2phi0_dt2(orbs, dorbs, d2orbs, k: PhysicalConstants):
    u, _ = solve_poisson(density_second_rate(orbs, dorbs, d2orbs), orbs.grid, k)
    return u


def dphi_dt_from_snapshots(phi_before, phi_after, dt):
    """Central-difference fallback for diagnostics on stored snapshots."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return (np.asarray(phi_after) - np.asarray(phi_before)) / (2.0 * dt)
