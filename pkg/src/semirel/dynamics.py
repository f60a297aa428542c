"""Time integration of the extended Pauli equation with self-consistent fields.

Three model variants are supported:

* ``minimal``  reduced Hamiltonian, phi0 from rho0, A2 from j0 + j2_free
* ``internal`` full Hamiltonian with phi0 + phi2 and A2 from j0 + j2
* ``external`` as ``internal`` plus a uniform laser vector potential and, on
  request, A2 removed from the spin-orbit term

Orbitals are advanced with classical RK4 and are never renormalized.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sint

from . import fields as F
from . import maxwell as MX
from . import sources as S
from .constants import PhysicalConstants
from .errors import InstabilityError, NonFiniteError
from .fields import Grid, OrbitalSet
from .hamiltonian import HamiltonianOptions, Potentials, apply_h, energy_expectation, soft_core_coulomb

VARIANTS = ("minimal", "internal", "external")
SCENARIOS = (
    "gaussian_packet", "gaussian_pair", "plane_wave", "uniform_spin_sample", "atom", "two_orbital_atom",
)
SC_MODES = ("lagged", "one-corrector")

# RK4 stability interval on the imaginary axis is |z| <= 2 sqrt(2).
RK4_IMAG_LIMIT = 2.0 * math.sqrt(2.0)


# --- configuration -------------------------------------------------------------------


@dataclass
class ScenarioParams:
    name: str = "gaussian_packet"
    sigma: float = 1.0
    k0: tuple = (0.0, 0.0, 0.0)
    spin: tuple = (0.0, 0.0, 1.0)
    center: tuple | None = None
    k: tuple = (1.0, 0.0, 0.0)
    direct_b: tuple | None = None
    kick: tuple = (0.0, 0.0, 0.0)
    separation: float = 3.0
    Z: float = 1.0
    relax_steps: int = 800
    relax_dtau: float = 0.05


@dataclass
class LaserParams:
    amplitude: float = 0.0
    omega: float = 0.057
    duration: float = 0.0
    polarization: tuple = (1.0, 0.0, 0.0)

    @property
    def active(self):
        return self.amplitude != 0.0 and self.duration > 0.0


@dataclass
class NucleiParams:
    positions: tuple = ()
    charges: tuple = ()
    softening: float = 0.3


@dataclass
class SimulationConfig:
    grid_n: tuple = (32, 32, 32)
    grid_L: tuple = (16.0, 16.0, 16.0)
    c: float = 137.035999
    variant: str = "minimal"
    interactions: bool = True
    neglect_a2_second_order: bool = False
    include_darwin: bool = True
    include_soc: bool = True
    include_zeeman: bool = True
    dt: float = 1e-3
    steps: int = 100
    selfconsistency: str = "lagged"
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    laser: LaserParams = field(default_factory=LaserParams)
    nuclei: NucleiParams = field(default_factory=NucleiParams)
    output_dir: str = "output"
    output_cadence: int = 10
    output_snapshots: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")
        if self.selfconsistency not in SC_MODES:
            raise ValueError(f"unknown self-consistency mode {self.selfconsistency!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.output_cadence < 1:
            raise ValueError("output cadence must be >= 1")
        if len(self.nuclei.positions) != len(self.nuclei.charges):
            raise ValueError("one charge per nuclear position required")

    @property
    def grid(self) -> Grid:
        return Grid(self.grid_n, self.grid_L)

    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(c=self.c)

    def hamiltonian_options(self) -> HamiltonianOptions:
        return HamiltonianOptions(
            include_darwin=self.include_darwin,
            include_soc=self.include_soc,
            include_zeeman=self.include_zeeman,
            model="minimal" if self.variant == "minimal" else "full",
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def check_time_step(cfg: SimulationConfig, grid: Grid | None = None):
    """Warn when dt * hbar kmax^2 / 2m approaches the RK4 stability limit."""
    grid = grid or cfg.grid
    k = cfg.constants
    z = cfg.dt * k.hbar * float(grid.k2.max()) / (2 * k.mass)
    if z > 0.9 * RK4_IMAG_LIMIT:
        warnings.warn(
            f"dt*hbar*kmax^2/2m = {z:.3f} is close to the RK4 limit {RK4_IMAG_LIMIT:.3f}",
            RuntimeWarning,
            stacklevel=2,
        )
    return z


# --- external fields ---------------------------------------------------------------


def laser_vector_potential(laser: LaserParams, t: float):
    """(A, dA/dt) of the sin^2-enveloped dipole pulse, as 3-vectors."""
    e = np.asarray(laser.polarization, dtype=float)
    norm = np.linalg.norm(e)
    if norm > 0:
        e = e / norm
    if not laser.active or t < 0.0 or t > laser.duration:
        return np.zeros(3), np.zeros(3)
    a0, w, tau = laser.amplitude, laser.omega, laser.duration
    s = math.sin(math.pi * t / tau)
    a = a0 * s * s * math.cos(w * t)
    da = a0 * ((math.pi / tau) * math.sin(2 * math.pi * t / tau) * math.cos(w * t)
               - w * s * s * math.sin(w * t))
    return a * e, da * e


def fluence(laser: LaserParams):
    """Time integral of |E|^2 = |dA/dt|^2 over the pulse (adaptive quadrature)."""
    if not laser.active:
        return 0.0
    fn = lambda t: float(np.sum(laser_vector_potential(laser, t)[1] ** 2))
    n_cycles = max(1, int(laser.omega * laser.duration / (2 * math.pi)) + 1)
    val, _ = sint.quad(fn, 0.0, laser.duration, limit=200 * n_cycles, epsabs=0.0, epsrel=1e-13)
    return float(val)


def nuclear_potential(cfg: SimulationConfig, grid: Grid | None = None):
    grid = grid or cfg.grid
    nuc = cfg.nuclei
    if len(nuc.positions) == 0:
        return grid.zeros()
    return soft_core_coulomb(grid, cfg.constants, nuc.positions, nuc.charges, nuc.softening)


def external_fields(cfg: SimulationConfig, t: float, grid: Grid | None = None, phi_ext=None):
    """(phi_ext, A_ext, dA_ext_dt) on the grid at time ``t``."""
    grid = grid or cfg.grid
    phi = nuclear_potential(cfg, grid) if phi_ext is None else phi_ext
    a, da = laser_vector_potential(cfg.laser, t)
    ones = np.ones(grid.n)
    return phi, a[:, None, None, None] * ones, da[:, None, None, None] * ones


# --- initial states ------------------------------------------------------------------


def spinor_along(direction):
    """Two-component spinor whose spin expectation points along ``direction``."""
    n = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("spin direction must be non-zero")
    n = n / norm
    theta = math.acos(max(-1.0, min(1.0, n[2])))
    phase = math.atan2(n[1], n[0])
    return np.array([math.cos(theta / 2), np.exp(1j * phase) * math.sin(theta / 2)])


def min_image(grid: Grid, center):
    out = []
    for axis in range(3):
        d = grid.coords[axis] - center[axis]
        L = grid.L[axis]
        out.append(d - L * np.round(d / L))
    return out


def _normalize(psi, grid):
    return psi / math.sqrt(F.norm2(psi, grid))


def gaussian_packet(grid: Grid, sigma, k0=(0, 0, 0), spin=(0, 0, 1), center=None):
    """exp(-|r - r0|^2 / 4 sigma^2 + i k0.(r - r0)) chi, normalized.

    A grid-commensurate ``k0`` uses a globally periodic phase; otherwise the
    phase is taken over minimum-image displacements.
    """
    if sigma < 2 * max(grid.spacing[a] for a in range(3) if grid.n[a] > 1):
        raise ValueError(f"sigma={sigma} is below two grid cells; refine the grid")
    center = grid.center if center is None else center
    d = min_image(grid, center)
    r2 = sum(di * di for di, n in zip(d, grid.n) if n > 1)
    if _is_commensurate(grid, k0):
        d_phase = [grid.coords[a] - center[a] for a in range(3)]
    else:
        d_phase = d
    phase = sum(ki * di for ki, di, n in zip(k0, d_phase, grid.n) if n > 1)
    f = np.exp(-r2 / (4 * sigma * sigma) + 1j * phase)
    chi = spinor_along(spin)
    return _normalize(chi[:, None, None, None] * f, grid)


def _is_commensurate(grid: Grid, k):
    return all(
        abs(m - round(m)) <= 1e-9 for m in (k[a] * grid.L[a] / (2 * math.pi) for a in range(3))
    )


def _commensurate(grid: Grid, k, name):
    for axis in range(3):
        m = k[axis] * grid.L[axis] / (2 * math.pi)
        if abs(m - round(m)) > 1e-9:
            raise ValueError(f"{name} component {axis} = {k[axis]} is not a grid wavenumber")


def plane_wave(grid: Grid, k=(1, 0, 0), spin=(0, 0, 1)):
    _commensurate(grid, k, "plane-wave k")
    x = grid.coords
    f = np.exp(1j * sum(k[a] * x[a] for a in range(3))) / math.sqrt(grid.volume)
    return spinor_along(spin)[:, None, None, None] * f


def uniform_spinor(grid: Grid, spin=(1, 0, 0)):
    return spinor_along(spin)[:, None, None, None] * np.ones(grid.n) / math.sqrt(grid.volume)


@dataclass
class RelaxationResult:
    psi: np.ndarray
    energy: float
    energy_change: float
    history: list


def nonrelativistic_energy(psi, grid, phi, k: PhysicalConstants):
    kin = -(k.hbar**2 / (2 * k.mass)) * F.laplacian(psi, grid)
    val = F.l2_inner(psi, kin + k.charge * phi * psi, grid) / F.norm2(psi, grid)
    return float(val.real)


def relax_ground_state(grid: Grid, phi, k: PhysicalConstants, psi0, dtau=0.02, steps=400):
    """Imaginary-time Strang splitting for p^2/2m + q phi, normalized every step."""
    if dtau <= 0 or steps < 1:
        raise ValueError("relaxation needs dtau > 0 and at least one step")
    half_v = np.exp(-0.5 * dtau * k.charge * phi / k.hbar)
    kin = np.exp(-dtau * k.hbar * grid.k2 / (2 * k.mass))
    psi = _normalize(np.asarray(psi0, dtype=complex), grid)
    history = []
    for _ in range(steps):
        psi = half_v * F.backward(kin * F.forward(half_v * psi))
        psi = _normalize(psi, grid)
        history.append(nonrelativistic_energy(psi, grid, phi, k))
    change = abs(history[-1] - history[-2]) if len(history) > 1 else float("inf")
    return RelaxationResult(psi, history[-1], change, history)


def _atom_setup(cfg, grid):
    nuc = cfg.nuclei
    if len(nuc.positions) == 0:
        nuc = NucleiParams(positions=(tuple(grid.center),), charges=(cfg.scenario.Z,), softening=nuc.softening)
        cfg = cfg.replace(nuclei=nuc)
    return cfg, nuclear_potential(cfg, grid)


def _relaxed_orbital(cfg, grid, phi):
    sc = cfg.scenario
    center = np.mean(np.atleast_2d(cfg.nuclei.positions), axis=0)
    seed = gaussian_packet(grid, max(sc.sigma, 2.01 * max(grid.spacing)), spin=(0, 0, 1), center=center)
    res = relax_ground_state(grid, phi, cfg.constants, seed[0], sc.relax_dtau, sc.relax_steps)
    return res


def initial_orbitals(cfg: SimulationConfig, grid: Grid | None = None):
    """(OrbitalSet, SimulationConfig actually used, info dict) for the configured scenario."""
    grid = grid or cfg.grid
    sc = cfg.scenario
    info = {}
    if sc.name == "gaussian_packet":
        psi = gaussian_packet(grid, sc.sigma, sc.k0, sc.spin, sc.center)[None]
    elif sc.name == "plane_wave":
        psi = plane_wave(grid, sc.k, sc.spin)[None]
    elif sc.name == "gaussian_pair":
        # two packets displaced along x, opposite momenta, opposite spins
        center = np.asarray(grid.center if sc.center is None else sc.center, dtype=float)
        shift = np.array([0.5 * sc.separation, 0.0, 0.0])
        k0 = np.asarray(sc.k0, dtype=float)
        spin = np.asarray(sc.spin, dtype=float)
        psi = np.stack([
            gaussian_packet(grid, sc.sigma, k0, spin, center - shift),
            gaussian_packet(grid, sc.sigma, -k0, -spin, center + shift),
        ])
    elif sc.name == "uniform_spin_sample":
        psi = uniform_spinor(grid, sc.spin)[None]
    elif sc.name in ("atom", "two_orbital_atom"):
        cfg, phi = _atom_setup(cfg, grid)
        res = _relaxed_orbital(cfg, grid, phi)
        info["relaxation"] = res
        f = res.psi
        if sc.name == "atom":
            psi = (spinor_along(sc.spin)[:, None, None, None] * f)[None]
        else:
            _commensurate(grid, sc.kick, "kick")
            x = grid.coords
            kick = np.exp(1j * sum(sc.kick[a] * x[a] for a in range(3)))
            up = np.array([1.0, 0.0])[:, None, None, None] * f
            dn = np.array([0.0, 1.0])[:, None, None, None] * f * kick
            psi = np.stack([up, dn])
    else:
        raise ValueError(f"unknown scenario {sc.name!r}; expected one of {SCENARIOS}")
    psi = np.stack([_normalize(p, grid) for p in psi])
    return OrbitalSet(psi, grid), cfg, info


# --- state and field updates ------------------------------------------------------------


@dataclass
class SimulationState:
    time: float
    step: int
    orbs: OrbitalSet
    em: MX.EMState
    field_info: dict = field(default_factory=dict)


class Model:
    """Binds a configuration to the grid, constants and static external potential."""

    def __init__(self, cfg: SimulationConfig, grid: Grid | None = None):
        self.cfg = cfg
        self.grid = grid or cfg.grid
        self.k = cfg.constants
        self.opt = cfg.hamiltonian_options()
        self.phi_ext = nuclear_potential(cfg, self.grid)
        b = cfg.scenario.direct_b
        self.direct_B = None if b is None or not np.any(b) else np.asarray(b, dtype=float)
        self._pot_key = self._pot_em = self._pot = None

    def potentials(self, em: MX.EMState, t: float) -> Potentials:
        # RK stages reuse one Potentials object (and its cached derivatives)
        # unless the external laser makes them time dependent
        key = (id(em), t if self.cfg.variant == "external" else None)
        if self._pot_key == key and self._pot_em is em:
            return self._pot
        pot = self._build_potentials(em, t)
        self._pot_key, self._pot_em, self._pot = key, em, pot
        return pot

    def _build_potentials(self, em: MX.EMState, t: float) -> Potentials:
        cfg, g = self.cfg, self.grid
        phi = self.phi_ext + em.phi0
        if cfg.variant == "minimal":
            return Potentials(g, phi=phi, A=em.A2, direct_B=self.direct_B)
        if cfg.variant == "internal":
            return Potentials(g, phi=phi, A=em.A2, phi2=em.phi2, direct_B=self.direct_B)
        _, a_ext, da_ext = external_fields(cfg, t, g, phi_ext=self.phi_ext)
        return Potentials(
            g, phi=phi, A=a_ext + em.A2, dA_dt=da_ext, phi2=em.phi2, direct_B=self.direct_B,
            A_second_order=a_ext if cfg.neglect_a2_second_order else None,
        )

    def rhs(self, psi, pot):
        return (-1j / self.k.hbar) * apply_h(psi, pot, self.k, self.opt)

    def fields(self, orbs: OrbitalSet, t: float, prev: MX.EMState | None = None):
        """Self-consistent potentials for ``orbs`` at time ``t``.

        Second-order pieces that need A2 itself (the -(q/m) A2 rho current)
        take it from ``prev``.
        """
        g, k, cfg = self.grid, self.k, self.cfg
        if not cfg.interactions:
            return MX.EMState(g, time=t), {"poisson_mean": 0.0, "gauge_residual": 0.0}
        prev = prev or MX.EMState(g)
        phi0, mean = MX.solve_phi0(S.rho_free(orbs), g, k)
        trial = MX.EMState(g, phi0=phi0, phi2=prev.phi2, A2=prev.A2)
        pot = self.potentials(trial, t)
        dorbs = orbs.like(self.rhs(orbs.psi, pot))
        # the spin-orbit drift in j2 follows the Hamiltonian's own toggle
        phi_drift = pot.phi if cfg.include_soc else g.zeros()
        if cfg.variant == "minimal":
            j = S.zeroth_order_current(orbs, k) + S.j2_free(orbs, prev.A2, phi_drift, k)
        else:
            j0, j2 = S.ordered_currents(orbs, dorbs, prev.A2, phi_drift, k)
            j = j0 + j2
            if cfg.variant == "external":
                j = j - (k.charge / k.mass) * (pot.A - prev.A2) * S.rho_free(orbs)
        A2, _ = MX.solve_A2(j, g, k)
        phi2 = None
        if cfg.variant != "minimal":
            a_zeroth = None if cfg.variant == "internal" else pot.A - prev.A2
            rho2 = S.rho_full(orbs, a_zeroth, k) - S.rho_free(orbs)
            d2 = orbs.like(self.rhs(dorbs.psi, pot))
            phi2, _ = MX.solve_phi2(rho2, MX.d2phi0_dt2(orbs, dorbs, d2, k), g, k)
        dphi0 = MX.dphi0_dt(orbs, dorbs, k)
        em = MX.EMState(g, phi0=phi0, phi2=phi2, A2=A2, subtracted_mean=mean, time=t)
        info = {
            "poisson_mean": mean,
            "gauge_residual": MX.gauge_residual(A2, dphi0, g, k, current=j),
            "current": j,
        }
        return em, info

    def energy(self, orbs: OrbitalSet, em: MX.EMState, t: float, return_residue=False):
        """Sum_n w_n <H> with the double-counted field energies removed.

        With ``return_residue`` also returns |Im <H>| / |Re <H>|.
        """
        g, k = self.grid, self.k
        pot = self.potentials(em, t)
        e, residue = energy_expectation(orbs.psi, pot, k, self.opt, weights=orbs.weights, return_residue=True)
        residue /= max(abs(e), 1e-300)
        if self.cfg.interactions:
            rho = S.rho_free(orbs)
            e -= 0.5 * k.charge * float(F.integrate(rho * (em.phi0 + em.phi2), g))
            if "current" in em.extra:
                e += 0.5 * k.charge * float(F.integrate(F.dot(em.extra["current"], em.A2), g))
        return (e, residue) if return_residue else e


def rk4_step(psi, t, dt, rhs):
    """Classical four-stage Runge-Kutta step for dpsi/dt = rhs(t, psi)."""
    k1 = rhs(t, psi)
    k2 = rhs(t + 0.5 * dt, psi + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, psi + 0.5 * dt * k2)
    k4 = rhs(t + dt, psi + dt * k3)
    return psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def init_scenario(cfg: SimulationConfig, grid: Grid | None = None):
    """Initial SimulationState (orbitals plus fields consistent with them)."""
    orbs, cfg_used, info = initial_orbitals(cfg, grid)
    model = Model(cfg_used, orbs.grid)
    em, finfo = model.fields(orbs, 0.0)
    if "current" in finfo:
        em.extra["current"] = finfo.pop("current")
    state = SimulationState(0.0, 0, orbs, em, finfo)
    state.field_info.update(info)
    return state, model


def _advance(model: Model, psi, t, dt, em):
    return rk4_step(psi, t, dt, lambda tt, p: model.rhs(p, model.potentials(em, tt)))


def step(state: SimulationState, model: Model, dt: float | None = None) -> SimulationState:
    """One RK4 step; fields are held per the configured self-consistency mode."""
    cfg = model.cfg
    dt = cfg.dt if dt is None else dt
    t = state.time
    em = state.em
    try:
        if cfg.interactions and cfg.selfconsistency == "one-corrector":
            half = _advance(model, state.orbs.psi, t, 0.5 * dt, em)
            em, _ = model.fields(state.orbs.like(half), t + 0.5 * dt, prev=em)
        psi = _advance(model, state.orbs.psi, t, dt, em)
    except NonFiniteError as exc:
        raise InstabilityError(f"non-finite values inside the step ({exc})", step=state.step + 1) from None
    if not np.all(np.isfinite(psi)):
        raise InstabilityError("orbitals became non-finite", step=state.step + 1)
    orbs = state.orbs.like(psi)
    new_em, info = model.fields(orbs, t + dt, prev=state.em)
    if "current" in info:
        new_em.extra["current"] = info.pop("current")
    return SimulationState(t + dt, state.step + 1, orbs, new_em, info)


# --- diagnostics ---------------------------------------------------------------------------


DIAGNOSTIC_COLUMNS = (
    "step", "time", "norm_total", "energy_total", "energy_imaginary_residue", "continuity_residual_l2", "gauge_residual",
    "poisson_subtracted_mean", "sx", "sy", "sz", "max_field_amplitude",
)


def diagnostics_row(state: SimulationState, model: Model) -> dict:
    g, k = model.grid, model.k
    orbs = state.orbs
    pot = model.potentials(state.em, state.time)
    _, cont = S.continuity_residual(orbs, pot, k, model.opt)
    spin = orbs.weighted_sum(np.stack([F.integrate(F.spin_density(p), g) for p in orbs.psi]))
    energy, residue = model.energy(orbs, state.em, state.time, return_residue=True)
    e_field = -F.gradient(pot.phi, g) - (0.0 if model.opt.model == "minimal" else pot.dA_dt)
    return {
        "step": state.step,
        "time": state.time,
        "norm_total": float(np.sum(orbs.weights * orbs.norms())),
        "energy_total": energy,
        "energy_imaginary_residue": residue,
        "continuity_residual_l2": cont,
        "gauge_residual": float(state.field_info.get("gauge_residual", 0.0)),
        "poisson_subtracted_mean": float(state.field_info.get("poisson_mean", 0.0)),
        "sx": float(spin[0]),
        "sy": float(spin[1]),
        "sz": float(spin[2]),
        "max_field_amplitude": float(np.max(np.sqrt(F.dot(e_field, e_field)))),
    }


def run_selfconsistent(cfg: SimulationConfig, on_output=None, grid: Grid | None = None):
    """Run ``cfg.steps`` steps; returns (final state, list of diagnostics rows).

    ``on_output(state, row, model)`` is called at step 0 and every
    ``cfg.output_cadence`` steps, and after the final step.
    """
    check_time_step(cfg, grid)
    state, model = init_scenario(cfg, grid)
    rows = []

    def emit(st):
        row = diagnostics_row(st, model)
        rows.append(row)
        if on_output is not None:
            on_output(st, row, model)

    emit(state)
    for n in range(1, cfg.steps + 1):
        state = step(state, model)
        if n % cfg.output_cadence == 0 or n == cfg.steps:
            emit(state)
    return state, rows


def evolve(psi, pot: Potentials, k: PhysicalConstants, dt: float, steps: int,
           opt: HamiltonianOptions | None = None, t0: float = 0.0):
    """Bare RK4 propagation in fixed potentials (no self-consistency)."""
    rhs = lambda t, p: (-1j / k.hbar) * apply_h(p, pot, k, opt)
    psi = np.asarray(psi, dtype=complex)
    for n in range(steps):
        psi = rk4_step(psi, t0 + n * dt, dt, rhs)
        if not np.all(np.isfinite(psi)):
            raise InstabilityError("orbitals became non-finite", step=n + 1)
    return psi
