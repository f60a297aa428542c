"""Extended Pauli Hamiltonian (second order in 1/c, no p^4 term).

Sign convention
---------------
Zeeman, Darwin and spin-orbit terms are applied as

    H = q phi + (p - qA)^2 / 2m - (q hbar / 2m) sigma.B
        + (q hbar^2 / 8 m^2 c^2) (lap phi + div dA/dt)
        + (q hbar / 8 m^2 c^2) sigma.[G x pi - pi x G],   G = grad phi + dA/dt

with ``pi = p - qA``. The spin-orbit operator is the Hermitian ordering of
``-(q hbar / 8 m^2 c^2) sigma.(E x pi - pi x E)``; it is the only ordering and
sign for which the free current (with its ``+ q hbar/(4 m^2 c^2) E x s`` drift)
satisfies the continuity equation. ``soc_form="unsymmetrized"`` keeps the
potential-form operator, which is not Hermitian once ``curl dA/dt != 0``, and
exists for mutation self-tests only.

The reduced (minimal) Hamiltonian uses the same signs for its Zeeman, Darwin and
spin-orbit pieces and drops q^2 A^2 / 2m and the A-dependence of the
spin-orbit term, both of fourth order for a self-consistent A.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import fields as F
from .constants import PhysicalConstants
from .errors import GridMismatchError, HermiticityError

TERM_ORDER = ("rest_mass", "potential", "kinetic", "zeeman", "darwin", "soc")


@dataclass
class Potentials:
    """Electromagnetic potentials seen by the orbitals.

    ``phi`` enters every term; ``phi2`` (optional) only enters ``q phi``.
    ``A_second_order`` (optional) replaces ``A`` inside the spin-orbit term,
    which lets a caller drop a self-consistent A there. ``direct_B`` adds a
    prescribed magnetic field to the Zeeman term only (uniform 3-vector or
    vector field); it is a test-harness device for uniform fields that have no
    periodic vector potential.
    """

    grid: F.Grid
    phi: np.ndarray = None
    A: np.ndarray = None
    dA_dt: np.ndarray = None
    direct_B: np.ndarray = None
    phi2: np.ndarray = None
    A_second_order: np.ndarray = None

    def __post_init__(self):
        g = self.grid
        self.phi = g.zeros() if self.phi is None else np.asarray(self.phi, dtype=float)
        self.A = g.zeros(3) if self.A is None else np.asarray(self.A, dtype=float)
        self.dA_dt = g.zeros(3) if self.dA_dt is None else np.asarray(self.dA_dt, dtype=float)
        for name in ("phi", "A", "dA_dt", "phi2", "A_second_order"):
            arr = getattr(self, name)
            if arr is not None:
                g.check(arr, name)
                F.require_finite(arr, name)
        if self.direct_B is not None:
            b = np.asarray(self.direct_B, dtype=float)
            if b.shape == (3,):
                b = b.reshape(3, 1, 1, 1)
            self.direct_B = F.require_finite(b, "direct_B")

    @cached_property
    def has_A(self) -> bool:
        return bool(np.any(self.A))

    @cached_property
    def has_dA_dt(self) -> bool:
        return bool(np.any(self.dA_dt))

    @cached_property
    def grad_phi(self):
        return F.gradient(self.phi, self.grid)

    @cached_property
    def lap_phi(self):
        return F.laplacian(self.phi, self.grid)

    @cached_property
    def curl_A(self):
        return F.curl(self.A, self.grid) if self.has_A else self.grid.zeros(3)

    @cached_property
    def div_dA_dt(self):
        return F.divergence(self.dA_dt, self.grid)

    def electric_field(self):
        return -self.grad_phi - self.dA_dt

    def shifted(self, dphi=None, dA=None, ddA_dt=None):
        """New potentials with additive perturbations."""
        return Potentials(
            self.grid,
            phi=self.phi if dphi is None else self.phi + dphi,
            A=self.A if dA is None else self.A + dA,
            dA_dt=self.dA_dt if ddA_dt is None else self.dA_dt + ddA_dt,
            direct_B=self.direct_B,
            phi2=self.phi2,
            A_second_order=self.A_second_order,
        )


@dataclass
class HamiltonianOptions:
    include_rest_mass: bool = False
    include_darwin: bool = True
    include_soc: bool = True
    include_zeeman: bool = True
    model: str = "full"  # "full" or "minimal"
    soc_scale: float = 1.0
    soc_form: str = "hermitian"  # "hermitian" or "unsymmetrized"

    def __post_init__(self):
        if self.model not in ("full", "minimal"):
            raise ValueError(f"unknown Hamiltonian model {self.model!r}")
        if self.soc_form not in ("hermitian", "unsymmetrized"):
            raise ValueError(f"unknown spin-orbit form {self.soc_form!r}")

    def enabled(self, term: str) -> bool:
        return {
            "rest_mass": self.include_rest_mass,
            "darwin": self.include_darwin,
            "soc": self.include_soc,
            "zeeman": self.include_zeeman,
        }.get(term, True)


def _mom(dpsi, k: PhysicalConstants):
    """p psi from the stacked gradient."""
    return -1j * k.hbar * dpsi


def _lift(v, psi):
    """Insert singleton axes so a (3, grid) vector broadcasts against ``psi``."""
    return v[(slice(None),) + (None,) * (psi.ndim - 3)]


def _check_spinor(psi, grid):
    grid.check(psi, "spinor")
    if psi.shape[-4] != 2:
        raise GridMismatchError("spinor needs a spin axis of length 2 before the grid axes")
    F.require_finite(psi, "spinor")


def _kinetic(psi, dpsi, lap, A, k, grid, include_a2=True):
    hb, m, q = k.hbar, k.mass, k.charge
    out = -(hb * hb / (2 * m)) * lap
    if A is not None:
        # -q (p.A + A.p) psi / 2m in the symmetric form, plus q^2 A^2 / 2m
        Ab = _lift(A, psi)
        div_apsi = F.divergence(Ab * psi, grid)
        a_dot_grad = F.dot(Ab, dpsi)
        out = out + (1j * hb * q / (2 * m)) * (div_apsi + a_dot_grad)
        if include_a2:
            out = out + (q * q / (2 * m)) * F.dot(A, A) * psi
    return out


def _soc_hermitian(psi, dpsi, G, A, k, grid):
    """(q hbar / 8 m^2 c^2) sigma.[G x (pi psi) - pi x (G psi)]."""
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    Gb = _lift(G, psi)
    pi_psi = _mom(dpsi, k)
    if A is not None:
        pi_psi = pi_psi - q * _lift(A, psi) * psi
    # G x (pi psi) - pi x (G psi), with pi x (G psi) = -i hbar curl(G psi) - q A x G psi
    w = F.cross(Gb, pi_psi) + 1j * hb * F.curl(Gb * psi, grid)
    if A is not None:
        w = w + q * F.cross(_lift(A, psi), Gb) * psi
    return (q * hb / (8 * m * m * c * c)) * F.sigma_sum(w)


def _soc_unsymmetrized(psi, dpsi, G, dA_dt, A, k, grid):
    """Literal potential-form ordering: -(q hbar/4m^2c^2) s.[G x pi] - (q hbar/8m^2c^2) s.(p x dA/dt)."""
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    pi_psi = _mom(dpsi, k)
    if A is not None:
        pi_psi = pi_psi - q * _lift(A, psi) * psi
    w1 = F.cross(_lift(G, psi), pi_psi)
    w2 = (-1j * hb) * F.curl(_lift(dA_dt, psi) * psi, grid)
    pref = q * hb / (m * m * c * c)
    return -(pref / 4) * F.sigma_sum(w1) - (pref / 8) * F.sigma_sum(w2)


def hamiltonian_terms(psi, pot: Potentials, k: PhysicalConstants, opt: HamiltonianOptions | None = None):
    """Every term of H psi as a separate array, keyed by name (see ``TERM_ORDER``).

    Terms disabled in ``opt`` are still returned so they can be inspected;
    :func:`apply_h` decides what to sum.
    """
    opt = opt or HamiltonianOptions()
    grid = pot.grid
    _check_spinor(psi, grid)
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    minimal = opt.model == "minimal"
    dpsi, lap = F.spinor_derivatives(psi, grid)
    A = pot.A
    dA_dt = pot.grid.zeros(3) if minimal else pot.dA_dt

    terms = {}
    terms["rest_mass"] = m * c * c * psi
    phi_total = pot.phi if pot.phi2 is None else pot.phi + pot.phi2
    terms["potential"] = q * phi_total * psi
    terms["kinetic"] = _kinetic(psi, dpsi, lap, A if pot.has_A else None, k, grid,
                                include_a2=not minimal)

    B = pot.curl_A
    if pot.direct_B is not None:
        B = B + pot.direct_B
    terms["zeeman"] = -(q * hb / (2 * m)) * F.sigma_apply(B, psi)

    div_e_part = pot.lap_phi
    if not minimal and pot.has_dA_dt:
        div_e_part = div_e_part + pot.div_dA_dt
    terms["darwin"] = (q * hb * hb / (8 * m * m * c * c)) * div_e_part * psi

    G = pot.grad_phi + dA_dt if not minimal and pot.has_dA_dt else pot.grad_phi
    A_soc = None if minimal else (pot.A if pot.A_second_order is None else pot.A_second_order)
    if A_soc is not None and not np.any(A_soc):
        A_soc = None
    if opt.soc_form == "unsymmetrized":
        soc = _soc_unsymmetrized(psi, dpsi, G, dA_dt, A_soc, k, grid)
    else:
        soc = _soc_hermitian(psi, dpsi, G, A_soc, k, grid)
    terms["soc"] = opt.soc_scale * soc
    return terms


def apply_h(psi, pot: Potentials, k: PhysicalConstants, opt: HamiltonianOptions | None = None):
    """H psi with every enabled term. Works on a spinor or a stack of spinors."""
    opt = opt or HamiltonianOptions()
    terms = hamiltonian_terms(psi, pot, k, opt)
    out = np.zeros_like(terms["potential"])
    for name in TERM_ORDER:
        if opt.enabled(name):
            out = out + terms[name]
    return out


def apply_h_minimal(psi, phi0, A2, k: PhysicalConstants, opt: HamiltonianOptions | None = None,
                    grid: F.Grid | None = None, phi2=None, direct_B=None):
    """Reduced Hamiltonian for purely internal fields, written out term by term.

    q phi0 + p^2/2m - (q/2m)(p.A2 + A2.p) - (q hbar/2m) sigma.curl A2
    + (q hbar^2/8m^2c^2) lap phi0 + (q hbar/4m^2c^2) sigma.(grad phi0 x p)

    Independent of :func:`apply_h`; the two agree for band-limited inputs.
    ``phi2`` (internal model) is added to ``q phi0`` only.
    """
    opt = opt or HamiltonianOptions(model="minimal")
    if grid is None:
        raise TypeError("grid is required")
    _check_spinor(psi, grid)
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    psik = F.forward(psi)
    dpsi = np.stack([F.backward(1j * kk * psik) for kk in grid.kvec])
    out = -(hb * hb / (2 * m)) * F.backward(-grid.k2 * psik)
    phi_tot = phi0 if phi2 is None else phi0 + phi2
    out = out + q * phi_tot * psi
    if opt.include_rest_mass:
        out = out + m * c * c * psi
    if A2 is not None and np.any(A2):
        # (p.A2 + A2.p) psi = -i hbar [div(A2 psi) + 2 A2.grad psi] + ... written via Fourier
        pa = sum(F.backward(1j * grid.kvec[i] * F.forward(A2[i] * psi)) for i in range(3))
        ap = sum(A2[i] * dpsi[i] for i in range(3))
        out = out - (q / (2 * m)) * (-1j * hb) * (pa + ap)
    if opt.include_zeeman:
        B = F.curl(A2, grid) if A2 is not None else grid.zeros(3)
        if direct_B is not None:
            db = np.asarray(direct_B, dtype=float)
            B = B + (db.reshape(3, 1, 1, 1) if db.ndim == 1 else db)
        up, dn = psi[..., 0, :, :, :], psi[..., 1, :, :, :]
        zu = B[2] * up + (B[0] - 1j * B[1]) * dn
        zd = (B[0] + 1j * B[1]) * up - B[2] * dn
        out = out - (q * hb / (2 * m)) * np.stack([zu, zd], axis=-4)
    if opt.include_darwin:
        lap_phi = F.backward(-grid.k2 * F.forward(phi0)).real
        out = out + (q * hb * hb / (8 * m * m * c * c)) * lap_phi * psi
    if opt.include_soc:
        phik = F.forward(phi0)
        g = [F.backward(1j * kk * phik).real for kk in grid.kvec]
        # grad phi0 x p psi, component by component
        p = -1j * hb * dpsi
        cx = g[1] * p[2] - g[2] * p[1]
        cy = g[2] * p[0] - g[0] * p[2]
        cz = g[0] * p[1] - g[1] * p[0]
        up_ = cz[..., 0, :, :, :] + cx[..., 1, :, :, :] - 1j * cy[..., 1, :, :, :]
        dn_ = cx[..., 0, :, :, :] + 1j * cy[..., 0, :, :, :] - cz[..., 1, :, :, :]
        out = out + opt.soc_scale * (q * hb / (4 * m * m * c * c)) * np.stack([up_, dn_], axis=-4)
    return out


def energy_expectation(psi, pot: Potentials, k: PhysicalConstants, opt: HamiltonianOptions | None = None,
                       weights=None, return_residue=False, tol=1e-8):
    """Real part of sum_n w_n <psi_n, H psi_n>.

    Raises :class:`HermiticityError` if the imaginary part exceeds
    ``tol * |real|`` (with an absolute floor of ``tol * 1e-12``).
    """
    grid = pot.grid
    psi = np.asarray(psi)
    hpsi = apply_h(psi, pot, k, opt)
    if psi.ndim == 4:
        value = np.vdot(psi, hpsi) * grid.cell_volume
    else:
        w = np.ones(psi.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        value = sum(wi * np.vdot(p, h) for wi, p, h in zip(w, psi, hpsi)) * grid.cell_volume
    residue = abs(value.imag)
    if residue > tol * max(abs(value.real), 1e-12):
        raise HermiticityError(f"<H> imaginary residue {residue:.3e} vs real part {value.real:.6e}")
    if return_residue:
        return float(value.real), float(residue)
    return float(value.real)


def hermiticity_defect(pot: Potentials, k: PhysicalConstants, opt: HamiltonianOptions | None = None,
                       trials: int = 10, rng=0, fraction=1.0 / 3.0) -> float:
    """max |<a, H b> - conj(<b, H a>)| / (|a| |b| E) over random band-limited pairs.

    ``E`` is the larger of ``|H a|/|a|`` and ``|H b|/|b|``.
    """
    grid = pot.grid
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        a = F.band_limited_noise(grid, (2,), rng, fraction, complex_=True)
        b = F.band_limited_noise(grid, (2,), rng, fraction, complex_=True)
        ha = apply_h(a, pot, k, opt)
        hb = apply_h(b, pot, k, opt)
        na, nb = np.sqrt(F.norm2(a, grid)), np.sqrt(F.norm2(b, grid))
        scale = max(np.sqrt(F.norm2(ha, grid)) / na, np.sqrt(F.norm2(hb, grid)) / nb)
        d = abs(F.l2_inner(a, hb, grid) - np.conj(F.l2_inner(b, ha, grid)))
        worst = max(worst, d / (na * nb * scale))
    return float(worst)


def soft_core_coulomb(grid: F.Grid, k: PhysicalConstants, positions, charges, softening=0.3):
    """Nuclear potential Z|q| / (4 pi eps0 sqrt(r^2 + a^2)) with minimum-image distances."""
    phi = grid.zeros()
    x = grid.coords
    for pos, Z in zip(np.atleast_2d(positions), np.atleast_1d(charges)):
        r2 = np.zeros(grid.n)
        for axis in range(3):
            d = x[axis] - pos[axis]
            L = grid.L[axis]
            d = d - L * np.round(d / L)
            r2 = r2 + d * d
        phi = phi + Z * abs(k.charge) / (4 * np.pi * k.eps0 * np.sqrt(r2 + softening**2))
    return phi
