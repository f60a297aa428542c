"""Second-order charge and current sources, their free/bound split, and checks.

All densities and currents here are probability-like (rho, j); the Maxwell
sources are q*rho and q*j. Time derivatives of bilinears are formed from an
explicit dpsi/dt (product rule), never by differencing snapshots.

Notation: s = psi^dag sigma psi, K = (grad psi^dag) x sigma psi + psi^dag sigma x grad psi.
K is purely imaginary so -(i hbar/2m) K is real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fields as F
from .constants import PhysicalConstants
from .fields import OrbitalSet, as_real, as_orbitals
from .hamiltonian import HamiltonianOptions, Potentials, apply_h, energy_expectation

RESIDUE_TOL = 1e-13


# --- bilinear building blocks ----------------------------------------------------


def _wsum(orbs: OrbitalSet, arr, axis=0):
    return np.tensordot(orbs.weights, arr, axes=(0, axis))


def _density(orbs, a, b):
    return _wsum(orbs, F.density_bilinear(a, b))


def _spin(orbs, a, b):
    return _wsum(orbs, F.spin_bilinear(a, b), axis=1)


def _para(orbs, a, b, da, db):
    """(grad a^dag) b - a^dag grad b, orbital-summed, complex."""
    return np.stack([_density(orbs, da[j], b) - _density(orbs, a, db[j]) for j in range(3)])


def _kvec(orbs, a, b, da, db):
    """(grad a^dag) x sigma b + a^dag sigma x grad b, orbital-summed, complex."""
    left = [_spin(orbs, da[j], b) for j in range(3)]   # left[j][l] = (d_j a)^dag sigma_l b
    right = [_spin(orbs, a, db[l]) for l in range(3)]  # right[l][j] = a^dag sigma_j d_l b
    out = np.empty((3,) + left[0].shape[1:], dtype=complex)
    for i, j, l in F.LEVI_CIVITA:
        out[i] = (left[j][l] - left[l][j]) + (right[l][j] - right[j][l])
    return out


class _Bilinears:
    """Orbital-summed bilinears of one orbital set (and optionally its rate).

    Every property is real: imaginary residues are checked against the size
    of the factors entering the bilinear, so cancelling sums do not trip the
    check.
    """

    def __init__(self, orbs: OrbitalSet, dorbs: OrbitalSet | None = None):
        self.orbs = orbs
        self.grid = orbs.grid
        psi = orbs.psi
        self.psi = psi
        self.dpsi = F.spinor_gradient(psi, self.grid)
        self.rate = None
        if dorbs is not None:
            if dorbs.psi.shape != psi.shape:
                raise ValueError(
                    f"orbital/derivative mismatch: {psi.shape} vs {dorbs.psi.shape}"
                )
            self.rate = dorbs.psi
            self.drate = F.spinor_gradient(dorbs.psi, self.grid)

    def _scale(self, *pairs):
        w = float(np.sum(self.orbs.weights))
        return w * max(float(np.max(np.abs(a))) * float(np.max(np.abs(b))) for a, b in pairs)

    def _real(self, z, name, *pairs):
        return as_real(z, name, RESIDUE_TOL, scale=self._scale(*pairs))

    @property
    def rho(self):
        return self._real(_density(self.orbs, self.psi, self.psi), "rho", (self.psi, self.psi))

    @property
    def s(self):
        return self._real(_spin(self.orbs, self.psi, self.psi), "spin density", (self.psi, self.psi))

    @property
    def i_para(self):
        """i [(grad psi^dag) psi - psi^dag grad psi]."""
        z = 1j * _para(self.orbs, self.psi, self.psi, self.dpsi, self.dpsi)
        return self._real(z, "paramagnetic current", (self.dpsi, self.psi))

    @property
    def minus_iK(self):
        z = -1j * _kvec(self.orbs, self.psi, self.psi, self.dpsi, self.dpsi)
        return self._real(z, "spin-curl bilinear K", (self.dpsi, self.psi))

    def _need_rate(self):
        if self.rate is None:
            raise ValueError("time derivative of the orbitals is required")

    @property
    def rho_dot(self):
        self._need_rate()
        o, p, r = self.orbs, self.psi, self.rate
        return self._real(_density(o, p, r) + _density(o, r, p), "d rho/dt", (p, r))

    @property
    def s_dot(self):
        self._need_rate()
        o, p, r = self.orbs, self.psi, self.rate
        return self._real(_spin(o, p, r) + _spin(o, r, p), "d s/dt", (p, r))

    @property
    def minus_iK_dot(self):
        self._need_rate()
        o = self.orbs
        z = _kvec(o, self.rate, self.psi, self.drate, self.dpsi) + _kvec(
            o, self.psi, self.rate, self.dpsi, self.drate
        )
        return self._real(-1j * z, "dK/dt", (self.drate, self.psi), (self.dpsi, self.rate))


def _zero_vec(grid, A):
    return grid.zeros(3) if A is None else np.asarray(A, dtype=float)


# --- sources ---------------------------------------------------------------------


def rho_free(orbs, grid=None):
    """sum_n w_n psi_n^dag psi_n."""
    orbs = as_orbitals(orbs, grid)
    F.require_finite(orbs.psi, "orbitals")
    return _wsum(orbs, np.sum(orbs.psi.real**2 + orbs.psi.imag**2, axis=1))


def rho_full(orbs, A, k: PhysicalConstants, grid=None):
    """Second-order probability density.

    rho + (hbar/4mc^2) div[(hbar/2m) grad rho] + (hbar/4mc^2) div[(q/m) A x s - (i hbar/2m) K]
    """
    orbs = as_orbitals(orbs, grid)
    g = orbs.grid
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    A = _zero_vec(g, A)
    b = _Bilinears(orbs)
    rho = b.rho
    spin_part = (q / m) * F.cross(A, b.s) + (hb / (2 * m)) * b.minus_iK
    bracket = (hb / (2 * m)) * F.gradient(rho, g) + spin_part
    return rho + (hb / (4 * m * c * c)) * F.divergence(bracket, g)


def j_free(orbs, A, E, k: PhysicalConstants, grid=None):
    """(i hbar/2m)[(grad psi^dag) psi - psi^dag grad psi] - (q/m) A rho + (q hbar/4m^2c^2) E x s."""
    orbs = as_orbitals(orbs, grid)
    g = orbs.grid
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    A = _zero_vec(g, A)
    E = _zero_vec(g, E)
    b = _Bilinears(orbs)
    para = (hb / (2 * m)) * b.i_para
    return para - (q / m) * A * b.rho + (q * hb / (4 * m * m * c * c)) * F.cross(E, b.s)


def magnetization(orbs, k: PhysicalConstants, grid=None):
    """Spin magnetization (q hbar / 2m) s."""
    orbs = as_orbitals(orbs, grid)
    return (k.charge * k.hbar / (2 * k.mass)) * _Bilinears(orbs).s


def polarization_spin(orbs, A, k: PhysicalConstants, grid=None, include_A=True):
    """-(q hbar/4mc^2) [(q/m) A x s - (i hbar/2m) K]."""
    orbs = as_orbitals(orbs, grid)
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    b = _Bilinears(orbs)
    inner = (hb / (2 * m)) * b.minus_iK
    if include_A and A is not None:
        inner = inner + (q / m) * F.cross(np.asarray(A, dtype=float), b.s)
    return -(q * hb / (4 * m * c * c)) * inner


def polarization_darwin(orbs, k: PhysicalConstants, grid=None):
    """-(q hbar^2 / 8 m^2 c^2) grad rho."""
    orbs = as_orbitals(orbs, grid)
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    return -(q * hb * hb / (8 * m * m * c * c)) * F.gradient(rho_free(orbs), orbs.grid)


def polarization_rate(orbs, dorbs, A, k: PhysicalConstants, dA_dt=None, include_A=True):
    """d/dt (P_spin + P_darwin) from the supplied orbital time derivatives."""
    orbs = as_orbitals(orbs)
    dorbs = as_orbitals(dorbs, orbs.grid)
    g = orbs.grid
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    b = _Bilinears(orbs, dorbs)
    inner = (hb / (2 * m)) * b.minus_iK_dot
    if include_A:
        A = _zero_vec(g, A)
        inner = inner + (q / m) * F.cross(A, b.s_dot)
        if dA_dt is not None:
            inner = inner + (q / m) * F.cross(np.asarray(dA_dt, dtype=float), b.s)
    p_spin = -(q * hb / (4 * m * c * c)) * inner
    p_darwin = -(q * hb * hb / (8 * m * m * c * c)) * F.gradient(b.rho_dot, g)
    return p_spin + p_darwin


def j_full(orbs, dorbs, A, E, k: PhysicalConstants, dA_dt=None):
    """Full second-order probability current, evaluated as a single expression.

    j = j_para - (q/m) A rho + (hbar/2m) curl s + (q hbar/4m^2c^2) E x s
        - (hbar/4mc^2) d/dt[(hbar/2m) grad rho]
        - (hbar/4mc^2) d/dt[(q/m) A x s - (i hbar/2m) K]
    """
    orbs = as_orbitals(orbs)
    dorbs = as_orbitals(dorbs, orbs.grid)
    g = orbs.grid
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    A = _zero_vec(g, A)
    E = _zero_vec(g, E)
    dA_dt = _zero_vec(g, dA_dt)
    b = _Bilinears(orbs, dorbs)
    rho, s = b.rho, b.s
    zeroth = (hb / (2 * m)) * b.i_para
    zeroth = zeroth - (q / m) * A * rho + (hb / (2 * m)) * F.curl(s, g)
    drift = (q * hb / (4 * m * m * c * c)) * F.cross(E, s)
    d_bracket = (hb / (2 * m)) * F.gradient(b.rho_dot, g)
    d_bracket = d_bracket + (q / m) * (F.cross(dA_dt, s) + F.cross(A, b.s_dot))
    d_bracket = d_bracket + (hb / (2 * m)) * b.minus_iK_dot
    return zeroth + drift - (hb / (4 * m * c * c)) * d_bracket


def j2_free(orbs, A2, phi0, k: PhysicalConstants):
    """Second-order free current -(q/m) A2 rho - (q hbar/4m^2c^2) grad phi0 x s."""
    orbs = as_orbitals(orbs)
    g = orbs.grid
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    b = _Bilinears(orbs)
    out = -(q * hb / (4 * m * m * c * c)) * F.cross(F.gradient(phi0, g), b.s)
    if A2 is not None:
        out = out - (q / m) * np.asarray(A2) * b.rho
    return out


def zeroth_order_current(orbs, k: PhysicalConstants):
    """j0 = (i hbar/2m)[(grad psi^dag) psi - psi^dag grad psi] + (hbar/2m) curl s."""
    orbs = as_orbitals(orbs)
    b = _Bilinears(orbs)
    return (k.hbar / (2 * k.mass)) * (b.i_para + F.curl(b.s, orbs.grid))


def ordered_currents(orbs, dorbs, A2, phi0, k: PhysicalConstants):
    """Zeroth- and second-order currents (j0, j2) of the electric-limit expansion.

    j0 = j_para + (hbar/2m) curl s
    j2 = j2_free + (1/q) dP/dt, with the A-term of P_spin dropped.
    """
    orbs = as_orbitals(orbs)
    q = k.charge
    j0 = zeroth_order_current(orbs, k)
    j2 = j2_free(orbs, A2, phi0, k) + polarization_rate(orbs, dorbs, None, k, include_A=False) / q
    return j0, j2


def j_rel_mass_correction(orbs, A, k: PhysicalConstants):
    """Current correction from the relativistic mass term, term for term.

    (q hbar^2/4m^3c^2)[(grad psi^dag) div(A psi) + div(A psi^dag) grad psi
                       + (A.grad psi^dag) grad psi + (grad psi^dag)(A.grad psi)]
    - (q hbar^2/4m^3c^2) grad div(A rho) + (q^3/m^3c^2) A^2 rho A
    + (i hbar q^2/2m^3c^2) A [psi^dag (A.grad psi) - (A.grad psi^dag) psi]
    - (i hbar q^2/2m^3c^2) A^2 [(grad psi^dag) psi - psi^dag grad psi]
    - (q hbar^2/4m^3c^2) [psi^dag lap psi + (lap psi^dag) psi] A
    """
    orbs = as_orbitals(orbs)
    g = orbs.grid
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    A = _zero_vec(g, A)
    F.require_finite(A, "A")
    psi = orbs.psi
    dpsi = F.spinor_gradient(psi, g)
    dpsi_c = np.conj(dpsi)
    psi_c = np.conj(psi)
    div_apsi = sum(F.partial(A[i] * psi, i, g) for i in range(3))
    div_apsi_c = sum(F.partial(A[i] * psi_c, i, g) for i in range(3))
    a_grad = sum(A[i] * dpsi[i] for i in range(3))
    a_grad_c = sum(A[i] * dpsi_c[i] for i in range(3))
    lap = F.laplacian(psi, g)
    lap_c = F.laplacian(psi_c, g)

    def spin_sum(x, y):
        return _wsum(orbs, np.sum(x * y, axis=-4))

    wsum = float(np.sum(orbs.weights))

    def real(z, name, x, y, factor=1.0):
        scale = wsum * float(np.max(np.abs(x))) * float(np.max(np.abs(y))) * factor
        return as_real(z, name, 1e-12, scale=scale)

    t1 = np.stack([
        spin_sum(dpsi_c[j], div_apsi) + spin_sum(div_apsi_c, dpsi[j])
        + spin_sum(a_grad_c, dpsi[j]) + spin_sum(dpsi_c[j], a_grad)
        for j in range(3)
    ])
    rho = rho_free(orbs)
    a2 = F.dot(A, A)
    out = (q * hb * hb / (4 * m**3 * c * c)) * real(t1, "j_rel first bracket", dpsi, np.concatenate([div_apsi, a_grad]))
    out = out - (q * hb * hb / (4 * m**3 * c * c)) * F.gradient(F.divergence(A * rho, g), g)
    out = out + (q**3 / (m**3 * c * c)) * a2 * rho * A
    t4 = spin_sum(psi_c, a_grad) - spin_sum(a_grad_c, psi)
    out = out + (hb * q * q / (2 * m**3 * c * c)) * A * real(1j * t4, "j_rel A.grad term", psi, a_grad)
    t5 = np.stack([spin_sum(dpsi_c[j], psi) - spin_sum(psi_c, dpsi[j]) for j in range(3)])
    out = out - (q * q * hb / (2 * m**3 * c * c)) * a2 * real(1j * t5, "j_rel A^2 term", psi, dpsi)
    t6 = spin_sum(psi_c, lap) + spin_sum(lap_c, psi)
    out = out - (q * hb * hb / (4 * m**3 * c * c)) * real(t6, "j_rel laplacian term", psi, lap) * A
    return out


# --- bundle ------------------------------------------------------------------------


@dataclass
class SourceBundle:
    rho_free: np.ndarray
    rho_full: np.ndarray
    j_free: np.ndarray
    j_full: np.ndarray
    M: np.ndarray
    P_spin: np.ndarray
    P_darwin: np.ndarray
    P_rate: np.ndarray
    j0: np.ndarray = None
    j2: np.ndarray = None

    def density_identity_error(self, k: PhysicalConstants, grid):
        """max |q rho_full - q rho_free + div P| relative to max |q rho_free|."""
        q = k.charge
        lhs = q * self.rho_full
        rhs = q * self.rho_free - F.divergence(self.P_spin + self.P_darwin, grid)
        return float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(q * self.rho_free)))

    def current_identity_error(self, k: PhysicalConstants, grid):
        """max |q j_full - (q j_free + curl M + dP/dt)| relative to max |q j_full|."""
        q = k.charge
        lhs = q * self.j_full
        rhs = q * self.j_free + F.curl(self.M, grid) + self.P_rate
        return float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(lhs)), 1e-300))


def source_bundle(orbs, dorbs, A, E, k: PhysicalConstants, dA_dt=None, phi0=None):
    """All sources for one state. ``j0``/``j2`` are filled only if ``phi0`` is given."""
    orbs = as_orbitals(orbs)
    dorbs = as_orbitals(dorbs, orbs.grid)
    bundle = SourceBundle(
        rho_free=rho_free(orbs),
        rho_full=rho_full(orbs, A, k),
        j_free=j_free(orbs, A, E, k),
        j_full=j_full(orbs, dorbs, A, E, k, dA_dt),
        M=magnetization(orbs, k),
        P_spin=polarization_spin(orbs, A, k),
        P_darwin=polarization_darwin(orbs, k),
        P_rate=polarization_rate(orbs, dorbs, A, k, dA_dt),
    )
    if phi0 is not None:
        bundle.j0, bundle.j2 = ordered_currents(orbs, dorbs, A, phi0, k)
    return bundle


def time_derivative(orbs, pot: Potentials, k: PhysicalConstants, opt: HamiltonianOptions | None = None):
    """dpsi/dt = -(i/hbar) H psi for every orbital."""
    orbs = as_orbitals(orbs)
    return orbs.like((-1j / k.hbar) * apply_h(orbs.psi, pot, k, opt))


# --- conservation and variational checks --------------------------------------------


def continuity_residual(orbs, pot: Potentials, k: PhysicalConstants, opt: HamiltonianOptions | None = None):
    """Residual d(psi^dag psi)/dt + div j_free with dpsi/dt taken through H.

    For ``opt.model == "minimal"`` the drift uses E = -grad phi (no dA/dt),
    matching the reduced Hamiltonian. Returns ``(field, normalized_l2)``, the
    norm taken relative to ``max(|div j_free|, |j_free| * 2 pi / L_max)``.
    """
    opt = opt or HamiltonianOptions()
    orbs = as_orbitals(orbs)
    g = orbs.grid
    dorbs = time_derivative(orbs, pot, k, opt)
    b = _Bilinears(orbs, dorbs)
    if opt.model == "minimal":
        E = -F.gradient(pot.phi, g)
    else:
        E = pot.electric_field()
    if not opt.include_soc:
        E = 0.0 * E
    jf = j_free(orbs, pot.A, E, k)
    div_j = F.divergence(jf, g)
    r = b.rho_dot + div_j
    norm = lambda f: float(np.sqrt(np.sum(f * f) * g.cell_volume))
    denom = max(norm(div_j), norm(jf) * 2 * np.pi / max(g.L), 1e-300)
    return r, norm(r) / denom


def variational_check(psi_traj, pot_traj, dphi_traj, dA_traj, eps, k: PhysicalConstants,
                      mode="static", opt: HamiltonianOptions | None = None, times=None,
                      ddA_dt_traj=None, dpsi_traj=None, weights=None, floor=1e-300):
    """Compare a finite-difference energy variation with the source integral.

    D = sum_t w_t [<H(pot + eps*delta)> - <H(pot)>] / eps
    S = sum_t w_t  int q (rho_full dphi - j . dA) d^3r

    In ``static`` mode a single snapshot is used (lists of length 1 are
    accepted), dA is time independent and the current omits its time-derivative
    terms. In ``spacetime`` mode the perturbation carries its own time
    derivative ``ddA_dt_traj`` (finite-differenced from ``dA_traj`` when
    omitted), the time integral uses the trapezoid rule on ``times``, and the
    full current is built from ``dpsi_traj`` (default -(i/hbar) H psi).

    Returns ``|D - S| / max(|S|, floor)``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    opt = opt or HamiltonianOptions()
    if mode not in ("static", "spacetime"):
        raise ValueError(f"unknown mode {mode!r}")
    if isinstance(pot_traj, Potentials):
        pot_traj, psi_traj = [pot_traj], [psi_traj]
        dphi_traj, dA_traj = [dphi_traj], [dA_traj]
    nt = len(psi_traj)
    for name, seq in (("pot", pot_traj), ("dphi", dphi_traj), ("dA", dA_traj)):
        if len(seq) != nt:
            raise ValueError(f"trajectory length mismatch: psi has {nt}, {name} has {len(seq)}")
    grid = pot_traj[0].grid
    q = k.charge

    if mode == "static":
        tw = np.ones(nt)
    else:
        if times is None or len(times) != nt:
            raise ValueError("spacetime mode needs one time per trajectory sample")
        times = np.asarray(times, dtype=float)
        dt = np.diff(times)
        tw = np.zeros(nt)
        tw[:-1] += dt / 2
        tw[1:] += dt / 2
        if ddA_dt_traj is None:
            stack = np.stack([grid.zeros(3) if a is None else a for a in dA_traj])
            ddA_dt_traj = list(np.gradient(stack, times, axis=0))
        if len(ddA_dt_traj) != nt:
            raise ValueError("trajectory length mismatch for d(dA)/dt")

    D = 0.0
    S = 0.0
    for n in range(nt):
        psi = np.asarray(psi_traj[n])
        pot = pot_traj[n]
        dphi = grid.zeros() if dphi_traj[n] is None else dphi_traj[n]
        dA = grid.zeros(3) if dA_traj[n] is None else dA_traj[n]
        ddA = None if mode == "static" else ddA_dt_traj[n]
        orbs = OrbitalSet(psi, grid, weights)
        e0 = energy_expectation(orbs.psi, pot, k, opt, weights=orbs.weights)
        e1 = energy_expectation(orbs.psi, pot.shifted(eps * dphi, eps * dA, None if ddA is None else eps * ddA),
                                k, opt, weights=orbs.weights)
        D += tw[n] * (e1 - e0) / eps

        rho = rho_full(orbs, pot.A, k) if _second_order_on(opt) else rho_free(orbs)
        E = pot.electric_field()
        E_drift = E if opt.include_soc else 0.0 * E
        if mode == "static":
            j = j_free(orbs, pot.A, E_drift, k)
            if opt.include_zeeman:
                j = j + (k.hbar / (2 * k.mass)) * F.curl(_Bilinears(orbs).s, grid)
        else:
            dpsi = (-1j / k.hbar) * apply_h(psi, pot, k, opt) if dpsi_traj is None else dpsi_traj[n]
            j = _j_general(orbs, orbs.like(dpsi), pot, E_drift, k, opt)
        S += tw[n] * float(F.integrate(q * (rho * dphi - F.dot(j, dA)), grid))
    return abs(D - S) / max(abs(S), floor)


def _second_order_on(opt):
    return opt.include_darwin or opt.include_soc


def _j_general(orbs, dorbs, pot, E, k, opt):
    """j_full with individual second-order pieces honoring the term toggles."""
    g = orbs.grid
    hb, m, q, c = k.hbar, k.mass, k.charge, k.c
    out = j_free(orbs, pot.A, E, k)
    b = _Bilinears(orbs, dorbs)
    if opt.include_zeeman:
        out = out + (hb / (2 * m)) * F.curl(b.s, g)
    if opt.include_darwin:
        out = out - (hb / (4 * m * c * c)) * (hb / (2 * m)) * F.gradient(b.rho_dot, g)
    if opt.include_soc:
        d = (q / m) * (F.cross(pot.dA_dt, b.s) + F.cross(pot.A, b.s_dot))
        d = d + (hb / (2 * m)) * b.minus_iK_dot
        out = out - (hb / (4 * m * c * c)) * d
    return out
