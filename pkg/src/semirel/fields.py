"""Periodic grid, spectral calculus and spinor algebra.

Fields are plain numpy arrays whose last three axes run over the grid:

* scalar field: ``(nx, ny, nz)`` float64
* vector field: ``(3, nx, ny, nz)`` float64, components ordered x, y, z
* spinor field: ``(2, nx, ny, nz)`` complex128
* stack of orbitals: ``(norb, 2, nx, ny, nz)``

Every spectral operator acts on the trailing three axes, so leading axes are
broadcast through.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatchError, ImaginaryResidueError, NonFiniteError

AXES = (-3, -2, -1)

# Pauli matrices, indexed [component, row, column].
SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

LEVI_CIVITA = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on ``[0, L)`` along each axis."""

    n: tuple
    L: tuple

    def __post_init__(self):
        n = tuple(int(v) for v in np.broadcast_to(self.n, (3,)))
        L = tuple(float(v) for v in np.broadcast_to(self.L, (3,)))
        if any(v < 1 for v in n):
            raise ValueError(f"grid points per axis must be >= 1, got {n}")
        if any(not (np.isfinite(v) and v > 0) for v in L):
            raise ValueError(f"box lengths must be positive, got {L}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", L)

    @property
    def shape(self):
        return self.n

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.L, self.n))

    @property
    def volume(self) -> float:
        return float(np.prod(self.L))

    @property
    def cell_volume(self) -> float:
        return self.volume / float(np.prod(self.n))

    @cached_property
    def axes(self):
        """1-D coordinate arrays."""
        return tuple(np.arange(n) * (L / n) for n, L in zip(self.n, self.L))

    @cached_property
    def coords(self):
        """Broadcast coordinate arrays ``(x, y, z)`` on the full grid."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def center(self):
        return tuple(0.5 * L for L in self.L)

    @cached_property
    def _k_full(self):
        return tuple(2.0 * np.pi * sfft.fftfreq(n, d=L / n) for n, L in zip(self.n, self.L))

    @cached_property
    def kvec(self):
        """Wavenumbers used for first derivatives, Nyquist mode removed.

        Removing the unpaired Nyquist mode keeps derivatives of real fields real
        and makes the discrete momentum operator exactly Hermitian.
        """
        out = []
        for axis, (n, k) in enumerate(zip(self.n, self._k_full)):
            k = k.copy()
            if n % 2 == 0:
                k[n // 2] = 0.0
            shape = [1, 1, 1]
            shape[axis] = n
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def k2(self):
        """|k|^2 table used by the Laplacian and the Poisson solver."""
        kx, ky, kz = (
            k.reshape([-1 if i == a else 1 for i in range(3)]) for a, k in enumerate(self._k_full)
        )
        return kx**2 + ky**2 + kz**2

    @property
    def kmax(self) -> float:
        return float(np.sqrt(self.k2.max()))

    def zeros(self, *lead, dtype=float):
        return np.zeros(tuple(lead) + self.n, dtype=dtype)

    def check(self, arr, name="field"):
        if tuple(arr.shape[-3:]) != self.n:
            raise GridMismatchError(f"{name} has grid shape {arr.shape[-3:]}, expected {self.n}")
        return arr


def require_finite(arr, name="field"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def as_real(z, name="field", tol=1e-13, scale=None):
    """Drop the imaginary part of a nominally real array after checking it.

    The residue is compared with ``tol * scale``; ``scale`` defaults to
    ``max|z|`` but should be the size of the summands when ``z`` is a sum
    that can cancel.
    """
    z = np.asarray(z)
    if not np.iscomplexobj(z):
        return z
    if scale is None:
        scale = float(np.max(np.abs(z), initial=0.0))
    scale = max(float(scale), 1e-300)
    residue = float(np.max(np.abs(z.imag), initial=0.0))
    if residue > tol * scale and residue > 1e-300:
        raise ImaginaryResidueError(
            f"{name}: imaginary residue {residue:.3e} exceeds {tol:g} x scale {scale:.3e}"
        )
    return np.ascontiguousarray(z.real)


# --- spectral transforms -------------------------------------------------------


def forward(f):
    return sfft.fftn(f, axes=AXES)


def backward(fk):
    return sfft.ifftn(fk, axes=AXES)


def _finish(out, like):
    return out.real.copy() if not np.iscomplexobj(like) else out


def partial(f, axis, grid: Grid):
    """Spectral derivative along ``axis`` (0, 1, 2)."""
    require_finite(f)
    return _finish(backward(1j * grid.kvec[axis] * forward(f)), f)


def gradient(f, grid: Grid):
    """Spectral gradient; a new leading axis of length 3 is prepended."""
    require_finite(f, "gradient input")
    grid.check(f)
    fk = forward(f)
    return np.stack([_finish(backward(1j * k * fk), f) for k in grid.kvec])


def divergence(v, grid: Grid):
    require_finite(v, "divergence input")
    grid.check(v)
    vk = forward(v)
    total = sum(1j * grid.kvec[i] * vk[i] for i in range(3))
    return _finish(backward(total), v)


def curl(v, grid: Grid):
    require_finite(v, "curl input")
    grid.check(v)
    vk = forward(v)
    k = grid.kvec
    out = np.empty_like(vk)
    for i, j, l in LEVI_CIVITA:
        out[i] = 1j * (k[j] * vk[l] - k[l] * vk[j])
    return _finish(backward(out), v)


def laplacian(f, grid: Grid):
    require_finite(f, "laplacian input")
    grid.check(f)
    return _finish(backward(-grid.k2 * forward(f)), f)


def spinor_gradient(psi, grid: Grid):
    """Componentwise derivatives of a spinor (or orbital stack).

    Returns an array with a new leading axis of length 3: ``out[k] = d_k psi``.
    """
    require_finite(psi, "spinor")
    grid.check(psi)
    pk = forward(psi)
    return np.stack([backward(1j * k * pk) for k in grid.kvec])


def spinor_derivatives(psi, grid: Grid):
    """(gradient, laplacian) of a spinor stack from one forward transform."""
    require_finite(psi, "spinor")
    grid.check(psi)
    pk = forward(psi)
    grad = backward(np.stack([1j * k * pk for k in grid.kvec]))
    return grad, backward(-grid.k2 * pk)


def cross(a, b):
    """Pointwise cross product over the leading component axis."""
    return np.stack(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


# --- spinor algebra -------------------------------------------------------------


def sigma_apply(v, psi):
    """(sigma . v) psi for a vector ``v`` and spinor ``psi``.

    ``v`` may be real or complex with shape (3, ...) broadcastable against
    the spin-summed spinor components; ``psi`` has its spin axis at -4.
    """
    up = psi[..., 0, :, :, :]
    dn = psi[..., 1, :, :, :]
    vx, vy, vz = v[0], v[1], v[2]
    return np.stack([vz * up + (vx - 1j * vy) * dn, (vx + 1j * vy) * up - vz * dn], axis=-4)


def sigma_sum(w):
    """sum_i sigma_i w_i where ``w`` is a stack of three spinors (3, ..., 2, nx, ny, nz)."""
    up = w[:, ..., 0, :, :, :]
    dn = w[:, ..., 1, :, :, :]
    return np.stack(
        [up[2] + dn[0] - 1j * dn[1], up[0] + 1j * up[1] - dn[2]],
        axis=-4,
    )


def spin_bilinear(a, b):
    """Complex vector a^dagger sigma b, spin axis contracted."""
    a0, a1 = np.conj(a[..., 0, :, :, :]), np.conj(a[..., 1, :, :, :])
    b0, b1 = b[..., 0, :, :, :], b[..., 1, :, :, :]
    return np.stack([a0 * b1 + a1 * b0, -1j * a0 * b1 + 1j * a1 * b0, a0 * b0 - a1 * b1])


def density_bilinear(a, b):
    """a^dagger b, spin axis contracted."""
    return np.sum(np.conj(a) * b, axis=-4)


def spin_density(psi):
    """Real spin density psi^dagger sigma psi, shape (3, ...)."""
    require_finite(psi, "spinor")
    return as_real(spin_bilinear(psi, psi), "spin density", tol=1e-14)


def l2_inner(a, b, grid: Grid) -> complex:
    """<a, b> = sum a^dagger b * cell volume."""
    grid.check(a)
    grid.check(b)
    if a.shape != b.shape:
        raise GridMismatchError(f"inner product of shapes {a.shape} and {b.shape}")
    return complex(np.vdot(a, b) * grid.cell_volume)


def norm2(psi, grid: Grid) -> float:
    grid.check(psi)
    return float(np.vdot(psi, psi).real * grid.cell_volume)


def norm2_spectral(psi, grid: Grid) -> float:
    """Same as :func:`norm2` evaluated from Fourier coefficients (Parseval)."""
    pk = forward(psi)
    npts = float(np.prod(grid.n))
    return float(np.vdot(pk, pk).real / npts * grid.cell_volume)


def integrate(f, grid: Grid):
    """Box integral over the trailing grid axes."""
    return np.sum(f, axis=AXES) * grid.cell_volume


# --- orbitals -------------------------------------------------------------------


@dataclass
class OrbitalSet:
    """Orbitals (norb, 2, nx, ny, nz) with occupation weights, all on one grid."""

    psi: np.ndarray
    grid: Grid
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=complex)
        if psi.ndim == 4:
            psi = psi[None]
        if psi.ndim != 5 or psi.shape[1] != 2:
            raise ValueError(f"orbital array must be (norb, 2, nx, ny, nz), got {psi.shape}")
        self.grid.check(psi, "orbitals")
        self.psi = psi
        if self.weights is None:
            self.weights = np.ones(psi.shape[0])
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.shape[0] != psi.shape[0]:
            raise ValueError("one occupation weight per orbital required")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("occupations must be finite and non-negative")

    def __len__(self):
        return self.psi.shape[0]

    def like(self, psi):
        """Same grid and weights, different orbital data (e.g. time derivatives)."""
        return OrbitalSet(psi, self.grid, self.weights.copy())

    def weighted_sum(self, per_orbital):
        """Contract a per-orbital quantity (orbital axis first) with the weights."""
        return np.tensordot(self.weights, per_orbital, axes=(0, 0))

    def norms(self):
        return np.array([norm2(p, self.grid) for p in self.psi])


def as_orbitals(orbs, grid: Grid | None = None) -> OrbitalSet:
    if isinstance(orbs, OrbitalSet):
        return orbs
    if grid is None:
        raise TypeError("a grid is required when passing a bare spinor array")
    return OrbitalSet(orbs, grid)


def band_limited_noise(grid: Grid, lead=(), rng=None, fraction=1.0 / 3.0, complex_=False):
    """Random field whose spectrum fills only ``|k_i| <= fraction * k_nyq_i``.

    Output is scaled so that the largest magnitude equals 1.
    """
    rng = np.random.default_rng(rng)
    shape = tuple(lead) + grid.n
    coeff = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mask = np.ones(grid.n, dtype=bool)
    for axis, (n, k) in enumerate(zip(grid.n, grid._k_full)):
        kcut = fraction * np.pi * n / grid.L[axis]
        keep = np.abs(k) <= kcut + 1e-12
        mask &= keep.reshape([-1 if i == axis else 1 for i in range(3)])
    f = backward(coeff * mask)
    if not complex_:
        f = f.real
    return f / np.max(np.abs(f))
