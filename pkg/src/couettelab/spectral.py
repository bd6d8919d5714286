"""Fourier representation of real fields on the shear-periodic box.

Coefficients are stored as full complex arrays in FFT storage order and
normalised so that the (0, 0, 0) entry is the spatial mean::

    f(x) = sum_k  c_k exp(i k . x),      c_k = fftn(f) / N

The Couette transport ``y d_x`` is absorbed by the shearing frame
``X = x - s y`` (``s`` is the time since the last remap).  A fixed-frame
derivative then acts on a shear-frame label ``(k1, eta, k3)`` through the
effective wavenumber ``(k1, eta - s k1, k3)``.  Every operator below that
takes a :class:`ShearClock` uses these effective wavenumbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import MeanError, ShapeError, SymmetryError

TWO_PI = 2.0 * math.pi
AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


def _labels(n: int) -> np.ndarray:
    """Integer wavenumber labels in storage order, Nyquist taken as +n/2."""
    j = np.arange(n)
    return np.where(j <= n // 2, j, j - n)


@dataclass(frozen=True)
class Grid:
    """Collocation grid and wavenumber tables of a periodic box."""

    nx: int
    ny: int
    nz: int
    lx: float = TWO_PI
    ly: float = 4.0 * TWO_PI
    lz: float = TWO_PI

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ShapeError(f"{name}={n} must be an even integer >= 4")
        for name in ("lx", "ly", "lz"):
            if not getattr(self, name) > 0:
                raise ShapeError(f"{name} must be positive")
        if self.ly < TWO_PI * (1.0 - 1e-12):
            raise ShapeError(f"ly={self.ly} must be at least 2*pi")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def npoints(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def volume(self) -> float:
        return self.lx * self.ly * self.lz

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.lx / self.nx, self.ly / self.ny, self.lz / self.nz)

    @cached_property
    def labels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (_labels(self.nx), _labels(self.ny), _labels(self.nz))

    @cached_property
    def k1d(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        jx, jy, jz = self.labels
        return (TWO_PI * jx / self.lx, TWO_PI * jy / self.ly, TWO_PI * jz / self.lz)

    @cached_property
    def kx(self) -> np.ndarray:
        return self.k1d[0][:, None, None]

    @cached_property
    def ky(self) -> np.ndarray:
        return self.k1d[1][None, :, None]

    @cached_property
    def kz(self) -> np.ndarray:
        return self.k1d[2][None, None, :]

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable collocation coordinates (x, y, z)."""
        x = np.arange(self.nx) * (self.lx / self.nx)
        y = np.arange(self.ny) * (self.ly / self.ny)
        z = np.arange(self.nz) * (self.lz / self.nz)
        return (x[:, None, None], y[None, :, None], z[None, None, :])

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = [3 * np.abs(j) <= n for j, n in zip(self.labels, self.shape)]
        return keep[0][:, None, None] & keep[1][None, :, None] & keep[2][None, None, :]

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on every plane holding a Nyquist label in some axis."""
        ny = [j == n // 2 for j, n in zip(self.labels, self.shape)]
        return ny[0][:, None, None] | ny[1][None, :, None] | ny[2][None, None, :]

    @cached_property
    def zero_mode_mask(self) -> np.ndarray:
        return np.broadcast_to((self.labels[0] == 0)[:, None, None], self.shape)

    def k_eff(self, clock: "ShearClock | None" = None):
        """Fixed-frame wavenumbers (k1, eta - s k1, k3) seen from the shear frame."""
        s = 0.0 if clock is None else clock.s
        if s == 0.0:
            return self.kx, self.ky, self.kz
        return self.kx, self.ky - s * self.kx, self.kz

    def ksq(self, clock: "ShearClock | None" = None) -> np.ndarray:
        kx, ky, kz = self.k_eff(clock)
        return kx * kx + ky * ky + kz * kz

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.nx * factor, self.ny * factor, self.nz * factor, self.lx, self.ly, self.lz)


@dataclass(frozen=True)
class ShearClock:
    """Absolute time ``t`` and time ``s`` since the last shear remap."""

    t: float = 0.0
    s: float = 0.0

    def advanced(self, dt: float) -> "ShearClock":
        return ShearClock(self.t + dt, self.s + dt)


class SpectralField:
    """Fourier coefficients of one real scalar field."""

    __slots__ = ("grid", "coeffs")

    def __init__(self, grid: Grid, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != grid.shape:
            raise ShapeError(f"coefficient shape {coeffs.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    def _other(self, other):
        if isinstance(other, SpectralField):
            if other.grid != self.grid:
                raise ShapeError("fields live on different grids")
            return other.coeffs
        return NotImplemented

    def __add__(self, other):
        c = self._other(other)
        if c is NotImplemented:
            return c
        return SpectralField(self.grid, self.coeffs + c)

    def __sub__(self, other):
        c = self._other(other)
        if c is NotImplemented:
            return c
        return SpectralField(self.grid, self.coeffs - c)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SpectralField(self.grid, self.coeffs / scalar)

    def __repr__(self):
        return f"SpectralField(grid={self.grid.shape}, max|c|={np.abs(self.coeffs).max():.3e})"


# -- transforms ---------------------------------------------------------------

def _conj_flip(c: np.ndarray) -> np.ndarray:
    """Array whose entry at k is conj(c[-k]) (indices mod n)."""
    return np.conj(np.roll(np.flip(c), 1, axis=(0, 1, 2)))


def hermitian_residual(coeffs: np.ndarray) -> float:
    """max |c(-k) - conj c(k)| relative to max |c|."""
    scale = np.abs(coeffs).max()
    if scale == 0.0:
        return 0.0
    return float(np.abs(coeffs - _conj_flip(coeffs)).max() / scale)


def to_spectral(field: np.ndarray, grid: Grid) -> SpectralField:
    field = np.asarray(field)
    if field.shape != grid.shape:
        raise ShapeError(f"array shape {field.shape} does not match grid {grid.shape}")
    if np.iscomplexobj(field):
        raise ShapeError("to_spectral expects a real collocation array")
    c = sfft.fftn(field.astype(np.float64), workers=-1)
    c /= grid.npoints
    # exact Hermitian symmetry: average c(k) with conj c(-k)
    c = 0.5 * (c + _conj_flip(c))
    return SpectralField(grid, c)


def _pad_axis(c: np.ndarray, axis: int, m: int) -> np.ndarray:
    n = c.shape[axis]
    if m == n:
        return c
    shape = list(c.shape)
    shape[axis] = m
    out = np.zeros(shape, dtype=c.dtype)
    h = n // 2
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    src[axis], dst[axis] = slice(0, h), slice(0, h)
    out[tuple(dst)] = c[tuple(src)]
    src[axis], dst[axis] = slice(h + 1, n), slice(m - h + 1, m)
    out[tuple(dst)] = c[tuple(src)]
    # split the Nyquist coefficient between +h and -h
    src[axis] = h
    dst[axis] = h
    out[tuple(dst)] = 0.5 * c[tuple(src)]
    dst[axis] = m - h
    out[tuple(dst)] = 0.5 * c[tuple(src)]
    return out


def padded_coeffs(f: SpectralField, factor: int) -> np.ndarray:
    c = f.coeffs
    for axis, n in enumerate(f.grid.shape):
        c = _pad_axis(c, axis, n * factor)
    return c


def to_physical(f: SpectralField, oversample: int = 1, check: bool = True) -> np.ndarray:
    """Real collocation values; ``oversample`` > 1 evaluates on a finer grid."""
    c = f.coeffs if oversample == 1 else padded_coeffs(f, oversample)
    out = sfft.ifftn(c, workers=-1)
    out *= c.size
    if check:
        scale = np.abs(out.real).max()
        resid = np.abs(out.imag).max()
        if resid > 1e-12 * scale and resid > 1e-300:
            raise SymmetryError(f"imaginary residue {resid:.3e} relative to {scale:.3e}; coefficients are not Hermitian")
    return np.ascontiguousarray(out.real)


# -- spectral calculus ----------------------------------------------------------

def derivative(f: SpectralField, axis, clock: ShearClock | None = None) -> SpectralField:
    """Fixed-frame partial derivative evaluated in the shear frame.

    Nyquist planes are zeroed: their conjugate partner is not stored, so an
    odd multiplier would break the Hermitian symmetry.
    """
    k = f.grid.k_eff(clock)[AXES[axis]]
    c = 1j * k * f.coeffs
    c[f.grid.nyquist_mask] = 0.0
    return SpectralField(f.grid, c)


def gradient(f: SpectralField, clock: ShearClock | None = None) -> tuple[SpectralField, SpectralField, SpectralField]:
    return tuple(derivative(f, a, clock) for a in range(3))


def laplacian(f: SpectralField, clock: ShearClock | None = None) -> SpectralField:
    c = -f.grid.ksq(clock) * f.coeffs
    c[f.grid.nyquist_mask] = 0.0
    return SpectralField(f.grid, c)


def check_zero_mean(coeffs: np.ndarray, what: str = "source") -> None:
    norm = math.sqrt(float(np.sum(np.abs(coeffs) ** 2)))
    mean = abs(coeffs[0, 0, 0])
    if mean > 1e-12 * norm and mean > 1e-300:
        raise MeanError(f"{what} has mean {mean:.3e} (field norm {norm:.3e}); Poisson problem unsolvable")


def inverse_laplacian(f: SpectralField, clock: ShearClock | None = None) -> SpectralField:
    check_zero_mean(f.coeffs)
    k2 = f.grid.ksq(clock).copy()
    k2[0, 0, 0] = 1.0
    c = -f.coeffs / k2
    c[0, 0, 0] = 0.0
    c[f.grid.nyquist_mask] = 0.0
    return SpectralField(f.grid, c)


def dealias(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, np.where(f.grid.dealias_mask, f.coeffs, 0.0))


def project_zero(f: SpectralField) -> SpectralField:
    c = np.zeros_like(f.coeffs)
    c[0] = f.coeffs[0]
    return SpectralField(f.grid, c)


def project_nonzero(f: SpectralField) -> SpectralField:
    c = f.coeffs.copy()
    c[0] = 0.0
    return SpectralField(f.grid, c)


def spectral_energy(f: SpectralField, weight: np.ndarray | float = 1.0) -> float:
    """vol * sum weight |c_k|^2, i.e. the squared L2 norm of the multiplied field."""
    return float(f.grid.volume * np.sum(weight * (f.coeffs.real ** 2 + f.coeffs.imag ** 2)))


def sobolev_norm(f: SpectralField, order: int, clock: ShearClock | None = None) -> float:
    if order not in (0, 1, 2, 3, 4):
        raise ValueError(f"Sobolev order {order} not in 0..4")
    if order == 0:
        return math.sqrt(spectral_energy(f))
    return math.sqrt(spectral_energy(f, (1.0 + f.grid.ksq(clock)) ** order))


def l2_norm(f: SpectralField) -> float:
    return math.sqrt(spectral_energy(f))


def product(*fields: SpectralField) -> SpectralField:
    """Pseudo-spectral product formed in physical space, then dealiased."""
    grid = fields[0].grid
    out = to_physical(fields[0])
    for g in fields[1:]:
        out = out * to_physical(g)
    return dealias(to_spectral(out, grid))


def leray_project(u: tuple, clock: ShearClock | None = None) -> tuple:
    """Remove the gradient part of a vector field with clock-corrected wavenumbers."""
    grid = u[0].grid
    kx, ky, kz = grid.k_eff(clock)
    k2 = grid.ksq(clock).copy()
    k2[0, 0, 0] = 1.0
    div = (kx * u[0].coeffs + ky * u[1].coeffs + kz * u[2].coeffs) / k2
    out = []
    for k, comp in zip((kx, ky, kz), u):
        c = comp.coeffs - k * div
        c[grid.nyquist_mask] = 0.0
        out.append(SpectralField(grid, c))
    return tuple(out)


def divergence(u: tuple, clock: ShearClock | None = None) -> SpectralField:
    d = derivative(u[0], 0, clock)
    d = d + derivative(u[1], 1, clock)
    return d + derivative(u[2], 2, clock)


def zero_nyquist(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, np.where(f.grid.nyquist_mask, 0.0, f.coeffs))


def reflect_z(f: SpectralField, sign: float = 1.0) -> SpectralField:
    """Coefficients of sign * f(x, y, -z)."""
    c = np.roll(np.flip(f.coeffs, axis=2), 1, axis=2)
    return SpectralField(f.grid, sign * c)
