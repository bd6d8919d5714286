"""Seeded random band-limited fields with exact structural constraints."""

from __future__ import annotations

import numpy as np

from .errors import GeneratorError
from .spectral import (
    Grid,
    SpectralField,
    _conj_flip,
    dealias,
    derivative,
    leray_project,
    to_physical,
    to_spectral,
)

CONSTRAINTS = {"none", "div_free", "zero_mean", "zero_x_mode", "x_independent"}


def _normalise_constraints(constraints) -> set[str]:
    if constraints is None:
        return set()
    if isinstance(constraints, str):
        constraints = {constraints}
    out = set(constraints)
    bad = out - CONSTRAINTS
    if bad:
        raise GeneratorError(f"unknown constraints {sorted(bad)}; choose from {sorted(CONSTRAINTS)}")
    out.discard("none")
    return out


def band_mask(grid: Grid, band: int | None) -> np.ndarray:
    """Modes with |j| <= band on every axis (dealias band when ``band`` is None)."""
    if band is None:
        return grid.dealias_mask & ~grid.nyquist_mask
    keep = [np.abs(j) <= band for j in grid.labels]
    return keep[0][:, None, None] & keep[1][None, :, None] & keep[2][None, None, :] & ~grid.nyquist_mask


def _random_scalar(grid: Grid, rng: np.random.Generator, decay: float, mask: np.ndarray) -> np.ndarray:
    z = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    z = 0.5 * (z + _conj_flip(z))
    mag = np.abs(z)
    mag[mag == 0.0] = 1.0
    phase = z / mag
    amp = (1.0 + grid.ksq()) ** (-0.5 * decay)
    return np.where(mask, amp * phase, 0.0)


def _localise(c: np.ndarray, grid: Grid, width: float, mask: np.ndarray) -> np.ndarray:
    phys = to_physical(SpectralField(grid, c))
    y = grid.coords[1]
    phys = phys * np.exp(-((y - 0.5 * grid.ly) ** 2) / (2.0 * width * width))
    out = to_spectral(phys, grid).coeffs
    return np.where(mask, out, 0.0)


def _apply_scalar_constraints(c: np.ndarray, cons: set[str]) -> np.ndarray:
    if "zero_x_mode" in cons:
        c[0] = 0.0
    if "x_independent" in cons:
        c[1:] = 0.0
    if "zero_mean" in cons:
        c[0, 0, 0] = 0.0
    return c


def random_band_limited(
    grid: Grid,
    decay_exponent: float,
    seed: int,
    constraints=None,
    band: int | None = None,
    y_envelope: float | None = None,
):
    """Random real field with |c_k| ~ (1+|k|^2)^(-decay/2) and uniform phases.

    Returns one :class:`SpectralField`, or a 3-tuple of velocity components
    when ``"div_free"`` is among the constraints.  Constraints are enforced
    exactly after band limiting.  ``y_envelope`` multiplies by a Gaussian of
    that width centred in the box, which mimics decay in the unbounded
    direction.
    """
    if decay_exponent < 0:
        raise GeneratorError("decay_exponent must be >= 0")
    cons = _normalise_constraints(constraints)
    if "zero_x_mode" in cons and "x_independent" in cons:
        raise GeneratorError("zero_x_mode and x_independent leave nothing")
    rng = np.random.default_rng(seed)
    mask = band_mask(grid, band)

    if "div_free" not in cons:
        c = _random_scalar(grid, rng, decay_exponent, mask)
        if y_envelope is not None:
            c = _localise(c, grid, y_envelope, mask)
        return SpectralField(grid, _apply_scalar_constraints(c, cons))

    if y_envelope is None:
        comps = [_random_scalar(grid, rng, decay_exponent, mask) for _ in range(3)]
        comps = [_apply_scalar_constraints(c, cons) for c in comps]
        return leray_project(tuple(SpectralField(grid, c) for c in comps))

    # localised fields: curl of a localised potential keeps the support local
    pot = []
    for _ in range(3):
        c = _random_scalar(grid, rng, decay_exponent + 1.0, mask)
        c = _localise(c, grid, y_envelope, mask)
        pot.append(SpectralField(grid, _apply_scalar_constraints(c, cons)))
    a1, a2, a3 = pot
    u1 = derivative(a3, 1) - derivative(a2, 2)
    u2 = derivative(a1, 2) - derivative(a3, 0)
    u3 = derivative(a2, 0) - derivative(a1, 1)
    out = []
    for comp in (u1, u2, u3):
        c = comp.coeffs
        if "zero_mean" in cons:
            c[0, 0, 0] = 0.0
        out.append(SpectralField(grid, c))
    return tuple(out)


def von_mises_bump(grid: Grid, concentration: float) -> np.ndarray:
    """Smooth periodic bump in y, equal to 1 at the box centre."""
    y = grid.coords[1]
    return np.exp(concentration * (np.cos(2.0 * np.pi * (y - 0.5 * grid.ly) / grid.ly) - 1.0))


def streamwise_rolls(grid: Grid, delta: float, kz_index: int = 1, bump_concentration: float | None = 2.0):
    """Zero-mode rolls ``u2 = delta cos(kz z) b(y)`` with ``u3`` fixed by incompressibility.

    Built from the streamfunction ``psi = delta sin(kz z) b(y) / kz`` so the
    divergence vanishes to round-off.  ``bump_concentration=None`` gives b = 1.
    """
    kz = 2.0 * np.pi * kz_index / grid.lz
    if kz_index < 1 or 3 * kz_index > grid.nz:
        raise GeneratorError(f"roll index {kz_index} outside the resolved band")
    z = grid.coords[2]
    bump = 1.0 if bump_concentration is None else von_mises_bump(grid, bump_concentration)
    psi = (delta / kz) * np.sin(kz * z) * bump * np.ones(grid.shape)
    psi_hat = dealias(to_spectral(psi, grid))
    u1 = SpectralField.zeros(grid)
    u2 = derivative(psi_hat, 2)
    u3 = -derivative(psi_hat, 1)
    return u1, u2, u3
