"""Shear-frame integration of the Boussinesq perturbation system around Couette flow.

Unknowns are the velocity perturbation ``u = (u1, u2, u3)``, the temperature
perturbation ``theta`` and the split of the streamwise zero mode
``P0 u1 = u10_hat + u10_tilde``.  In the shear frame the Couette transport
disappears; diffusion is applied through the exact per-mode integrating
factor and everything else (lift-up ``-u2 e1``, buoyancy ``g theta e2``,
advection, pressure) is advanced explicitly with a two-stage Runge-Kutta
scheme.  Pressure enters through a Leray projection plus the correction that
accounts for the moving wall-normal wavenumber; the explicit Poisson solves
below (``pressure_solve``, ``pressure_decomposition``) are diagnostics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from .errors import CFLError, GeneratorError, ParameterError, RemapPhaseError, SplitDriftError
from .generators import random_band_limited, streamwise_rolls, von_mises_bump
from .spectral import (
    Grid,
    ShearClock,
    SpectralField,
    _conj_flip,
    dealias,
    derivative,
    divergence,
    inverse_laplacian,
    l2_norm,
    laplacian,
    leray_project,
    project_nonzero,
    project_zero,
    sobolev_norm,
    to_physical,
    to_spectral,
)

log = logging.getLogger(__name__)

FIELDS = ("u1", "u2", "u3", "theta", "u10_hat", "u10_tilde")
SPLIT_DRIFT_TOL = 1e-6


@dataclass(frozen=True)
class Params:
    nu: float
    mu: float | None = None
    g: float = 1.0
    a: float = 0.05
    b: float = 0.08
    dt: float = 0.1
    t_end: float = 10.0
    eps0: float = 0.05
    remap_period: float | None = None
    cfl: float = 0.5

    def __post_init__(self):
        if self.mu is None:
            object.__setattr__(self, "mu", self.nu)
        for name in ("nu", "mu"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ParameterError(f"{name}={v} must lie in (0, 1]")
        if not 0.0 < self.a < self.b < 2.0 * self.a:
            raise ParameterError(f"weights need 0 < a < b < 2a, got a={self.a}, b={self.b}")
        if not self.dt > 0.0 or not self.t_end > 0.0:
            raise ParameterError("dt and t_end must be positive")
        if self.remap_period is not None and not self.remap_period > 0.0:
            raise ParameterError("remap_period must be positive (math.inf disables remapping)")

    @property
    def nu13(self) -> float:
        return self.nu ** (1.0 / 3.0)

    def remap_interval(self, grid: Grid) -> float:
        """Shear time after which the wall-normal labels move by whole lattice steps."""
        return grid.lx / grid.ly if self.remap_period is None else self.remap_period


@dataclass(frozen=True)
class State:
    u1: SpectralField
    u2: SpectralField
    u3: SpectralField
    theta: SpectralField
    u10_hat: SpectralField
    u10_tilde: SpectralField
    clock: ShearClock = field(default_factory=ShearClock)
    lost_energy: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.u1.grid

    @property
    def velocity(self) -> tuple[SpectralField, SpectralField, SpectralField]:
        return (self.u1, self.u2, self.u3)

    @classmethod
    def zeros(cls, grid: Grid) -> "State":
        return cls(*(SpectralField.zeros(grid) for _ in FIELDS))

    @classmethod
    def from_fields(cls, velocity, theta, u10_hat=None, clock=None) -> "State":
        """State with the split initialised as ``u10_tilde = P0 u1 - u10_hat``."""
        grid = velocity[0].grid
        u10_hat = SpectralField.zeros(grid) if u10_hat is None else project_zero(u10_hat)
        tilde = project_zero(velocity[0]) - u10_hat
        return cls(*velocity, theta, u10_hat, tilde, clock or ShearClock())

    def arrays(self) -> np.ndarray:
        return np.stack([getattr(self, f).coeffs for f in FIELDS])

    @classmethod
    def from_arrays(cls, grid: Grid, arr: np.ndarray, clock: ShearClock, lost_energy: float = 0.0) -> "State":
        return cls(*(SpectralField(grid, arr[i]) for i in range(len(FIELDS))), clock, lost_energy)

    def scaled(self, c: float) -> "State":
        return replace(self, **{f: getattr(self, f) * c for f in FIELDS})


@dataclass(frozen=True)
class Tendency:
    u1: SpectralField
    u2: SpectralField
    u3: SpectralField
    theta: SpectralField
    u10_hat: SpectralField
    u10_tilde: SpectralField


@dataclass(frozen=True)
class InitSpec:
    """Initial-data recipe; amplitudes are the H^2 norms after rescaling."""

    template: str = "rolls_noise"
    amp_u: float = 0.0
    amp_theta: float = 0.0
    seed: int = 0
    mode: tuple[float, float, float] = (1.0, 0.0, 1.0)
    noise_fraction: float = 0.2
    decay_exponent: float = 4.0
    roll_index: int = 1
    bump_concentration: float | None = 2.0


TEMPLATES = ("zero", "single_mode", "random", "rolls", "rolls_noise")


# -- initial data ---------------------------------------------------------------

def velocity_h2(u) -> float:
    return math.sqrt(sum(sobolev_norm(c, 2) ** 2 for c in u))


def _single_mode(grid: Grid, mode):
    labels = []
    for k, L, n in zip(mode, (grid.lx, grid.ly, grid.lz), grid.shape):
        j = k * L / (2.0 * math.pi)
        if abs(j - round(j)) > 1e-9 or 3 * abs(round(j)) > n:
            raise GeneratorError(f"wavenumber {k} is not a resolved lattice value for period {L}")
        labels.append(int(round(j)))
    if labels == [0, 0, 0]:
        raise GeneratorError("single_mode needs a nonzero wavenumber")
    x, y, z = grid.coords
    phase = mode[0] * x + mode[1] * y + mode[2] * z
    wave = to_spectral(np.cos(phase) * np.ones(grid.shape), grid)
    zero = SpectralField.zeros(grid)
    for direction in ((0, 1, 0), (0, 0, 1), (1, 0, 0)):
        cand = tuple(wave if d else zero for d in direction)
        u = leray_project(cand)
        if velocity_h2(u) > 0.1 * sobolev_norm(wave, 2):
            return u, wave
    raise GeneratorError("could not build a divergence-free single mode")


def _template(spec: InitSpec, grid: Grid):
    t = spec.template
    zero = SpectralField.zeros(grid)
    if t == "zero":
        return (zero, zero, zero), zero
    if t == "single_mode":
        return _single_mode(grid, spec.mode)
    if t == "random":
        u = random_band_limited(grid, spec.decay_exponent, spec.seed, ("div_free", "zero_mean"))
        th = random_band_limited(grid, spec.decay_exponent, spec.seed + 7919, "zero_mean")
        return u, th
    if t in ("rolls", "rolls_noise"):
        u = streamwise_rolls(grid, 1.0, spec.roll_index, spec.bump_concentration)
        kz = 2.0 * math.pi * spec.roll_index / grid.lz
        z = grid.coords[2]
        bump = 1.0 if spec.bump_concentration is None else von_mises_bump(grid, spec.bump_concentration)
        th = dealias(to_spectral(np.cos(kz * z) * bump * np.ones(grid.shape), grid))
        if t == "rolls_noise":
            noise = random_band_limited(grid, spec.decay_exponent, spec.seed, ("div_free", "zero_x_mode"))
            scale = spec.noise_fraction * velocity_h2(u) / velocity_h2(noise)
            u = tuple(a + b * scale for a, b in zip(u, noise))
            th = random_band_limited(grid, spec.decay_exponent, spec.seed + 7919, "zero_mean")
        return u, th
    raise GeneratorError(f"unknown template {t!r}; choose from {TEMPLATES}")


def initial_data(spec: InitSpec, grid: Grid, params: Params | None = None) -> State:
    """Divergence-free initial state with exact H^2 amplitudes (amp_u, amp_theta)."""
    if spec.amp_u < 0 or spec.amp_theta < 0:
        raise GeneratorError("amplitudes must be nonnegative")
    u, th = _template(spec, grid)
    nu_ = velocity_h2(u)
    nt = sobolev_norm(th, 2)
    if spec.amp_u > 0 and nu_ == 0.0:
        raise GeneratorError(f"template {spec.template!r} has no velocity to rescale")
    if spec.amp_theta > 0 and nt == 0.0:
        raise GeneratorError(f"template {spec.template!r} has no temperature to rescale")
    u = tuple(c * (spec.amp_u / nu_) if nu_ > 0 else c * 0.0 for c in u)
    th = th * (spec.amp_theta / nt) if nt > 0 else th * 0.0
    return State.from_fields(u, th)


# -- explicit terms --------------------------------------------------------------

def _ifft(c: np.ndarray) -> np.ndarray:
    out = sfft.ifftn(c, workers=-1)
    return out.real * c.size


def _fft(p: np.ndarray) -> np.ndarray:
    c = sfft.fftn(p, workers=-1)
    c /= p.size
    return 0.5 * (c + _conj_flip(c))


def _ifft2(c: np.ndarray) -> np.ndarray:
    return sfft.ifft2(c, workers=-1).real * c.size


def _fft2(p: np.ndarray) -> np.ndarray:
    c = sfft.fft2(p, workers=-1) / p.size
    return 0.5 * (c + np.conj(np.roll(np.flip(c), 1, axis=(0, 1))))


def _multipliers(grid: Grid, clock: ShearClock):
    nyq = grid.nyquist_mask
    return [np.where(nyq, 0.0, 1j * k) for k in grid.k_eff(clock)]


def _explicit(grid: Grid, clock: ShearClock, params: Params, c: np.ndarray):
    """Explicit tendencies of all six fields plus the CFL rate."""
    U, TH, UH, UT = c[0:3], c[3], c[4], c[5]
    D = _multipliers(grid, clock)
    mask = grid.dealias_mask
    mask0 = mask[0]

    u = [_ifft(U[i]) for i in range(3)]
    du = [[_ifft(D[j] * U[i]) for j in range(3)] for i in range(3)]
    adv = [np.where(mask, _fft(u[0] * du[i][0] + u[1] * du[i][1] + u[2] * du[i][2]), 0.0) for i in range(3)]
    dth = [_ifft(D[j] * TH) for j in range(3)]
    adv_th = np.where(mask, _fft(u[0] * dth[0] + u[1] * dth[1] + u[2] * dth[2]), 0.0)

    # zero modes are x-independent: work on the (y, z) plane
    u0 = [_ifft2(U[i][0]) for i in range(3)]
    Dy0, Dz0 = D[1][0], D[2][0]

    def zero_adv(W):
        return np.where(mask0, _fft2(u0[1] * _ifft2(Dy0 * W[0]) + u0[2] * _ifft2(Dz0 * W[0])), 0.0)

    adv_hat = zero_adv(UH)
    adv_tilde = zero_adv(UT)
    u_ne = [u[j] - u0[j][None] for j in range(3)]
    du1_ne = [du[0][0], du[0][1] - _ifft2(Dy0 * U[0][0])[None], du[0][2] - _ifft2(Dz0 * U[0][0])[None]]
    nn = (u_ne[0] * du1_ne[0] + u_ne[1] * du1_ne[1] + u_ne[2] * du1_ne[2]).mean(axis=0)
    nn_hat = np.where(mask0, _fft2(nn), 0.0)

    out = np.zeros_like(c)
    nv = [-adv[0] - U[1], -adv[1] + params.g * TH, -adv[2]]
    kx, ky, kz = grid.k_eff(clock)
    k2 = grid.ksq(clock).copy()
    k2[0, 0, 0] = 1.0
    # Leray projection plus the pressure share that keeps div u = 0 while eta - s k1 moves
    corr = (kx * nv[0] + ky * nv[1] + kz * nv[2] - kx * U[1]) / k2
    for i, k in enumerate((kx, ky, kz)):
        out[i] = np.where(grid.nyquist_mask, 0.0, nv[i] - k * corr)
    out[3] = -adv_th
    out[4][0] = -U[1][0] - adv_hat
    out[5][0] = -adv_tilde - nn_hat

    dx, dy, dz = grid.spacing
    rate = float(np.max(np.abs(u[0] - clock.s * u[1]) / dx + np.abs(u[1]) / dy + np.abs(u[2]) / dz))
    return out, rate


def nonlinear_rhs(state: State, params: Params) -> Tendency:
    """Explicit part of the tendency (everything except diffusion), per field."""
    out, _ = _explicit(state.grid, state.clock, params, state.arrays())
    return Tendency(*(SpectralField(state.grid, out[i]) for i in range(len(FIELDS))))


def full_tendency(state: State, params: Params) -> Tendency:
    """Shear-frame time derivative: explicit terms plus fixed-frame diffusion."""
    rhs = nonlinear_rhs(state, params)
    diff = []
    for name in FIELDS:
        kappa = params.mu if name == "theta" else params.nu
        diff.append(getattr(rhs, name) + kappa * laplacian(getattr(state, name), state.clock))
    return Tendency(*diff)


# -- pressure diagnostics --------------------------------------------------------

def _advection(u, f, clock) -> SpectralField:
    up = [to_physical(c) for c in u]
    acc = sum(up[j] * to_physical(derivative(f, j, clock)) for j in range(3))
    return dealias(to_spectral(acc, f.grid))


def pressure_solve(state: State, params: Params | None = None):
    """The three pressures of the perturbation system, each with zero mean."""
    clock = state.clock
    g = 1.0 if params is None else params.g
    u = state.velocity
    pn1 = inverse_laplacian(-2.0 * derivative(state.u2, 0, clock), clock)
    adv = [_advection(u, c, clock) for c in u]
    pn2 = inverse_laplacian(-divergence(adv, clock), clock)
    pn3 = inverse_laplacian(g * derivative(state.theta, 1, clock), clock)
    return pn1, pn2, pn3


def _grad_products(a, b, clock, pairs) -> SpectralField:
    """sum over (i, j) in pairs of d_i a_j * d_j b_i, formed pseudo-spectrally."""
    grid = a[0].grid
    acc = np.zeros(grid.shape)
    for i, j in pairs:
        acc = acc + to_physical(derivative(a[j], i, clock)) * to_physical(derivative(b[i], j, clock))
    return dealias(to_spectral(acc, grid))


def pressure_decomposition(state: State, params: Params | None = None) -> dict[str, SpectralField]:
    """Split of the quadratic pressure into zero/non-zero interactions.

    Keys ``P0`` .. ``P4`` sum to ``N2``; ``P5 = N1 + P1``.  The three pressures
    of :func:`pressure_solve` are included as ``N1``, ``N2``, ``N3``.
    """
    clock = state.clock
    u0 = [project_zero(c) for c in state.velocity]
    une = [project_nonzero(c) for c in state.velocity]
    hat, tilde = state.u10_hat, state.u10_tilde
    full = [(i, j) for i in range(3) for j in range(3)]
    cross = [(i, j) for i in (1, 2) for j in (1, 2)]

    def lift(w):
        acc = to_physical(derivative(w, 1, clock)) * to_physical(derivative(une[1], 0, clock))
        acc = acc + to_physical(derivative(w, 2, clock)) * to_physical(derivative(une[2], 0, clock))
        return -2.0 * dealias(to_spectral(acc, w.grid))

    sources = {
        "P0": lift(tilde),
        "P1": lift(hat),
        "P2": -1.0 * _grad_products(u0, u0, clock, full),
        # d_a u_{b,0} d_b u_{a,ne} with a, b in {y, z}
        "P3": -2.0 * _grad_products(u0, une, clock, cross),
        "P4": -1.0 * _grad_products(une, une, clock, full),
    }
    out = {k: inverse_laplacian(v, clock) for k, v in sources.items()}
    pn1, pn2, pn3 = pressure_solve(state, params)
    out["N1"], out["N2"], out["N3"] = pn1, pn2, pn3
    out["P5"] = pn1 + out["P1"]
    return out


def compute_hj(state: State, j: int, pressures: dict | None = None) -> SpectralField:
    """Good nonlinear terms of the u2 (j=2) or u3 (j=3) equation."""
    if j not in (2, 3):
        raise ValueError("j must be 2 or 3")
    clock = state.clock
    p = pressures if pressures is not None else pressure_decomposition(state)
    uj = state.velocity[j - 1]
    u0 = [project_zero(c) for c in state.velocity]
    une = [project_nonzero(c) for c in state.velocity]
    zero_part = to_physical(u0[1]) * to_physical(derivative(uj, 1, clock))
    zero_part = zero_part + to_physical(u0[2]) * to_physical(derivative(uj, 2, clock))
    h = dealias(to_spectral(zero_part, uj.grid)) + _advection(une, uj, clock)
    return h + derivative(p["P0"] + p["P2"] + p["P3"] + p["P4"], j - 1, clock)


# -- time stepping ---------------------------------------------------------------

def diffusion_factor(grid: Grid, diffusivity: float, s0: float, dt: float) -> np.ndarray:
    """exp(-D * integral of |k_eff(sigma)|^2 over [s0, s0 + dt]), per mode.

    With ``m = eta - (s0 + dt/2) k1`` the integral is exactly
    ``dt * (k1^2 + k3^2 + m^2 + k1^2 dt^2 / 12)``.
    """
    kx, ky, kz = grid.kx, grid.ky, grid.kz
    m = ky - (s0 + 0.5 * dt) * kx
    return np.exp(-diffusivity * dt * (kx * kx + kz * kz + m * m + kx * kx * (dt * dt / 12.0)))


def kelvin_amplitude_factor(k1: float, eta: float, k3: float, nu: float, t: float) -> float:
    """Closed-form decay of a passive Kelvin mode started at label (k1, eta, k3)."""
    return math.exp(-nu * ((k1 * k1 + eta * eta + k3 * k3) * t - k1 * eta * t * t + k1 * k1 * t ** 3 / 3.0))


def _project_arrays(grid: Grid, c: np.ndarray, clock: ShearClock) -> None:
    u = leray_project(tuple(SpectralField(grid, c[i]) for i in range(3)), clock)
    for i in range(3):
        c[i] = u[i].coeffs


def split_drift(state: State) -> float:
    """Relative mismatch ||u10_hat + u10_tilde - P0 u1|| / ||P0 u1||."""
    p0 = state.u1.coeffs[0]
    diff = state.u10_hat.coeffs[0] + state.u10_tilde.coeffs[0] - p0
    ref = float(np.sqrt(np.sum(np.abs(p0) ** 2)))
    err = float(np.sqrt(np.sum(np.abs(diff) ** 2)))
    if ref == 0.0:
        return err
    return err / ref


def divergence_ratio(state: State) -> float:
    """L2 norm of div u relative to the L2 norm of grad u."""
    div = l2_norm(divergence(state.velocity, state.clock))
    grad = math.sqrt(sum(l2_norm(derivative(c, j, state.clock)) ** 2 for c in state.velocity for j in range(3)))
    return div / grad if grad > 0 else div


def step(state: State, params: Params) -> State:
    """One IMEX step: Heun RK2 on the explicit terms, exact integrating factor for diffusion."""
    grid = state.grid
    period = params.remap_interval(grid)
    s0 = state.clock.s
    dt = params.dt
    if math.isfinite(period):
        remaining = period - s0
        if dt >= remaining - 1e-9 * period:
            dt = remaining  # land exactly on the remap time
    c0 = state.arrays()
    k1, rate = _explicit(grid, state.clock, params, c0)
    if dt * rate > params.cfl:
        suggested = params.cfl / rate
        raise CFLError(f"dt={dt:.4g} exceeds the advective bound at t={state.clock.t:.4g}; use dt <= {suggested:.4g}", suggested)

    e_nu = diffusion_factor(grid, params.nu, s0, dt)
    e_mu = e_nu if params.mu == params.nu else diffusion_factor(grid, params.mu, s0, dt)
    E = np.stack([e_nu, e_nu, e_nu, e_mu, e_nu, e_nu])
    c_mid = E * (c0 + dt * k1)
    clock1 = ShearClock(state.clock.t + dt, s0 + dt)
    if math.isfinite(period) and dt == period - s0:
        clock1 = ShearClock(state.clock.t + dt, period)
    k2, _ = _explicit(grid, clock1, params, c_mid)
    c1 = E * (c0 + 0.5 * dt * k1) + 0.5 * dt * k2
    _project_arrays(grid, c1, clock1)
    c1[:, ~grid.dealias_mask] = 0.0

    new = State.from_arrays(grid, c1, clock1, state.lost_energy)
    if math.isfinite(period) and clock1.s >= period:
        new = remap(new)
    drift = split_drift(new)
    if drift > SPLIT_DRIFT_TOL:
        raise SplitDriftError(f"zero-mode split drift {drift:.3e} exceeds {SPLIT_DRIFT_TOL:g} at t={new.clock.t:.4g}")
    return new


def remap(state: State) -> State:
    """Relabel eta -> eta - s k1 and reset the shear clock.

    The shift ``s ly / lx`` must be an integer.  Modes pushed outside the
    dealiased band are dropped and their L2 energy is added to
    ``state.lost_energy``.
    """
    grid = state.grid
    s = state.clock.s
    if s == 0.0:
        return state
    out, lost = remap_arrays(grid, state.arrays(), s, energy_fields=4)
    if lost > 0.0:
        log.debug("remap at t=%.6g dropped energy %.3e", state.clock.t, lost)
    return State.from_arrays(grid, out, ShearClock(state.clock.t, 0.0), state.lost_energy + lost)


def remap_shift(grid: Grid, s: float) -> int:
    """Integer lattice shift of the wall-normal label after shear time ``s``."""
    shift = s * grid.ly / grid.lx
    m = int(round(shift))
    if abs(shift - m) > 1e-9 * max(1.0, abs(shift)):
        raise RemapPhaseError(f"shear offset s={s} gives non-integer lattice shift {shift}")
    return m


def remap_arrays(grid: Grid, c: np.ndarray, s: float, energy_fields: int | None = None):
    """Relabel the trailing three axes of ``c``; returns (relabelled copy, dropped L2 energy)."""
    m = remap_shift(grid, s)
    jx, jy, _ = grid.labels
    new_j = jy[None, :] - m * jx[:, None]
    valid = 3 * np.abs(new_j) <= grid.ny
    ix, iy = np.nonzero(valid)
    target = new_j[ix, iy] % grid.ny
    out = np.zeros_like(c)
    out[..., ix, target, :] = c[..., ix, iy, :]
    counted = c if energy_fields is None or c.ndim == 3 else c[:energy_fields]
    dropped = counted[..., ~valid, :]
    lost = grid.volume * float(np.sum(dropped.real ** 2 + dropped.imag ** 2))
    return out, lost


def spectral_energy_total(state: State) -> float:
    """Sum of squared L2 norms of u1, u2, u3 and theta."""
    return sum(l2_norm(getattr(state, f)) ** 2 for f in FIELDS[:4])


def integrate(state: State, params: Params, t_end: float | None = None, callback=None) -> State:
    """Step until ``t_end`` (default ``params.t_end``); ``callback(state)`` after each step."""
    t_end = params.t_end if t_end is None else t_end
    while state.clock.t < t_end - 1e-12 * max(1.0, t_end):
        p = params
        if state.clock.t + params.dt > t_end:
            p = replace(params, dt=t_end - state.clock.t)
        state = step(state, p)
        if callback is not None:
            callback(state)
    return state
