"""Energy functionals, weighted space-time norms and the shear-aligned frame.

All instantaneous norms are spectral sums with clock-corrected wavenumbers,
so they are the norms of the fixed (laboratory) frame.  Space-time norms are
built incrementally by :class:`NormAccumulator`: suprema by running maxima,
time integrals by the trapezoid rule on the sample grid.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ClockError, DomainError, SingularFrameError
from .spectral import (
    Grid,
    ShearClock,
    SpectralField,
    dealias,
    derivative,
    laplacian,
    project_nonzero,
    project_zero,
    to_physical,
    to_spectral,
)

DELTA_FLOOR = 0.5


# -- accumulators ----------------------------------------------------------------

@dataclass
class NormAccumulator:
    """Running pieces of a weighted space-time norm.

    ``kind`` is ``"Y0"`` (sup of ||f||^2 plus nu * int ||grad f||^2) or ``"Xa"``
    with ``rate = a * nu^(1/3)``; the weight ``exp(2 rate t)`` multiplies every
    squared instantaneous term before it is accumulated.  ``"sum"`` keeps the
    same pieces but is assembled as a sum of norms (used for the H^k pieces of
    the zero-mode streamwise functionals).
    """

    kind: str
    nu: float
    rate: float = 0.0
    sup_part: float = 0.0
    int_parts: dict = field(default_factory=dict)
    t_last: float | None = None
    _last: dict = field(default_factory=dict, repr=False)

    def update(self, t: float, sup_sq: float, integrands: dict, time_weight: float = 1.0) -> None:
        if self.t_last is not None and t <= self.t_last:
            raise ClockError(f"time must increase: got t={t} after t={self.t_last}")
        w = time_weight * math.exp(2.0 * self.rate * t)
        self.sup_part = max(self.sup_part, w * sup_sq)
        for name, val in integrands.items():
            cur = w * val
            if self.t_last is None:
                self.int_parts[name] = 0.0
            else:
                self.int_parts[name] += 0.5 * (t - self.t_last) * (self._last[name] + cur)
            self._last[name] = cur
        self.t_last = t

    def value(self) -> float:
        ip = self.int_parts
        if self.kind == "Y0":
            return math.sqrt(self.sup_part + self.nu * ip.get("grad", 0.0))
        if self.kind == "Xa":
            nu = self.nu
            return math.sqrt(self.sup_part + ip.get("nonlocal", 0.0) + nu ** (1 / 3) * ip.get("l2", 0.0) + nu * ip.get("grad", 0.0))
        raise ValueError(f"accumulator kind {self.kind!r} has no single norm; read its parts")


def _sq(c: np.ndarray, grid: Grid, weight=1.0) -> float:
    return grid.volume * float(np.sum(weight * (c.real ** 2 + c.imag ** 2)))


class _Multipliers:
    """Squared Fourier multipliers at one clock value."""

    def __init__(self, grid: Grid, clock: ShearClock):
        kx, ky, kz = grid.k_eff(clock)
        keep = ~grid.nyquist_mask
        self.kx2 = np.where(keep, kx * kx, 0.0)
        self.kz2 = np.where(keep, kz * kz, 0.0) + 0.0 * self.kx2
        self.k2 = np.where(keep, kx * kx + ky * ky + kz * kz, 0.0)
        safe = np.where(self.k2 > 0, self.k2, 1.0)
        self.nonlocal_ = np.where(self.k2 > 0, self.kx2 / safe, 0.0)


def xa_terms(c: np.ndarray, m2, grid: Grid, mult: _Multipliers) -> tuple[float, dict]:
    """Instantaneous squared pieces of an X_a norm for the field with multiplier ``m``."""
    base = m2 * (c.real ** 2 + c.imag ** 2) * grid.volume
    return float(base.sum()), {
        "nonlocal": float((base * mult.nonlocal_).sum()),
        "l2": float(base.sum()),
        "grad": float((base * mult.k2).sum()),
    }


def y0_terms(c: np.ndarray, m2, grid: Grid, mult: _Multipliers) -> tuple[float, dict]:
    base = m2 * (c.real ** 2 + c.imag ** 2) * grid.volume
    return float(base.sum()), {"grad": float((base * mult.k2).sum())}


# -- shear-aligned frame ---------------------------------------------------------

@dataclass(frozen=True)
class KappaBundle:
    """kappa = d_z V / d_y V with V = y + u10_hat, plus the rho coefficients.

    Physical-space arrays are kept on the (y, z) plane so pointwise identities
    are exact; the spectral fields are their dealiased transforms.
    """

    V: SpectralField
    kappa: SpectralField
    rho1: SpectralField
    rho2: SpectralField
    vy: np.ndarray
    vz: np.ndarray
    kappa_phys: np.ndarray
    kappa_y: np.ndarray
    kappa_z: np.ndarray
    rho1_phys: np.ndarray
    rho2_phys: np.ndarray


def _plane(f: SpectralField) -> np.ndarray:
    return to_physical(project_zero(f))[0]


def kappa_bundle(u10_hat: SpectralField, delta_floor: float = DELTA_FLOOR) -> KappaBundle:
    """Build the frame; raises SingularFrameError if 1 + d_y u10_hat < delta_floor somewhere."""
    grid = u10_hat.grid
    if np.any(u10_hat.coeffs[1:] != 0):
        raise ValueError("u10_hat must be independent of x")
    vy = 1.0 + _plane(derivative(u10_hat, 1))
    vz = _plane(derivative(u10_hat, 2))
    lo = float(vy.min())
    if lo < delta_floor:
        raise SingularFrameError(f"1 + d_y u10_hat reaches {lo:.4g} < floor {delta_floor}")
    kap = vz / vy
    full = lambda a: np.broadcast_to(a, grid.shape)
    kap_hat = to_spectral(full(kap), grid)
    ky_ = _plane(derivative(kap_hat, 1))
    kz_ = _plane(derivative(kap_hat, 2))
    den = 1.0 + kap * kap
    r1 = (ky_ + kap * kz_) / (vy * den)
    r2 = (kz_ - kap * ky_) / den
    spec = lambda a: dealias(to_spectral(full(a), grid))
    return KappaBundle(u10_hat, dealias(kap_hat), spec(r1), spec(r2), vy, vz, kap, ky_, kz_, r1, r2)


def good_derivative(f: SpectralField, bundle: KappaBundle, clock: ShearClock | None = None) -> SpectralField:
    """(d_z - kappa d_y) f with the product formed in physical space."""
    fy = to_physical(derivative(f, 1, clock))
    fz = to_physical(derivative(f, 2, clock))
    return dealias(to_spectral(fz - bundle.kappa_phys[None] * fy, f.grid))


def rho_identity_residual(w: SpectralField, bundle: KappaBundle, clock: ShearClock | None = None) -> tuple[float, float]:
    """L2 norm of grad kappa . grad w - rho1 grad V . grad w - rho2 (d_z - kappa d_y) w, and of grad w."""
    grid = w.grid
    wx, wy, wz = (to_physical(derivative(w, j, clock)) for j in range(3))
    k = bundle.kappa_phys[None]
    lhs = bundle.kappa_y[None] * wy + bundle.kappa_z[None] * wz
    rhs = bundle.rho1_phys[None] * (bundle.vy[None] * wy + bundle.vz[None] * wz) + bundle.rho2_phys[None] * (wz - k * wy)
    cell = grid.volume / grid.npoints
    res = math.sqrt(cell * float(np.sum((lhs - rhs) ** 2)))
    grad = math.sqrt(cell * float(np.sum(wx ** 2 + wy ** 2 + wz ** 2)))
    return res, grad


def q_field(state, bundle: KappaBundle) -> SpectralField:
    """Q = P_ne u2 + kappa P_ne u3, with the zero mode removed exactly."""
    u3 = to_physical(project_nonzero(state.u3))
    q = project_nonzero(state.u2) + dealias(to_spectral(bundle.kappa_phys[None] * u3, state.grid))
    return project_nonzero(q)


def vorticity2(state, clock: ShearClock | None = None) -> SpectralField:
    """omega_2 = d_z u1 - d_x u3."""
    clock = state.clock if clock is None else clock
    return derivative(state.u1, 2, clock) - derivative(state.u3, 0, clock)


def u10_hat_tendency(state, params) -> SpectralField:
    """Exact time derivative of u10_hat: nu lap u - u2,0 - (u2,0 d_y + u3,0 d_z) u."""
    uh = state.u10_hat
    u20, u30 = project_zero(state.u2), project_zero(state.u3)
    adv = to_physical(u20) * to_physical(derivative(uh, 1)) + to_physical(u30) * to_physical(derivative(uh, 2))
    return params.nu * laplacian(uh) - u20 - dealias(to_spectral(adv, state.grid))


# -- functionals -----------------------------------------------------------------

Y0_KEYS = ("lap_u20", "u30", "grad_u30", "wlap_u30", "th0", "grad_th0", "dzgrad_th0")
XA_KEYS = ("lap_u2ne", "xz_u3ne", "dz2_thne")
XB_KEYS = ("dx2_thne", "dx2_u2ne", "dx2_u3ne")
E7_KEYS = ("e7_dx2_u2", "e7_dx2_u3", "e7_good_u2", "e7_good_u3", "e7_dxgrad_q")


class EnergyAccumulators:
    """Every space-time piece needed for the energy functionals of one run."""

    def __init__(self, params):
        nu = params.nu
        ra = params.a * nu ** (1 / 3)
        rb = params.b * nu ** (1 / 3)
        self.params = params
        self.acc: dict[str, NormAccumulator] = {
            "hat_h4": NormAccumulator("sum", nu),
            "hat_dt_h2": NormAccumulator("sum", nu),
            "tilde_h2": NormAccumulator("sum", nu),
            "omega2": NormAccumulator("sum", nu, ra),
        }
        for k in Y0_KEYS:
            self.acc[k] = NormAccumulator("Y0", nu)
        for k in XA_KEYS:
            self.acc[k] = NormAccumulator("Xa", nu, ra)
        for k in XB_KEYS + E7_KEYS:
            self.acc[k] = NormAccumulator("Xa", nu, rb)
        self.kappa_suspended = False
        self.t: float | None = None
        self.last: dict[str, float] = {}

    def __getitem__(self, key: str) -> NormAccumulator:
        return self.acc[key]


def _sum_sq(cs, grid, m2) -> float:
    return sum(_sq(c, grid, m2) for c in cs)


def update_accumulators(state, accums: EnergyAccumulators, params) -> EnergyAccumulators:
    """Advance every accumulator with the state at ``state.clock.t`` and return them."""
    grid, clock = state.grid, state.clock
    t = clock.t
    if accums.t is not None and t <= accums.t:
        raise ClockError(f"time must increase: got t={t} after t={accums.t}")
    m = _Multipliers(grid, clock)
    A = accums.acc
    one = np.ones(grid.shape)
    h = lambda order: (1.0 + m.k2) ** order

    uh = state.u10_hat.coeffs
    A["hat_h4"].update(t, _sq(uh, grid, h(4)), {"grad": _sq(uh, grid, h(4) * m.k2)})
    dth = u10_hat_tendency(state, params).coeffs
    A["hat_dt_h2"].update(t, _sq(dth, grid, h(2)), {})
    ut = state.u10_tilde.coeffs
    A["tilde_h2"].update(t, _sq(ut, grid, h(2)), {"grad": _sq(ut, grid, h(2) * m.k2)})

    zero = np.zeros(grid.shape, dtype=bool)
    zero[0] = True
    z = lambda f: np.where(zero, f.coeffs, 0.0)
    nz = lambda f: np.where(zero, 0.0, f.coeffs)
    u20, u30, th0 = z(state.u2), z(state.u3), z(state.theta)
    w2 = min(params.nu ** (2 / 3) + params.nu * t, 1.0)
    A["lap_u20"].update(t, *y0_terms(u20, m.k2 ** 2, grid, m))
    A["u30"].update(t, *y0_terms(u30, one, grid, m))
    A["grad_u30"].update(t, *y0_terms(u30, m.k2, grid, m))
    A["wlap_u30"].update(t, *y0_terms(u30, m.k2 ** 2, grid, m), time_weight=w2)
    A["th0"].update(t, *y0_terms(th0, one, grid, m))
    A["grad_th0"].update(t, *y0_terms(th0, m.k2, grid, m))
    A["dzgrad_th0"].update(t, *y0_terms(th0, m.kz2 * m.k2, grid, m))

    u2n, u3n, thn = nz(state.u2), nz(state.u3), nz(state.theta)
    A["lap_u2ne"].update(t, *xa_terms(u2n, m.k2 ** 2, grid, m))
    A["xz_u3ne"].update(t, *xa_terms(u3n, (m.kx2 + m.kz2) ** 2, grid, m))
    A["dz2_thne"].update(t, *xa_terms(thn, m.kz2 ** 2, grid, m))
    A["dx2_thne"].update(t, *xa_terms(thn, m.kx2 ** 2, grid, m))
    A["dx2_u2ne"].update(t, *xa_terms(u2n, m.kx2 ** 2, grid, m))
    A["dx2_u3ne"].update(t, *xa_terms(u3n, m.kx2 ** 2, grid, m))

    om = nz(vorticity2(state, clock))
    A["omega2"].update(t, _sq(om, grid, m.k2), {"lap": _sq(om, grid, m.k2 ** 2)})

    A["e7_dx2_u2"].update(t, *xa_terms(u2n, m.kx2 ** 2, grid, m))
    A["e7_dx2_u3"].update(t, *xa_terms(u3n, m.kx2 ** 2, grid, m))
    if not accums.kappa_suspended:
        try:
            bundle = kappa_bundle(state.u10_hat)
        except SingularFrameError:
            accums.kappa_suspended = True
        else:
            for j, key in ((u2n, "e7_good_u2"), (u3n, "e7_good_u3")):
                g = good_derivative(SpectralField(grid, j), bundle, clock).coeffs
                A[key].update(t, *xa_terms(g, m.kx2, grid, m))
            q = q_field(state, bundle).coeffs
            A["e7_dxgrad_q"].update(t, *xa_terms(q, m.kx2 * m.k2, grid, m))
    accums.t = t
    return accums


@dataclass(frozen=True)
class BootstrapCheck:
    value: float
    bound: float
    holds: bool
    margin: float  # 1 - value / bound


@dataclass(frozen=True)
class EnergyReport:
    t: float
    e11: float
    e12: float
    e1: float
    e2: float
    e3: float
    e41: float
    e42: float
    e4: float
    e5: float
    e6: float
    e7: float
    bootstrap: dict

    @property
    def bootstrap_holds(self) -> bool:
        return all(c.holds for c in self.bootstrap.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bootstrap"] = {k: asdict(v) for k, v in self.bootstrap.items()}
        return d


def bootstrap_bounds(params) -> dict[str, float]:
    e, nu = params.eps0, params.nu
    return {"e1": e, "e2": e * nu, "e3": e * nu * nu, "e4": e * nu, "e5": e * nu * nu, "e6": e * nu}


def energy_report(accums: EnergyAccumulators, params, t: float | None = None) -> EnergyReport:
    """Assemble the functionals from the accumulated pieces and check the bootstrap bounds."""
    A = accums.acc
    nu = params.nu
    sq = math.sqrt
    t = accums.t if t is None else t
    e11 = sq(A["hat_h4"].sup_part) + sq(nu * A["hat_h4"].int_parts.get("grad", 0.0)) + sq(A["hat_dt_h2"].sup_part) / nu
    e12 = sq(A["tilde_h2"].sup_part) + sq(nu * A["tilde_h2"].int_parts.get("grad", 0.0))
    e2 = sum(A[k].value() for k in ("lap_u20", "u30", "grad_u30", "wlap_u30"))
    e3 = sum(A[k].value() for k in ("th0", "grad_th0", "dzgrad_th0"))
    e41 = A["lap_u2ne"].value() + A["xz_u3ne"].value()
    om = A["omega2"]
    e42 = nu ** (1 / 3) * (sq(om.sup_part) + sq(nu * om.int_parts.get("lap", 0.0)))
    e5 = A["dx2_thne"].value() + A["dz2_thne"].value()
    e6 = A["dx2_u2ne"].value() + A["dx2_u3ne"].value()
    e7 = sum(A[k].value() ** 2 for k in E7_KEYS)
    vals = {"e1": e11 + nu ** (-2 / 3) * e12, "e2": e2, "e3": e3, "e4": e41 + e42, "e5": e5, "e6": e6}
    checks = {}
    for k, bound in bootstrap_bounds(params).items():
        v = vals[k]
        checks[k] = BootstrapCheck(v, bound, v <= bound, 1.0 - v / bound)
    return EnergyReport(t, e11, e12, vals["e1"], e2, e3, e41, e42, vals["e4"], e5, e6, e7, checks)


def fit_decay_rate(series, window: tuple[float, float] | None = None, floor: float = 0.0) -> float:
    """Rate lambda of a least-squares fit value ~ exp(-lambda t) over the window.

    Samples below ``floor`` (typically the round-off level) are ignored.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be a sequence of (t, value) pairs")
    if window is not None:
        arr = arr[(arr[:, 0] >= window[0]) & (arr[:, 0] <= window[1])]
    if floor > 0:
        arr = arr[arr[:, 1] >= floor]
    if len(arr) < 10:
        raise ValueError(f"need at least 10 samples in the window, got {len(arr)}")
    if np.any(arr[:, 1] <= 0):
        raise DomainError("decay fit needs strictly positive values")
    slope, _ = np.polyfit(arr[:, 0], np.log(arr[:, 1]), 1)
    return float(-slope)


# -- CSV sample rows ----------------------------------------------------------------

SERIES_COLUMNS = (
    "t", "l2_u", "l2_u_ne", "l2_theta", "h2_u", "h2_theta", "u10_hat_h4", "divergence", "split_drift",
    "e11", "e12", "e1", "e2", "e3", "e41", "e42", "e4", "e5", "e6", "e7",
    "ok_e1", "ok_e2", "ok_e3", "ok_e4", "ok_e5", "ok_e6",
)


def sample_row(state, report: EnergyReport, extra: dict) -> dict:
    """One CSV row; ``extra`` supplies the instantaneous norms computed by the caller."""
    row = {"t": state.clock.t}
    row.update(extra)
    for k in ("e11", "e12", "e1", "e2", "e3", "e41", "e42", "e4", "e5", "e6", "e7"):
        row[k] = getattr(report, k)
    for k, c in report.bootstrap.items():
        row[f"ok_{k}"] = int(c.holds)
    return row
