"""Ratio statistics for the functional inequalities and exact identities behind the energy method.

Inequalities carry unspecified constants, so they are monitored as
LHS/RHS ratios (constant set to 1) over seeded random band-limited fields.
A suite is ``bounded`` when its worst ratio at doubled resolution is at
most twice the worst ratio at the base resolution, separately for every
sub-inequality.  Identities are checked as relative residuals.

Fields are band limited to ``|j| < n/4`` so that quadratic products are
represented exactly on the grid; maximum norms are collocation maxima on a
twice oversampled grid.  Inequalities stated on an unbounded wall-normal
direction are sampled with a Gaussian envelope in ``y``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .diagnostics import kappa_bundle, rho_identity_residual
from .errors import AccuracyError, ParameterError, PreconditionError
from .generators import random_band_limited
from .solver import Params, State, _explicit, diffusion_factor, pressure_decomposition, remap_arrays
from .spectral import (
    Grid,
    ShearClock,
    SpectralField,
    dealias,
    derivative,
    inverse_laplacian,
    laplacian,
    leray_project,
    project_nonzero,
    project_zero,
    sobolev_norm,
    to_physical,
    to_spectral,
)

__all__ = [
    "RatioSuite",
    "random_band_limited",
    "random_state",
    "check_identities",
    "embedding_ratio",
    "embedding_suite",
    "ForcingSpec",
    "spacetime_ratio",
    "spacetime_suite",
    "empirical_a_max",
    "EMBEDDING_IDS",
    "SPACETIME_IDS",
]

EMBEDDING_IDS = ("B1", "B2", "B3", "B4", "B5", "B6", "L3.1", "L3.2", "KAPPA")
SPACETIME_IDS = ("A1", "A2", "A4_weighted")
IDENTITY_TOL = 1e-9
ZERO_TOL = 1e-14
GROWTH_LIMIT = 2.0


@dataclass
class RatioSuite:
    """Samples are dicts with keys resolution, part, seed, lhs, rhs, ratio."""

    lemma_id: str
    samples: list = field(default_factory=list)
    resolutions: list = field(default_factory=list)
    verdict: str = "unresolved"
    extra: dict = field(default_factory=dict)

    def parts(self) -> list[str]:
        return sorted({s["part"] for s in self.samples})

    def max_ratio(self, part: str | None = None, resolution=None) -> float:
        vals = [
            s["ratio"]
            for s in self.samples
            if (part is None or s["part"] == part) and (resolution is None or s["resolution"] == resolution)
        ]
        return max(vals) if vals else 0.0

    def quantiles(self, qs=(0.5, 0.9, 1.0)) -> dict:
        out = {}
        for part in self.parts():
            for res in self.resolutions:
                r = [s["ratio"] for s in self.samples if s["part"] == part and s["resolution"] == res]
                if r:
                    out[f"{part}@{res}"] = [float(np.quantile(r, q)) for q in qs]
        return out

    def classify(self) -> str:
        """Set the verdict from the samples at the first two resolutions."""
        if len(self.resolutions) < 2:
            self.verdict = "unresolved"
            return self.verdict
        base, fine = self.resolutions[0], self.resolutions[1]
        growth = {}
        for part in self.parts():
            b = self.max_ratio(part, base)
            f = self.max_ratio(part, fine)
            growth[part] = f / b if b > 0 else (math.inf if f > 0 else 1.0)
        self.extra["growth"] = growth
        self.verdict = "bounded" if all(g <= GROWTH_LIMIT for g in growth.values()) else "growing"
        return self.verdict

    def to_dict(self) -> dict:
        return {
            "lemma_id": self.lemma_id,
            "verdict": self.verdict,
            "resolutions": self.resolutions,
            "samples": self.samples,
            "quantiles": self.quantiles(),
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RatioSuite":
        d = json.loads(text)
        return cls(d["lemma_id"], d["samples"], d["resolutions"], d["verdict"], d.get("extra", {}))


def _record(suite: RatioSuite, resolution, seed: int, part: str, lhs: float, rhs: float) -> None:
    if rhs < ZERO_TOL and lhs < ZERO_TOL:
        return  # 0/0 carries no information
    ratio = lhs / rhs if rhs > 0 else math.inf
    suite.samples.append({"resolution": resolution, "part": part, "seed": seed, "lhs": lhs, "rhs": rhs, "ratio": ratio})


# -- identities -------------------------------------------------------------------

def random_state(grid: Grid, seed: int, hat_h4: float = 0.05, clock: ShearClock | None = None) -> State:
    """Random divergence-free state with a nontrivial split of the streamwise zero mode."""
    rng = np.random.default_rng(seed)
    if clock is None:
        s = float(rng.uniform(0.0, grid.lx / grid.ly))
        clock = ShearClock(s, s)
    u = random_band_limited(grid, 2.0, seed, ("div_free", "zero_mean"))
    u = leray_project(u, clock)
    th = random_band_limited(grid, 2.0, seed + 1, "zero_mean")
    uh = random_band_limited(grid, 3.0, seed + 2, ("x_independent", "zero_mean"))
    uh = uh * (hat_h4 / sobolev_norm(uh, 4))
    return State.from_fields(u, th, uh, clock)


def _rel(a: SpectralField, b: SpectralField) -> float:
    diff = np.sqrt(np.sum(np.abs(a.coeffs - b.coeffs) ** 2))
    scale = max(np.sqrt(np.sum(np.abs(a.coeffs) ** 2)), np.sqrt(np.sum(np.abs(b.coeffs) ** 2)))
    return float(diff / scale) if scale > 0 else 0.0


def _dump(a: SpectralField, b: SpectralField, count: int = 5) -> str:
    diff = np.abs(a.coeffs - b.coeffs)
    idx = np.argsort(diff, axis=None)[::-1][:count]
    rows = []
    for flat in idx:
        i = np.unravel_index(flat, diff.shape)
        labels = tuple(int(lab[k]) for lab, k in zip(a.grid.labels, i))
        rows.append(f"{labels}: {diff[i]:.3e}")
    return "; ".join(rows)


def identity_residuals(state: State, params: Params | None = None) -> dict[str, float]:
    """Relative residuals of the exact identities for one state."""
    params = params or Params(nu=1e-2)
    grid, clock = state.grid, state.clock
    p = pressure_decomposition(state, params)
    out = {}
    lap = lambda f: laplacian(f, clock)
    total = lap(p["P0"] + p["P1"] + p["P2"] + p["P3"] + p["P4"])
    out["pressure_sum"] = _rel(total, lap(p["N2"]))

    vy = 1.0 + to_physical(derivative(state.u10_hat, 1))
    vz = to_physical(derivative(state.u10_hat, 2))
    dxu2 = to_physical(derivative(project_nonzero(state.u2), 0, clock))
    dxu3 = to_physical(derivative(project_nonzero(state.u3), 0, clock))
    src5 = dealias(to_spectral(-2.0 * (vy * dxu2 + vz * dxu3), grid))
    out["p5_source"] = _rel(lap(p["P5"]), src5)

    bundle = kappa_bundle(state.u10_hat)
    scale = float(np.max(np.abs(bundle.vz))) or 1.0
    out["kappa_definition"] = float(np.max(np.abs(bundle.vz - bundle.kappa_phys * bundle.vy))) / scale
    res, grad = rho_identity_residual(state.theta, bundle, clock)
    out["rho_decomposition"] = res / grad if grad > 0 else res

    tend, _ = _explicit(grid, clock, params, state.arrays())
    split_sum = SpectralField(grid, tend[4] + tend[5])
    direct = project_zero(SpectralField(grid, tend[0]))
    out["split_sum"] = _rel(split_sum, direct)
    return out


def check_identities(states, params: Params | None = None, strict: bool = False) -> RatioSuite:
    """Identity suite over an iterable of states; ``strict`` raises on the first failure."""
    suite = RatioSuite("IDENTITIES")
    worst = 0.0
    for k, st in enumerate(states):
        res = identity_residuals(st, params)
        tag = list(st.grid.shape)
        if tag not in suite.resolutions:
            suite.resolutions.append(tag)
        for part, r in res.items():
            suite.samples.append({"resolution": tag, "part": part, "seed": k, "lhs": r, "rhs": 1.0, "ratio": r})
            worst = max(worst, r)
            if strict and r > IDENTITY_TOL:
                raise AccuracyError(f"identity {part} residual {r:.3e} on state {k}")
    suite.verdict = "identity" if worst <= IDENTITY_TOL else "violated"
    suite.extra["max_residual"] = worst
    return suite


def identity_dump(state: State, params: Params | None = None) -> str:
    """Largest per-mode residuals of the pressure-sum identity, for failure reports."""
    p = pressure_decomposition(state, params)
    lap = lambda f: laplacian(f, state.clock)
    return _dump(lap(p["P0"] + p["P1"] + p["P2"] + p["P3"] + p["P4"]), lap(p["N2"]))


# -- norms ----------------------------------------------------------------------------

def lemma_grid(n: int) -> Grid:
    return Grid(n, n, n, 2 * math.pi, 4 * math.pi, 2 * math.pi)


def lemma_band(n: int) -> int:
    return n // 4 - 1


def _l2(f: SpectralField, clock=None, mult=None) -> float:
    """L2 norm of the field with an optional product of derivatives (axes list) applied."""
    c = f.coeffs
    if mult is not None:
        k = f.grid.k_eff(clock or ShearClock())
        w = np.ones(f.grid.shape)
        for ax in mult:
            w = w * k[ax] ** 2
        return math.sqrt(f.grid.volume * float(np.sum(w * np.abs(c) ** 2)))
    return math.sqrt(f.grid.volume * float(np.sum(np.abs(c) ** 2)))


def _hk(f: SpectralField, order: int) -> float:
    return sobolev_norm(f, order)


def _grad_l2(f: SpectralField, order: int = 0) -> float:
    """||grad f||_{H^order}."""
    k2 = f.grid.ksq()
    w = (1.0 + k2) ** order * k2
    return math.sqrt(f.grid.volume * float(np.sum(w * np.abs(f.coeffs) ** 2)))


def _lap_l2(f: SpectralField) -> float:
    k2 = f.grid.ksq()
    return math.sqrt(f.grid.volume * float(np.sum(k2 * k2 * np.abs(f.coeffs) ** 2)))


def _phys(f: SpectralField) -> tuple[np.ndarray, tuple[float, float, float]]:
    g = f.grid
    p = to_physical(f, oversample=2)
    return p, (g.lx / p.shape[0], g.ly / p.shape[1], g.lz / p.shape[2])


def _linf(f: SpectralField) -> float:
    return float(np.max(np.abs(to_physical(f, oversample=2))))


def _mixed(f: SpectralField, l2_axes: tuple[int, ...]) -> float:
    """sup over the remaining axes of the L2 norm over ``l2_axes``."""
    p, h = _phys(f)
    cell = math.prod(h[a] for a in l2_axes)
    inner = np.sqrt(cell * np.sum(p * p, axis=l2_axes))
    return float(np.max(inner))


def _exact_product(a: SpectralField, b: SpectralField) -> SpectralField:
    """Product without truncation; exact for fields with band below n/4."""
    return to_spectral(to_physical(a) * to_physical(b), a.grid)


# -- embedding inequalities -------------------------------------------------------------

def _check_range(alpha: float, lo: float, hi: float, label: str) -> None:
    if not lo < alpha <= hi:
        raise ParameterError(f"{label}: alpha={alpha} outside ({lo}, {hi}]")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise PreconditionError(msg)


def _is_x_independent(f: SpectralField) -> bool:
    return not np.any(f.coeffs[1:])


def _has_zero_x_mode(f: SpectralField) -> bool:
    scale = np.max(np.abs(f.coeffs)) if f.coeffs.size else 0.0
    return float(np.max(np.abs(f.coeffs[0]), initial=0.0)) <= 1e-14 * max(scale, 1e-300)


def _parts_b1(f, alpha):
    _check_range(alpha, 0.5, 1.0, "B1")
    _require(_is_x_independent(f), "B1 needs an x-independent field")
    n0, ny, nz = _l2(f), _l2(f, mult=[1]), _l2(f, mult=[2])
    nyz = _l2(f, mult=[1, 2])
    linf = _linf(f)
    return [
        ("1", linf, ny ** 0.5 * n0 ** 0.5 + nyz ** 0.5 * nz ** (alpha - 0.5) * n0 ** (1 - alpha)),
        ("2", linf, ny ** 0.5 * n0 ** 0.5 + nyz ** (alpha - 0.5) * nz ** 0.5 * ny ** (1 - alpha)),
        ("3", _mixed(f, (1,)), n0 + nz ** alpha * n0 ** (1 - alpha)),
        ("4", _mixed(f, (2,)), ny ** 0.5 * n0 ** 0.5),
    ]


def _parts_b2(f, alpha):
    _check_range(alpha, 0.5, 0.75, "B2")
    _require(_has_zero_x_mode(f), "B2 needs P0 f = 0")
    n = lambda *ax: _l2(f, mult=list(ax)) if ax else _l2(f)
    f0, fx, fy, fz = n(), n(0), n(1), n(2)
    fxx, fxy, fxz, fyz = n(0, 0), n(0, 1), n(0, 2), n(1, 2)
    a = alpha
    return [
        ("1", _linf(f), fyz ** 0.5 * fxz ** (a - 0.5) * fxx ** (a - 0.5) * fx ** (1.5 - 2 * a) + fxy ** 0.5 * fx ** (a - 0.5) * f0 ** (1 - a)),
        ("2", _mixed(f, (0,)), fy ** 0.5 * f0 ** 0.5 + fz ** 0.5 * fyz ** (a - 0.5) * fy ** (1 - a)),
        ("3", _mixed(f, (2,)), fx ** 0.5 * fxy ** (a - 0.5) * fy ** (1 - a)),
        ("4", _mixed(f, (1, 2)), fx ** a * f0 ** (1 - a)),
        ("5", _mixed(f, (0, 1)), f0 + fz ** a * f0 ** (1 - a)),
        ("6", _mixed(f, (0, 2)), fy ** 0.5 * f0 ** 0.5),
        ("7", _mixed(f, (1,)), fx ** a * f0 ** (1 - a) + fxz ** 0.5 * fx ** (a - 0.5) * fz ** (a - 0.5) * f0 ** (1.5 - 2 * a)),
    ]


def _dz(f):
    return derivative(f, 2)


def _parts_b3(f1, f2):
    _require(_is_x_independent(f1), "B3 needs d_x f1 = 0")
    p = _exact_product(f1, f2)
    dz2 = _dz(f2)
    return [
        ("H2", _hk(p, 2), _hk(f1, 1) * (_hk(f2, 2) + _hk(dz2, 2)) + _hk(f1, 3) * (_hk(f2, 0) + _hk(dz2, 0))),
        ("H3", _hk(p, 3), _hk(f1, 1) * (_hk(f2, 3) + _hk(dz2, 3)) + _hk(f1, 3) * (_hk(f2, 1) + _hk(dz2, 1))),
    ]


def _parts_b4(f1, f2):
    out = []
    for j in (0, 2):
        tag = "x" if j == 0 else "z"
        dj1 = derivative(f1, j)
        base = _hk(dj1, 0) + _hk(f1, 0)
        p = _exact_product(f1, f2)
        out.append((f"{tag}.1", _hk(_exact_product(f1, derivative(f2, j)), 0), base * _lap_l2(f2)))
        out.append((f"{tag}.2", _hk(p, 0) + _hk(derivative(p, j), 0), base * _hk(f2, 2)))
    return out


def _parts_b5(f1, f2, g1):
    _require(_has_zero_x_mode(g1), "B5 product bound needs P0 f1 = 0")
    out = []
    p = _exact_product(f1, f2)
    for j in (0, 2):
        tag = "x" if j == 0 else "z"
        d1, d2 = derivative(f1, j), derivative(f2, j)
        pair = lambda a, b, k: math.sqrt(_hk(a, k) ** 2 + _hk(b, k) ** 2)
        out.append((f"{tag}.1", _hk(p, 0), (_hk(d1, 1) + _hk(f1, 1)) * _hk(f2, 0) + (_hk(d1, 0) + _hk(f1, 0)) * _hk(f2, 1)))
        out.append((f"{tag}.2", _hk(derivative(p, j), 0), pair(d1, f1, 1) * pair(d2, f2, 0) + pair(d1, f1, 0) * pair(d2, f2, 1)))
    q = _exact_product(g1, f2)
    dxg = derivative(g1, 0)
    for s in (1, 2, 3):
        out.append((f"H{s}", _hk(q, s), _hk(dxg, s + 1) * _hk(f2, 0) + _hk(dxg, 0) * _hk(f2, s + 1)))
    return out


def _parts_b6(f1, f2, uhat):
    _require(_is_x_independent(f1), "B6 needs d_x f1 = 0")
    _require(_has_zero_x_mode(f2), "B6 needs P0 f2 = 0")
    bundle = kappa_bundle(uhat)
    from .diagnostics import good_derivative

    g2 = good_derivative(f2, bundle)
    p = _exact_product(f1, f2)
    grad_inv = math.sqrt(sum(_hk(derivative(inverse_laplacian(p), j), 0) ** 2 for j in range(3)))
    grad_p = math.sqrt(sum(_hk(derivative(p, j), 0) ** 2 for j in range(3)))
    out = [
        ("1", _hk(p, 0), _hk(f1, 1) * (_hk(f2, 0) + _hk(g2, 0))),
        ("2", grad_inv, _hk(f1, 0) * (_hk(f2, 0) + _hk(g2, 0))),
        ("3", grad_p, _hk(f1, 1) * (_hk(f2, 1) + _hk(g2, 1))),
    ]
    lap2 = laplacian(f2)
    grad2 = [derivative(f2, j) for j in range(3)]
    good_grad = math.sqrt(sum(_hk(good_derivative(g, bundle), 0) ** 2 for g in grad2))
    grad_norm = math.sqrt(sum(_hk(g, 0) ** 2 for g in grad2))
    for j in (1, 2):
        comm = derivative(inverse_laplacian(_exact_product(f1, lap2)), j) - _exact_product(f1, derivative(f2, j))
        out.append((f"comm{j + 1}", _hk(comm, 1), _hk(f1, 2) * (grad_norm + good_grad)))
    return out


def _parts_l31(u):
    _require(all(_has_zero_x_mode(c) for c in u), "L3.1 needs P0 u = 0")
    u1, u2, u3 = u
    k = u1.grid.k_eff(ShearClock())
    k2 = u1.grid.ksq()
    vol = u1.grid.volume
    s = lambda c, w: vol * float(np.sum(w * np.abs(c.coeffs) ** 2))
    out = []
    for order in (0, 1, 2):
        gk = k2 ** order
        lhs = math.sqrt(sum(s(c, gk * (k[0] ** 2 + k[2] ** 2) * k[0] ** 2) for c in u))
        rhs = math.sqrt(s(u3, gk * (k[0] ** 2 + k[2] ** 2) ** 2)) + math.sqrt(s(u2, gk * k2 * k2))
        out.append((f"1.k{order}", lhs, rhs))
    omega = derivative(u1, 2) - derivative(u3, 0)
    lhs = math.sqrt(sum(s(c, k2 * k2 * (k[0] ** 2 + k[2] ** 2)) for c in u))
    rhs = math.sqrt(s(omega, k2 * k2)) + math.sqrt(s(u2, k2 ** 3))
    out.append(("3", lhs, rhs))
    return out


def _parts_l32(u):
    _require(all(_is_x_independent(c) for c in u), "L3.2 needs zero-mode velocity")
    _, u2, u3 = u
    e2 = _lap_l2(u2) + _hk(u3, 0) + _grad_l2(u3)
    lhs = _hk(u2, 2) + _grad_l2(u2, 1) + _hk(u3, 1) + _hk(derivative(u3, 2), 1)
    return [("1", lhs, e2), ("2", _linf(u2) + _linf(u3), e2)]


def _kappa_fields(uhat):
    b = kappa_bundle(uhat)
    g = uhat.grid
    full = lambda a: np.broadcast_to(a, g.shape)
    return (
        to_spectral(full(b.kappa_phys), g),
        to_spectral(full(b.rho1_phys), g),
        to_spectral(full(b.rho2_phys), g),
    )


def _parts_kappa(uhat, w):
    _require(_is_x_independent(uhat) and _is_x_independent(w), "KAPPA needs x-independent inputs")
    kap, r1, r2 = _kappa_fields(uhat)
    eps = 1e-6 * max(_hk(uhat, 0), 1e-12) / max(_hk(w, 0), 1e-300)
    kp, r1p, _ = _kappa_fields(uhat + w * eps)
    km, r1m, _ = _kappa_fields(uhat - w * eps)
    dk = (kp - km) / (2 * eps)
    dr1 = (r1p - r1m) / (2 * eps)
    return [
        ("k.H1", _hk(kap, 1), _hk(uhat, 2)),
        ("k.H3", _hk(kap, 3), _hk(uhat, 4)),
        ("dtk.H1", _hk(dk, 1), _hk(w, 2)),
        ("rho.H2", _hk(r1, 2) + _hk(r2, 2), _hk(uhat, 4)),
        ("dtrho1.L2", _hk(dr1, 0), _hk(w, 2)),
    ]


def embedding_ratio(lemma_id: str, fields: dict, clock: ShearClock | None = None, alpha: float = 0.75, seed: int = 0) -> RatioSuite:
    """Ratios of every sub-inequality of one lemma for one set of fields.

    ``fields`` keys by lemma: B1/B2 ``f``; B3/B4 ``f1, f2``; B5 ``f1, f2, g1``;
    B6 ``f1, f2, uhat``; L3.1/L3.2 ``u`` (3-tuple); KAPPA ``uhat, w``.
    """
    if lemma_id not in EMBEDDING_IDS:
        raise ParameterError(f"unknown lemma id {lemma_id!r}")
    if lemma_id == "B1":
        parts = _parts_b1(fields["f"], alpha)
    elif lemma_id == "B2":
        parts = _parts_b2(fields["f"], alpha)
    elif lemma_id == "B3":
        parts = _parts_b3(fields["f1"], fields["f2"])
    elif lemma_id == "B4":
        parts = _parts_b4(fields["f1"], fields["f2"])
    elif lemma_id == "B5":
        parts = _parts_b5(fields["f1"], fields["f2"], fields["g1"])
    elif lemma_id == "B6":
        parts = _parts_b6(fields["f1"], fields["f2"], fields["uhat"])
    elif lemma_id == "L3.1":
        parts = _parts_l31(fields["u"])
    elif lemma_id == "L3.2":
        parts = _parts_l32(fields["u"])
    else:
        parts = _parts_kappa(fields["uhat"], fields["w"])
    some = next(iter(v for v in fields.values()))
    grid = (some[0] if isinstance(some, tuple) else some).grid
    tag = list(grid.shape)
    suite = RatioSuite(lemma_id, resolutions=[tag])
    for part, lhs, rhs in parts:
        _record(suite, tag, seed, part, lhs, rhs)
    return suite


def sample_fields(lemma_id: str, grid: Grid, seed: int) -> dict:
    """Seeded fields satisfying the hypotheses of ``lemma_id``."""
    band = lemma_band(grid.nx)
    width = grid.ly / 8.0
    rng = np.random.default_rng(seed)
    decay = float(rng.uniform(1.0, 3.0))
    rb = lambda s, cons=None, env=None, d=decay: random_band_limited(grid, d, s, cons, band=band, y_envelope=env)
    if lemma_id == "B1":
        return {"f": rb(seed, "x_independent", width)}
    if lemma_id == "B2":
        return {"f": rb(seed, "zero_x_mode", width)}
    if lemma_id == "B3":
        return {"f1": rb(seed, "x_independent"), "f2": rb(seed + 1)}
    if lemma_id == "B4":
        return {"f1": rb(seed), "f2": rb(seed + 1)}
    if lemma_id == "B5":
        return {"f1": rb(seed), "f2": rb(seed + 1), "g1": rb(seed + 2, "zero_x_mode")}
    if lemma_id == "B6":
        uh = rb(seed + 2, ("x_independent", "zero_mean"), d=decay + 2)
        uh = uh * (0.05 * rng.uniform(0.2, 1.0) / sobolev_norm(uh, 4))
        return {"f1": rb(seed, "x_independent"), "f2": rb(seed + 1, "zero_x_mode"), "uhat": uh}
    if lemma_id == "L3.1":
        return {"u": rb(seed, ("div_free", "zero_x_mode"))}
    if lemma_id == "L3.2":
        return {"u": rb(seed, ("div_free", "x_independent", "zero_mean"))}
    if lemma_id == "KAPPA":
        uh = rb(seed, ("x_independent", "zero_mean"), d=decay + 2)
        uh = uh * (0.1 * rng.uniform(0.05, 1.0) / sobolev_norm(uh, 4))
        return {"uhat": uh, "w": rb(seed + 1, ("x_independent", "zero_mean"), d=decay + 2)}
    raise ParameterError(f"unknown lemma id {lemma_id!r}")


def embedding_suite(lemma_id: str, samples: int = 100, base: int = 32, seed: int = 0, alpha: float = 0.75) -> RatioSuite:
    """Ratio statistics at ``base`` and ``2 * base`` resolution with a verdict."""
    suite = RatioSuite(lemma_id)
    for n in (base, 2 * base):
        grid = lemma_grid(n)
        tag = list(grid.shape)
        suite.resolutions.append(tag)
        for k in range(samples):
            one = embedding_ratio(lemma_id, sample_fields(lemma_id, grid, seed + k), alpha=alpha, seed=seed + k)
            suite.samples.extend(one.samples)
    suite.extra.update({"alpha": alpha, "seed": seed, "samples_per_resolution": samples})
    suite.classify()
    return suite


# -- space-time estimates ------------------------------------------------------------------

@dataclass(frozen=True)
class ForcingSpec:
    """Single Kelvin mode with label (k1, eta, k3) and forcing amplitudes F(t) = amp * exp(i omega t).

    ``f3`` is a 3-vector of complex amplitudes; ``g0``/``g1`` are used by the
    coupled system only.
    """

    k1: float
    eta: float
    k3: float
    f0: complex = 1.0
    f1: complex = 0.0
    f2: complex = 0.0
    f3: tuple = (0.0, 0.0, 0.0)
    omega: float = 0.0
    g0: complex = 0.0
    g1: complex = 0.0


def _weights(a: float, nu: float):
    if a < 0:
        raise ParameterError("a must be nonnegative")
    return a * nu ** (1.0 / 3.0)


def _kelvin_rhs(spec: ForcingSpec, nu: float, rate: float, coupled: bool):
    k1, eta, k3 = spec.k1, spec.eta, spec.k3
    f3 = np.asarray(spec.f3, dtype=complex)
    f3sq = float(np.sum(np.abs(f3) ** 2))

    def rhs(t, y):
        ky = eta - k1 * t
        k2 = k1 * k1 + ky * ky + k3 * k3
        ph = np.exp(1j * spec.omega * t)
        w2 = math.exp(2.0 * rate * t)
        A = y[0] + 1j * y[1]
        kvec = np.array([k1, ky, k3])
        if coupled:
            F = -k2 * spec.f1 * ph + spec.f2 * ph
        else:
            F = 1j * k1 * spec.f1 * ph + spec.f2 * ph + 1j * np.dot(kvec, f3) * ph
        dA = -nu * k2 * A + F
        a2 = abs(A) ** 2
        out = [dA.real, dA.imag, w2 * a2 * k1 * k1 / k2, w2 * a2, w2 * a2 * k2]
        if coupled:
            G = y[5] + 1j * y[6]
            m = (k1 * k1 + k3 * k3) ** 2
            dG = -nu * k2 * G - 2.0 * k1 * k3 * A / (k2 * k2) + spec.g1 * ph
            g2 = abs(G) ** 2 * m
            rhs_terms = [
                w2 * k2 * abs(spec.f1) ** 2 / nu,
                w2 * abs(spec.f2) ** 2 * nu ** (-1 / 3),
                w2 * (k1 * k1 + k3 * k3) * abs(spec.g1) ** 2 / nu,
            ]
            out += [dG.real, dG.imag, w2 * g2 * k1 * k1 / k2, w2 * g2, w2 * g2 * k2] + rhs_terms
        else:
            out += [w2 * k2 * abs(spec.f1) ** 2, w2 * abs(spec.f2) ** 2 * nu ** (-1 / 3), w2 * f3sq / nu]
        return out

    def jac(t, y):
        ky = eta - k1 * t
        k2 = k1 * k1 + ky * ky + k3 * k3
        w2 = math.exp(2.0 * rate * t)
        J = np.zeros((len(y), len(y)))
        J[0, 0] = J[1, 1] = -nu * k2
        for row, c in ((2, k1 * k1 / k2), (3, 1.0), (4, k2)):
            J[row, 0] = 2.0 * w2 * c * y[0]
            J[row, 1] = 2.0 * w2 * c * y[1]
        if coupled:
            m = (k1 * k1 + k3 * k3) ** 2
            J[5, 5] = J[6, 6] = -nu * k2
            J[5, 0] = J[6, 1] = -2.0 * k1 * k3 / (k2 * k2)
            for row, c in ((7, k1 * k1 / k2), (8, 1.0), (9, k2)):
                J[row, 5] = 2.0 * w2 * m * c * y[5]
                J[row, 6] = 2.0 * w2 * m * c * y[6]
        return J

    return rhs, jac


def _kelvin_run(spec: ForcingSpec, nu: float, a: float, t_end: float, coupled: bool, rtol: float = 1e-10):
    if spec.k1 == 0:
        raise PreconditionError("space-time suites need P0 f = 0 (k1 != 0)")
    rate = _weights(a, nu)
    y0 = [complex(spec.f0).real, complex(spec.f0).imag, 0.0, 0.0, 0.0]
    if coupled:
        y0 += [complex(spec.g0).real, complex(spec.g0).imag, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    else:
        y0 += [0.0, 0.0, 0.0]
    rhs, jac = _kelvin_rhs(spec, nu, rate, coupled)
    sol = solve_ivp(rhs, (0.0, t_end), y0, method="Radau", jac=jac, rtol=rtol, atol=1e-14, dense_output=True)
    if not sol.success:
        raise AccuracyError(f"Kelvin-mode quadrature failed: {sol.message}")
    ts = np.union1d(sol.t, np.linspace(0.0, t_end, 4001))
    ys = sol.sol(ts)
    w2 = np.exp(2.0 * rate * ts)
    sup_f = float(np.max(w2 * (ys[0] ** 2 + ys[1] ** 2)))
    end = [float(v) for v in sol.y[:, -1]]
    parts = {"sup": sup_f, "nonlocal": end[2], "l2": nu ** (1 / 3) * end[3], "grad": nu * end[4]}
    if coupled:
        m = (spec.k1 ** 2 + spec.k3 ** 2) ** 2
        sup_g = float(np.max(w2 * m * (ys[5] ** 2 + ys[6] ** 2)))
        parts.update({"g_sup": sup_g, "g_nonlocal": end[7], "g_l2": nu ** (1 / 3) * end[8], "g_grad": nu * end[9]})
        k0 = spec.k1 ** 2 + spec.eta ** 2 + spec.k3 ** 2
        rhs = abs(spec.f0) ** 2 + (1 + k0) ** 2 * abs(spec.g0) ** 2 + end[10] + end[11] + end[12]
    else:
        rhs = abs(spec.f0) ** 2 + end[5] + end[6] + end[7]
    lhs = sum(parts.values())
    return lhs, rhs, parts


def _a4_run(spec: ForcingSpec, nu: float, a: float, t_end: float, grid: Grid, uhat: SpectralField, dt: float):
    """Frozen-profile transport L_V f = f2 on a small grid; returns (LHS, RHS)."""
    rate = _weights(a, nu)
    jx = int(round(spec.k1 * grid.lx / (2 * math.pi)))
    jy = int(round(spec.eta * grid.ly / (2 * math.pi)))
    jz = int(round(spec.k3 * grid.lz / (2 * math.pi)))
    f = np.zeros(grid.shape, dtype=complex)
    # the conjugate mode carries the conjugate phase, so the two halves are kept apart
    forcing = np.zeros((2,) + grid.shape, dtype=complex)
    for half, sgn in enumerate((1, -1)):
        idx = ((sgn * jx) % grid.nx, (sgn * jy) % grid.ny, (sgn * jz) % grid.nz)
        f[idx] = spec.f0 if sgn == 1 else np.conj(spec.f0)
        forcing[(half,) + idx] = spec.f2 if sgn == 1 else np.conj(spec.f2)
    uh_phys = to_physical(uhat)
    mask = grid.dealias_mask
    period = grid.lx / grid.ly
    vol = grid.volume

    def explicit(c, clock, t):
        kx = grid.k_eff(clock)[0]
        dx = to_physical(SpectralField(grid, np.where(grid.nyquist_mask, 0.0, 1j * kx * c)))
        adv = to_spectral(uh_phys * dx, grid).coeffs
        ph = np.exp(1j * spec.omega * t)
        return np.where(mask, -adv + forcing[0] * ph + forcing[1] * np.conj(ph), 0.0)

    def pieces(c, clock, t):
        kx, _, _ = grid.k_eff(clock)
        k2 = grid.ksq(clock)
        safe = np.where(k2 > 0, k2, 1.0)
        e = np.abs(c) ** 2 * vol
        w2 = math.exp(2 * rate * t)
        return w2 * np.array([e.sum(), (e * kx * kx / safe).sum(), e.sum(), (e * k2).sum(), vol * np.sum(np.abs(forcing) ** 2)])

    clock = ShearClock()
    cur = pieces(f, clock, 0.0)
    sup, ints = cur[0], np.zeros(4)
    f_init = cur[0]
    while clock.t < t_end - 1e-12:
        h = min(dt, t_end - clock.t, period - clock.s)
        k1 = explicit(f, clock, clock.t)
        E = diffusion_factor(grid, nu, clock.s, h)
        nxt = ShearClock(clock.t + h, clock.s + h)
        fs = E * (f + h * k1)
        k2 = explicit(fs, nxt, nxt.t)
        f = E * (f + 0.5 * h * k1) + 0.5 * h * k2
        if nxt.s >= period - 1e-12:
            f, _ = remap_arrays(grid, f, period)
            forcing, _ = remap_arrays(grid, forcing, period)
            nxt = ShearClock(nxt.t, 0.0)
        new = pieces(f, nxt, nxt.t)
        ints += 0.5 * h * (cur[1:] + new[1:])
        sup = max(sup, new[0])
        cur, clock = new, nxt
    lhs = sup + ints[0] + nu ** (1 / 3) * ints[1] + nu * ints[2]
    rhs = f_init + nu ** (-1 / 3) * ints[3]
    return lhs, rhs


def spacetime_ratio(prop_id: str, forcing: ForcingSpec, params: Params | dict, t_end: float | None = None) -> RatioSuite:
    """LHS/RHS of one space-time estimate for one Kelvin-mode forcing.

    ``params`` needs ``nu`` and ``a`` (a Params instance or a dict); ``a = 0``
    gives unweighted norms.  A4_weighted additionally reads ``grid``, ``uhat``
    and ``dt`` from a dict.
    """
    p = params if isinstance(params, dict) else {"nu": params.nu, "a": params.a}
    nu, a = p["nu"], p["a"]
    t_end = p.get("t_end", 10 * nu ** (-1 / 3)) if t_end is None else t_end
    suite = RatioSuite(prop_id, resolutions=[t_end])
    if prop_id == "A1":
        lhs, rhs, parts = _kelvin_run(forcing, nu, a, t_end, coupled=False)
        suite.extra["parts"] = parts
    elif prop_id == "A2":
        lhs, rhs, parts = _kelvin_run(forcing, nu, a, t_end, coupled=True)
        suite.extra["parts"] = parts
    elif prop_id == "A4_weighted":
        grid = p.get("grid") or Grid(8, 32, 8, ly=2 * math.pi)
        uhat = p.get("uhat")
        if uhat is None:
            uhat = SpectralField.zeros(grid)
        lhs, rhs = _a4_run(forcing, nu, a, t_end, grid, uhat, p.get("dt", 0.05))
    else:
        raise ParameterError(f"unknown space-time id {prop_id!r}")
    _record(suite, t_end, 0, prop_id, float(lhs), float(rhs))
    return suite


def random_forcing(rng: np.random.Generator, band: int, coupled: bool = False) -> ForcingSpec:
    k1 = int(rng.integers(1, band + 1))
    eta = int(rng.integers(-band, band + 1))
    k3 = int(rng.integers(0, band + 1))
    c = lambda: complex(rng.standard_normal(), rng.standard_normal())
    kind = rng.integers(0, 5)
    f1 = c() if kind in (1, 4) else 0.0
    f2 = c() if kind in (2, 4) else 0.0
    f3 = tuple(c() for _ in range(3)) if kind in (3, 4) and not coupled else (0.0, 0.0, 0.0)
    g0 = c() if coupled else 0.0
    g1 = c() if coupled and kind in (3, 4) else 0.0
    return ForcingSpec(k1, eta, k3, c(), f1, f2, f3, float(rng.uniform(0.0, 1.0)), g0, g1)


def spacetime_suite(prop_id: str = "A1", samples: int = 100, band: int = 4, a: float = 0.05, seed: int = 0,
                    nus=(1e-2, 1e-3), t_scale: float = 10.0) -> RatioSuite:
    """Kelvin-mode sweep at (band, T), (2 band, T) and (band, 2 T); T = t_scale * nu^(-1/3).

    The verdict is ``bounded`` when both doublings keep the worst ratio within a
    factor of two of the base configuration.
    """
    if prop_id not in ("A1", "A2"):
        raise ParameterError("sweeps are defined for A1 and A2")
    coupled = prop_id == "A2"
    suite = RatioSuite(prop_id, resolutions=["base", "band2", "time2"])
    configs = {"base": (band, 1.0), "band2": (2 * band, 1.0), "time2": (band, 2.0)}
    for name, (bnd, tfac) in configs.items():
        rng = np.random.default_rng(seed)
        for k in range(samples):
            spec = random_forcing(rng, bnd, coupled)
            nu = nus[k % len(nus)]
            t_end = tfac * t_scale * nu ** (-1 / 3)
            lhs, rhs, _ = _kelvin_run(spec, nu, a, t_end, coupled)
            _record(suite, name, seed + k, prop_id, float(lhs), float(rhs))
    base = suite.max_ratio(resolution="base")
    growth = {n: suite.max_ratio(resolution=n) / base for n in ("band2", "time2")}
    suite.extra.update({"growth": growth, "a": a, "band": band, "seed": seed, "nus": list(nus)})
    suite.verdict = "bounded" if all(g <= GROWTH_LIMIT for g in growth.values()) else "growing"
    return suite


def empirical_a_max(a_values, samples: int = 20, band: int = 4, seed: int = 0, nus=(1e-2, 1e-3)) -> float:
    """Largest tested ``a`` whose A1 sweep is still bounded (0.0 if none is)."""
    best = 0.0
    for a in sorted(a_values):
        if spacetime_suite("A1", samples, band, a, seed, nus).verdict == "bounded":
            best = a
        else:
            break
    return best
