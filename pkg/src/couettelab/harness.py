"""Case configuration, stability classification, amplitude bisection and exponent fits."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (
    DELTA_FLOOR,
    SERIES_COLUMNS,
    EnergyAccumulators,
    EnergyReport,
    energy_report,
    fit_decay_rate,
    sample_row,
    update_accumulators,
)
from .errors import BracketError, CFLError, ConfigError, DomainError
from .io_formats import Manifest, dumps_json, series_csv, write_checkpoint, write_manifest
from .solver import InitSpec, Params, State, divergence_ratio, initial_data, split_drift, step, velocity_h2
from .spectral import Grid, derivative, l2_norm, project_nonzero, sobolev_norm, to_physical

log = logging.getLogger(__name__)

STABLE = "stable"
BOOTSTRAP_VIOLATED = "bootstrap_violated"
NORM_BLOWUP = "norm_blowup"
FRAME_SINGULAR = "frame_singular"
INCONCLUSIVE = "inconclusive"
UNSTABLE = {BOOTSTRAP_VIOLATED, NORM_BLOWUP, FRAME_SINGULAR}


@dataclass(frozen=True)
class CaseConfig:
    params: Params
    grid: Grid
    init: InitSpec
    output_every: int = 1
    blowup_factor: float = 100.0
    violation_samples: int = 20

    def __post_init__(self):
        if self.init.amp_u < 0 or self.init.amp_theta < 0:
            raise ConfigError("amplitudes must be nonnegative")
        if self.output_every < 1 or self.violation_samples < 1:
            raise ConfigError("output.every and stop.violation_samples must be >= 1")
        if not self.blowup_factor > 1.0:
            raise ConfigError("stop.blowup_factor must exceed 1 so the cap lies above the initial norm")

    def with_amplitude(self, amp_u: float, amp_theta: float | None = None) -> "CaseConfig":
        """Copy with new amplitudes; by default amp_theta = amp_u * nu."""
        amp_theta = amp_u * self.params.nu if amp_theta is None else amp_theta
        return replace(self, init=replace(self.init, amp_u=amp_u, amp_theta=amp_theta))

    def to_dict(self) -> dict:
        p, g, i = self.params, self.grid, self.init
        d = {
            "nu": p.nu, "mu": p.mu, "g": p.g, "a": p.a, "b": p.b, "eps0": p.eps0,
            "nx": g.nx, "ny": g.ny, "nz": g.nz, "lx": g.lx, "ly": g.ly, "lz": g.lz,
            "dt": p.dt, "t_end": p.t_end,
            "init.template": i.template, "init.amp_u": i.amp_u, "init.amp_theta": i.amp_theta,
            "init.seed": i.seed, "init.noise_fraction": i.noise_fraction, "init.decay": i.decay_exponent,
            "init.roll_index": i.roll_index,
            "init.bump": "none" if i.bump_concentration is None else i.bump_concentration,
            "output.every": self.output_every,
            "remap.period": "auto" if p.remap_period is None else p.remap_period,
            "stop.blowup_factor": self.blowup_factor,
            "stop.violation_samples": self.violation_samples,
        }
        return d

    def to_text(self) -> str:
        out = []
        for k, v in self.to_dict().items():
            out.append(f"{k} = {repr(v) if isinstance(v, float) else v}")
        return "\n".join(out) + "\n"


# -- config parsing ------------------------------------------------------------------

_FLOAT = float
_INT = int
KEYS = {
    "nu": _FLOAT, "mu": _FLOAT, "g": _FLOAT, "a": _FLOAT, "b": _FLOAT, "eps0": _FLOAT,
    "nx": _INT, "ny": _INT, "nz": _INT, "lx": _FLOAT, "ly": _FLOAT, "lz": _FLOAT,
    "dt": _FLOAT, "t_end": str,
    "init.template": str, "init.amp_u": _FLOAT, "init.amp_theta": _FLOAT, "init.seed": _INT,
    "init.noise_fraction": _FLOAT, "init.decay": _FLOAT, "init.roll_index": _INT, "init.bump": str,
    "output.every": _INT, "remap.period": str,
    "stop.blowup_factor": _FLOAT, "stop.violation_samples": _INT,
}
REQUIRED = ("nu", "nx", "ny", "nz", "dt", "t_end", "init.template", "init.amp_u", "init.amp_theta")


def parse_config(text: str, source: str = "<string>") -> CaseConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    ``t_end = auto`` means 10 nu^(-1/3); ``remap.period = auto`` means lx/ly
    and ``never`` disables remapping; ``init.bump = none`` gives flat rolls.
    """
    seen: dict[str, tuple[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key][0]})")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        seen[key] = (lineno, value)
    missing = [k for k in REQUIRED if k not in seen]
    if missing:
        raise ConfigError(f"{source}: missing required keys: {', '.join(missing)}")

    def get(key, default=None):
        if key not in seen:
            return default
        lineno, value = seen[key]
        try:
            return KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: cannot parse {key} = {value!r}") from None

    nu = get("nu")
    t_end_raw = get("t_end")
    try:
        t_end = 10.0 * nu ** (-1.0 / 3.0) if t_end_raw == "auto" else float(t_end_raw)
    except ValueError:
        raise ConfigError(f"{source}:{seen['t_end'][0]}: cannot parse t_end = {t_end_raw!r}") from None
    period_raw = get("remap.period", "auto")
    if period_raw == "auto":
        period = None
    elif period_raw == "never":
        period = math.inf
    else:
        try:
            period = float(period_raw)
        except ValueError:
            raise ConfigError(f"{source}:{seen['remap.period'][0]}: cannot parse remap.period = {period_raw!r}") from None
    bump_raw = get("init.bump", "2.0")
    bump = None if bump_raw == "none" else float(bump_raw)
    try:
        params = Params(
            nu=nu, mu=get("mu"), g=get("g", 1.0), a=get("a", 0.05), b=get("b", 0.08), dt=get("dt"),
            t_end=t_end, eps0=get("eps0", 0.05), remap_period=period,
        )
        grid = Grid(get("nx"), get("ny"), get("nz"), get("lx", 2 * math.pi), get("ly", 8 * math.pi), get("lz", 2 * math.pi))
        init = InitSpec(
            template=get("init.template"), amp_u=get("init.amp_u"), amp_theta=get("init.amp_theta"),
            seed=get("init.seed", 0), noise_fraction=get("init.noise_fraction", 0.2),
            decay_exponent=get("init.decay", 4.0), roll_index=get("init.roll_index", 1), bump_concentration=bump,
        )
        return CaseConfig(params, grid, init, get("output.every", 1), get("stop.blowup_factor", 100.0), get("stop.violation_samples", 20))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> CaseConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


# -- running a case ------------------------------------------------------------------

@dataclass
class CaseResult:
    verdict: str
    report: EnergyReport
    t_stop: float
    steps: int
    peak: dict
    decay_rate: float | None
    hygiene: dict
    lost_energy: float
    config: CaseConfig
    series: list = field(default_factory=list, repr=False)
    wall_seconds: float = 0.0
    final_state: State | None = field(default=None, repr=False)

    @property
    def unstable(self) -> bool:
        return self.verdict in UNSTABLE

    def summary(self) -> dict:
        """Deterministic summary (wall time lives in the manifest)."""
        return {
            "verdict": self.verdict,
            "t_stop": self.t_stop,
            "steps": self.steps,
            "energy": self.report.to_dict(),
            "peak": self.peak,
            "decay_rate_nonzero": self.decay_rate,
            "hygiene": self.hygiene,
            "lost_energy": self.lost_energy,
            "config": self.config.to_dict(),
        }


def _instant(state: State) -> dict:
    u = state.velocity
    ne = [project_nonzero(c) for c in u]
    vy = 1.0 + to_physical(derivative(state.u10_hat, 1))
    return {
        "l2_u": math.sqrt(sum(l2_norm(c) ** 2 for c in u)),
        "l2_u_ne": math.sqrt(sum(l2_norm(c) ** 2 for c in ne)),
        "l2_theta": l2_norm(state.theta),
        "h2_u": velocity_h2(u),
        "h2_theta": sobolev_norm(state.theta, 2),
        "u10_hat_h4": sobolev_norm(state.u10_hat, 4),
        "divergence": divergence_ratio(state),
        "split_drift": split_drift(state),
        "_frame_min": float(vy.min()),
    }


ROUNDOFF_FLOOR = 1e-12


def decay_rate(series, t_stop: float) -> float | None:
    """Decay rate of the non-zero-mode energy over the late part of the run.

    The second half of the horizon is preferred.  Samples at round-off level
    (below ROUNDOFF_FLOOR times the peak) carry no decay information, so when
    fewer than 10 resolved samples remain the window start moves back to
    t/4 and then to 0.
    """
    if not series:
        return None
    floor = ROUNDOFF_FLOOR * max(v for _, v in series)
    for start in (0.5, 0.25, 0.0):
        try:
            return fit_decay_rate(series, (start * t_stop, t_stop), floor)
        except (ValueError, DomainError):
            continue
    return None


def run_case(config: CaseConfig, progress=None) -> CaseResult:
    """Integrate one case and classify it.

    Stop rules, in priority order: frame_singular, norm_blowup,
    bootstrap_violated (``violation_samples`` consecutive violating samples),
    otherwise stable at t_end.  A violation that starts too late to be
    confirmed before t_end gives ``inconclusive``.
    """
    wall0 = time.perf_counter()
    p, grid = config.params, config.grid
    state = initial_data(config.init, grid, p)
    acc = EnergyAccumulators(p)
    update_accumulators(state, acc, p)
    inst = _instant(state)
    h2_0 = math.hypot(inst["h2_u"], inst["h2_theta"])
    cap = config.blowup_factor * h2_0 if h2_0 > 0 else math.inf
    report = energy_report(acc, p)
    rows = [sample_row(state, report, {k: v for k, v in inst.items() if not k.startswith("_")})]
    peak = {"h2": h2_0, "l2_u_ne": inst["l2_u_ne"]}
    hygiene = {"max_divergence": inst["divergence"], "max_split_drift": inst["split_drift"], "dt_reductions": 0}
    verdict = None
    run_len = 0 if report.bootstrap_holds else 1
    steps = 0
    dt_params = p
    t_tol = 1e-12 * max(1.0, p.t_end)
    while verdict is None and state.clock.t < p.t_end - t_tol:
        sp = dt_params
        if state.clock.t + sp.dt > p.t_end:
            sp = replace(sp, dt=p.t_end - state.clock.t)
        try:
            state = step(state, sp)
        except CFLError as exc:
            new_dt = min(0.5 * dt_params.dt, 0.9 * exc.suggested_dt)
            log.info("reducing dt from %.4g to %.4g at t=%.4g", dt_params.dt, new_dt, state.clock.t)
            dt_params = replace(dt_params, dt=new_dt)
            hygiene["dt_reductions"] += 1
            continue
        steps += 1
        update_accumulators(state, acc, p)
        at_end = state.clock.t >= p.t_end - t_tol
        if steps % config.output_every and not at_end:
            continue
        inst = _instant(state)
        report = energy_report(acc, p)
        rows.append(sample_row(state, report, {k: v for k, v in inst.items() if not k.startswith("_")}))
        h2 = math.hypot(inst["h2_u"], inst["h2_theta"])
        peak["h2"] = max(peak["h2"], h2)
        peak["l2_u_ne"] = max(peak["l2_u_ne"], inst["l2_u_ne"])
        hygiene["max_divergence"] = max(hygiene["max_divergence"], inst["divergence"])
        hygiene["max_split_drift"] = max(hygiene["max_split_drift"], inst["split_drift"])
        run_len = 0 if report.bootstrap_holds else run_len + 1
        if progress is not None:
            progress(state, report)
        if inst["_frame_min"] < DELTA_FLOOR:
            verdict = FRAME_SINGULAR
        elif not math.isfinite(h2) or h2 > cap:
            verdict = NORM_BLOWUP
        elif run_len >= config.violation_samples:
            verdict = BOOTSTRAP_VIOLATED
    if verdict is None:
        verdict = STABLE if report.bootstrap_holds else INCONCLUSIVE

    rate = decay_rate([(r["t"], r["l2_u_ne"]) for r in rows], state.clock.t)
    return CaseResult(
        verdict, report, state.clock.t, steps, peak, rate, hygiene, state.lost_energy, config,
        rows, time.perf_counter() - wall0, state,
    )


def emit_outputs(result: CaseResult, out_dir, checkpoint: bool = False) -> Manifest:
    """Write series.csv, summary.json (and optionally final.chk) plus manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "series.csv", out / "summary.json", out / "config.txt"]
    files[0].write_text(series_csv(result.series, SERIES_COLUMNS))
    files[1].write_text(dumps_json(result.summary()))
    files[2].write_text(result.config.to_text())
    if checkpoint and result.final_state is not None:
        files.append(write_checkpoint(result.final_state, out / "final.chk"))
    now = datetime.now(timezone.utc)
    manifest = Manifest(
        config={"text": result.config.to_text(), "values": result.config.to_dict()},
        code_version=f"couettelab {__version__}",
        grid=list(result.config.grid.shape) + [result.config.grid.lx, result.config.grid.ly, result.config.grid.lz],
        start_time=datetime.fromtimestamp(now.timestamp() - result.wall_seconds, timezone.utc).isoformat(),
        end_time=now.isoformat(),
        wall_seconds=result.wall_seconds,
    )
    for f in files:
        manifest.add_file(f, out)
    write_manifest(manifest, out / "manifest.json")
    return manifest


def config_from_manifest(manifest: Manifest) -> CaseConfig:
    return parse_config(manifest.config["text"], "<manifest>")


# -- threshold scans ------------------------------------------------------------------

def _is_stable(config: CaseConfig) -> bool:
    return run_case(config).verdict == STABLE


def threshold_bisect(nu: float, template: CaseConfig, lo: float, hi: float, iters: int, is_stable=None, history=None) -> float:
    """Bisect the velocity amplitude between a stable ``lo`` and an unstable ``hi``.

    The template's viscosity is replaced by ``nu`` and amp_theta follows
    amp_u * nu.  ``is_stable(config)`` defaults to running the case.
    Every evaluation is appended to ``history`` as (amplitude, stable).
    """
    if not 0 <= lo < hi:
        raise BracketError(f"need 0 <= lo < hi, got lo={lo}, hi={hi}")
    is_stable = is_stable or _is_stable
    history = [] if history is None else history
    base = replace(template, params=replace(template.params, nu=nu, mu=nu if template.params.mu == template.params.nu else template.params.mu))

    def probe(a):
        ok = is_stable(base.with_amplitude(a))
        history.append((a, ok))
        log.info("nu=%.3g amplitude=%.4g stable=%s", nu, a, ok)
        return ok

    if not probe(lo):
        raise BracketError(f"lower amplitude {lo} is not stable at nu={nu}")
    if probe(hi):
        raise BracketError(f"upper amplitude {hi} is not unstable at nu={nu}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def beta_fit(points) -> tuple[float, float, float]:
    """Fit log(threshold) = -beta log(Re) + c with Re = 1/nu; returns (beta, c, rms residual)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
        raise ValueError("need at least 3 (nu, threshold) pairs")
    if np.any(arr <= 0):
        raise DomainError("nu and thresholds must be positive")
    x = -np.log(arr[:, 0])  # log Re
    y = np.log(arr[:, 1])
    A = np.column_stack([-x, np.ones_like(x)])
    (beta, c), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([beta, c])
    return float(beta), float(c), float(np.sqrt(np.mean(resid ** 2)))


def _scan_job(args):
    nu, template, lo, hi, iters = args
    history = []
    try:
        thr = threshold_bisect(nu, template, lo, hi, iters, history=history)
        return nu, thr, history, None
    except BracketError as exc:
        return nu, None, history, str(exc)


def scan(template: CaseConfig, nus, lo_factor: float = 0.01, hi_factor: float = 1000.0, iters: int = 4, workers: int = 1) -> dict:
    """Threshold per nu (bracket [lo_factor nu, hi_factor nu]) and the fitted exponent.

    Cases for different nu run in separate processes when ``workers > 1``.
    """
    jobs = []
    for nu in nus:
        t_end = 10.0 * nu ** (-1.0 / 3.0)
        tpl = replace(template, params=replace(template.params, nu=nu, mu=nu, t_end=t_end))
        jobs.append((nu, tpl, lo_factor * nu, hi_factor * nu, iters))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_job, jobs))
    else:
        results = [_scan_job(j) for j in jobs]
    points = [(nu, thr) for nu, thr, _, err in results if thr is not None]
    by_nu = sorted(points, reverse=True)
    out = {
        "cases": [{"nu": nu, "threshold": thr, "history": h, "error": err} for nu, thr, h, err in results],
        # thresholds should not increase as nu decreases; reported, not enforced
        "monotone": all(b[1] <= a[1] for a, b in zip(by_nu, by_nu[1:])),
    }
    if len(points) >= 3:
        beta, c, rms = beta_fit(points)
        out.update({"beta": beta, "intercept": c, "rms": rms})
    return out
