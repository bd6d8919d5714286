"""Command-line entry point: ``couettelab {run,scan,lemmas,kelvin}``.

Exit codes: 0 success, 1 error, 2 classification inconclusive.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import CouetteLabError
from .harness import INCONCLUSIVE, emit_outputs, load_config, run_case, scan
from .io_formats import dumps_json

EXIT_OK, EXIT_ERROR, EXIT_INCONCLUSIVE = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="couettelab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="integrate one case and classify it")
    r.add_argument("config", type=Path)
    r.add_argument("--out", type=Path, default=Path("run_out"))
    r.add_argument("--checkpoint", action="store_true", help="also write the final state")

    s = sub.add_parser("scan", help="bisect the stability threshold for several viscosities")
    s.add_argument("config", type=Path)
    s.add_argument("--nu-list", type=_floats, required=True)
    s.add_argument("--bisect-iters", type=int, default=4)
    s.add_argument("--lo-factor", type=float, default=0.01, help="stable amplitude = lo_factor * nu")
    s.add_argument("--hi-factor", type=float, default=1000.0, help="unstable amplitude = hi_factor * nu")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", type=Path, default=None)

    lm = sub.add_parser("lemmas", help="ratio statistics for one inequality or identity suite")
    lm.add_argument("suite", help="B1..B6, L3.1, L3.2, KAPPA, A1, A2 or IDENTITIES")
    lm.add_argument("--seeds", type=int, default=100, help="samples per resolution")
    lm.add_argument("--base", type=int, default=32, help="base grid size")
    lm.add_argument("--alpha", type=float, default=0.75)
    lm.add_argument("--a", type=float, default=0.05, help="weight exponent for A1/A2")
    lm.add_argument("--out", type=Path, default=None)

    k = sub.add_parser("kelvin", help="evolve one passive Kelvin mode and compare with the closed form")
    k.add_argument("--k", type=float, default=1.0, help="streamwise wavenumber")
    k.add_argument("--eta", type=float, default=0.0, help="initial wall-normal wavenumber")
    k.add_argument("--k3", type=float, default=0.0, help="spanwise wavenumber")
    k.add_argument("--nu", type=float, required=True)
    k.add_argument("--t", type=float, default=10.0)
    k.add_argument("--dt", type=float, default=0.05)
    return ap


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = run_case(cfg)
    emit_outputs(result, args.out, checkpoint=args.checkpoint)
    print(f"verdict={result.verdict} t={result.t_stop:.6g} steps={result.steps} -> {args.out}")
    return EXIT_INCONCLUSIVE if result.verdict == INCONCLUSIVE else EXIT_OK


def _cmd_scan(args) -> int:
    cfg = load_config(args.config)
    out = scan(cfg, args.nu_list, args.lo_factor, args.hi_factor, args.bisect_iters, args.workers)
    text = dumps_json(out)
    if args.out:
        args.out.write_text(text)
    sys.stdout.write(text)
    return EXIT_INCONCLUSIVE if any(c["error"] for c in out["cases"]) else EXIT_OK


def _cmd_lemmas(args) -> int:
    from .lemma_lab import EMBEDDING_IDS, check_identities, embedding_suite, lemma_grid, random_state, spacetime_suite

    name = args.suite
    if name in EMBEDDING_IDS:
        suite = embedding_suite(name, args.seeds, args.base, alpha=args.alpha)
    elif name in ("A1", "A2"):
        suite = spacetime_suite(name, args.seeds, a=args.a)
    elif name == "IDENTITIES":
        states = [random_state(lemma_grid(n), k) for n in (args.base, 2 * args.base) for k in range(args.seeds)]
        suite = check_identities(states)
    else:
        print(f"unknown suite {name!r}", file=sys.stderr)
        return EXIT_ERROR
    if args.out:
        args.out.write_text(suite.to_json())
    print(f"{suite.lemma_id}: verdict={suite.verdict} max_ratio={suite.max_ratio():.6g}")
    return EXIT_OK if suite.verdict in ("bounded", "identity") else EXIT_INCONCLUSIVE


def kelvin_check(k: float, eta: float, k3: float, nu: float, t: float, dt: float) -> tuple[float, float]:
    """(numerical, closed-form) amplitude ratio of a passive temperature Kelvin mode."""
    from .solver import Params, State, integrate, kelvin_amplitude_factor
    from .spectral import Grid, SpectralField, to_spectral

    # without remapping the label never moves, so only the initial label must be resolved
    size = lambda w: max(8, 2 * int(math.ceil(1.5 * abs(w))) + 4)
    grid = Grid(size(k), size(eta), size(k3), ly=2 * math.pi)
    p = Params(nu=nu, g=0.0, dt=dt, t_end=t, remap_period=math.inf)
    x, y, z = grid.coords
    th = to_spectral(np.cos(k * x + eta * y + k3 * z) * np.ones(grid.shape), grid)
    zero = SpectralField.zeros(grid)
    state = integrate(State.from_fields((zero, zero, zero), th), p)
    num = float(np.max(np.abs(state.theta.coeffs))) / 0.5
    return num, kelvin_amplitude_factor(k, eta, k3, nu, t)


def _cmd_kelvin(args) -> int:
    num, exact = kelvin_check(args.k, args.eta, args.k3, args.nu, args.t, args.dt)
    print(f"numerical={num!r} closed_form={exact!r} rel_err={abs(num - exact) / exact:.3e}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "scan": _cmd_scan, "lemmas": _cmd_lemmas, "kelvin": _cmd_kelvin}
    try:
        return handlers[args.command](args)
    except (CouetteLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
