import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from couettelab.diagnostics import (
    EnergyAccumulators,
    NormAccumulator,
    _Multipliers,
    bootstrap_bounds,
    energy_report,
    fit_decay_rate,
    good_derivative,
    kappa_bundle,
    q_field,
    rho_identity_residual,
    update_accumulators,
    xa_terms,
)
from couettelab.errors import ClockError, DomainError, SingularFrameError
from couettelab.generators import random_band_limited
from couettelab.solver import FIELDS, Params, State, kelvin_amplitude_factor
from couettelab.spectral import Grid, ShearClock, SpectralField, reflect_z, to_physical, to_spectral

GRID = Grid(16, 16, 16, ly=2 * math.pi)


def _hat(grid, amp, seed=0):
    f = random_band_limited(grid, 4.0, seed, "x_independent", band=3)
    return f * (amp / np.abs(to_physical(f)).max())


def _state(grid, seed, amp=0.1):
    u = random_band_limited(grid, 3.0, seed, ("div_free", "zero_mean"))
    th = random_band_limited(grid, 3.0, seed + 1, "zero_mean")
    return State.from_fields(tuple(c * amp for c in u), th * amp, u10_hat=_hat(grid, 0.05, seed))


def test_y0_accumulator_static_field():
    acc = NormAccumulator("Y0", nu=0.01)
    for t in np.linspace(0.0, 5.0, 11):
        acc.update(t, 2.0, {"grad": 3.0})
    assert acc.value() == pytest.approx(math.sqrt(2.0 + 0.01 * 3.0 * 5.0))


def test_xa_accumulator_weighted_integral():
    nu, rate, T = 1e-3, 0.005, 20.0
    acc = NormAccumulator("Xa", nu=nu, rate=rate)
    for t in np.linspace(0.0, T, 4001):
        acc.update(t, 1.0, {"nonlocal": 0.5, "l2": 1.0, "grad": 4.0})
    w = (math.exp(2 * rate * T) - 1) / (2 * rate)
    exact = math.exp(2 * rate * T) + 0.5 * w + nu ** (1 / 3) * w + nu * 4.0 * w
    assert acc.value() == pytest.approx(math.sqrt(exact), rel=1e-8)


def test_accumulator_rejects_time_reversal():
    acc = NormAccumulator("Y0", nu=0.1)
    acc.update(1.0, 1.0, {})
    with pytest.raises(ClockError):
        acc.update(1.0, 1.0, {})
    with pytest.raises(ValueError):
        NormAccumulator("sum", nu=0.1).value()


def test_kelvin_mode_xa_pieces_match_quadrature():
    # one Kelvin mode with closed-form amplitude, accumulated along its clock
    k1, eta, k3, nu, a, T = 1.0, 2.0, 1.0, 1e-2, 0.05, 3.0
    g = Grid(8, 8, 8, ly=2 * math.pi)
    rate = a * nu ** (1 / 3)
    acc = NormAccumulator("Xa", nu=nu, rate=rate)
    x, y, z = g.coords
    base = to_spectral(np.cos(k1 * x + eta * y + k3 * z) * np.ones(g.shape), g).coeffs
    for t in np.linspace(0.0, T, 3001):
        clock = ShearClock(t, t)
        c = base * kelvin_amplitude_factor(k1, eta, k3, nu, t)
        acc.update(t, *xa_terms(c, 1.0, g, _Multipliers(g, clock)))
    vol = g.volume

    def piece(t, kind):
        k2 = k1 ** 2 + (eta - t * k1) ** 2 + k3 ** 2
        e = 0.5 * vol * kelvin_amplitude_factor(k1, eta, k3, nu, t) ** 2 * math.exp(2 * rate * t)
        return {"nonlocal": k1 ** 2 / k2, "l2": 1.0, "grad": k2}[kind] * e

    for kind in ("nonlocal", "l2", "grad"):
        exact, _ = quad(piece, 0, T, args=(kind,), epsabs=0, epsrel=1e-12)
        assert acc.int_parts[kind] == pytest.approx(exact, rel=1e-6)


def test_fit_decay_rate_examples():
    t = np.linspace(0, 10, 21)
    assert fit_decay_rate(list(zip(t, 3.0 * np.exp(-0.7 * t)))) == pytest.approx(0.7)
    assert fit_decay_rate(list(zip(t, np.exp(0.2 * t)))) == pytest.approx(-0.2)
    assert fit_decay_rate(list(zip(t, 2.0 + 0 * t))) == pytest.approx(0.0, abs=1e-12)
    # a round-off plateau is ignored once a floor is given
    vals = np.maximum(np.exp(-4.0 * t), 1e-30)
    assert fit_decay_rate(list(zip(t, vals)), floor=1e-15) == pytest.approx(4.0)


def test_fit_decay_rate_errors():
    t = np.linspace(0, 1, 12)
    with pytest.raises(ValueError):
        fit_decay_rate(list(zip(t[:5], np.exp(-t[:5]))))
    with pytest.raises(ValueError):
        fit_decay_rate(list(zip(t, np.exp(-t))), window=(0.5, 1.0))
    with pytest.raises(DomainError):
        fit_decay_rate(list(zip(t, -np.exp(-t))))
    with pytest.raises(ValueError):
        fit_decay_rate([1.0, 2.0])


def test_kappa_bundle_pointwise_definition():
    uh = _hat(GRID, 0.2, seed=3)
    b = kappa_bundle(uh)
    np.testing.assert_allclose(b.kappa_phys * b.vy, b.vz, atol=1e-15)


def test_good_derivative_of_hat_is_kappa():
    # (d_z - kappa d_y) u = vz - kappa (vy - 1) = kappa for u = u10_hat
    uh = _hat(GRID, 0.2, seed=4)
    b = kappa_bundle(uh)
    np.testing.assert_allclose(good_derivative(uh, b).coeffs, b.kappa.coeffs, atol=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rho_identity(seed):
    uh = _hat(GRID, 0.2, seed)
    b = kappa_bundle(uh)
    w = random_band_limited(GRID, 2.0, seed + 10)
    res, grad = rho_identity_residual(w, b)
    assert res <= 1e-13 * grad


def test_singular_frame_and_bad_input():
    with pytest.raises(SingularFrameError):
        kappa_bundle(_hat(GRID, 5.0))
    with pytest.raises(ValueError):
        kappa_bundle(random_band_limited(GRID, 2.0, 0))


def test_q_field_has_no_zero_mode():
    state = _state(GRID, 5)
    q = q_field(state, kappa_bundle(state.u10_hat))
    assert np.all(q.coeffs[0] == 0)


def test_bootstrap_bounds_scale_with_nu():
    b = bootstrap_bounds(Params(nu=1e-2, eps0=0.1))
    assert b == pytest.approx({"e1": 0.1, "e2": 1e-3, "e3": 1e-5, "e4": 1e-3, "e5": 1e-5, "e6": 1e-3})


def test_zero_state_report():
    p = Params(nu=1e-2)
    acc = EnergyAccumulators(p)
    state = State.zeros(GRID)
    for t in (0.0, 1.0):
        update_accumulators(State(*(getattr(state, f) for f in FIELDS), clock=ShearClock(t, t)), acc, p)
    rep = energy_report(acc, p)
    assert rep.bootstrap_holds and rep.e1 == 0 and rep.e7 == 0
    assert rep.to_dict()["bootstrap"]["e4"]["margin"] == 1.0
    with pytest.raises(ClockError):
        update_accumulators(state, acc, p)


def test_singular_frame_suspends_e7():
    p = Params(nu=1e-2)
    acc = EnergyAccumulators(p)
    zero = SpectralField.zeros(GRID)
    state = State.from_fields((zero, zero, zero), zero, u10_hat=_hat(GRID, 5.0))
    update_accumulators(state, acc, p)
    assert acc.kappa_suspended


def _report(state, p):
    acc = EnergyAccumulators(p)
    update_accumulators(state, acc, p)
    return energy_report(acc, p)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000), c=st.floats(0.1, 10.0))
def test_linear_functionals_scale_with_amplitude(seed, c):
    p = Params(nu=1e-2)
    state = _state(GRID, seed)
    zero_hat = State(*(getattr(state, f) for f in FIELDS[:4]), SpectralField.zeros(GRID), state.u1 * 0.0)
    r1, r2 = _report(zero_hat, p), _report(zero_hat.scaled(c), p)
    for key in ("e2", "e3", "e4", "e5", "e6"):
        assert getattr(r2, key) == pytest.approx(c * getattr(r1, key), rel=1e-12)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000))
def test_functionals_invariant_under_spanwise_reflection(seed):
    p = Params(nu=1e-2)
    state = _state(GRID, seed)
    sign = {"u3": -1.0}
    mirrored = State(*(reflect_z(getattr(state, f), sign.get(f, 1.0)) for f in FIELDS), clock=state.clock)
    a, b = _report(state, p), _report(mirrored, p)
    for key in ("e1", "e2", "e3", "e4", "e5", "e6", "e7"):
        assert getattr(b, key) == pytest.approx(getattr(a, key), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["Y0", "Xa"]),
    data=st.lists(st.tuples(st.floats(0.01, 1.0), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=15),
)
def test_accumulator_monotone_and_starts_at_instantaneous_norm(kind, data):
    acc = NormAccumulator(kind, nu=1e-2, rate=0.01 if kind == "Xa" else 0.0)
    t, prev = 0.0, None
    for k, (dt, sup, a, b) in enumerate(data):
        terms = {"grad": a} if kind == "Y0" else {"grad": a, "l2": b, "nonlocal": a * 0.5}
        acc.update(t, sup, terms)
        v = acc.value()
        if k == 0:
            assert v == pytest.approx(math.sqrt(sup))
        else:
            assert v >= prev * (1 - 1e-12)
        prev, t = v, t + dt
