import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from couettelab.errors import CFLError, GeneratorError, ParameterError, RemapPhaseError
from couettelab.generators import random_band_limited
from couettelab.solver import (
    FIELDS,
    InitSpec,
    Params,
    State,
    diffusion_factor,
    divergence_ratio,
    full_tendency,
    initial_data,
    integrate,
    kelvin_amplitude_factor,
    nonlinear_rhs,
    pressure_solve,
    remap,
    remap_shift,
    split_drift,
    step,
    velocity_h2,
)
from couettelab.spectral import (
    Grid,
    ShearClock,
    SpectralField,
    derivative,
    leray_project,
    reflect_z,
    sobolev_norm,
    to_physical,
    to_spectral,
)

CUBE = Grid(16, 16, 16, ly=2 * math.pi)


def _scalar(grid, fn):
    x, y, z = grid.coords
    return to_spectral(fn(x, y, z) * np.ones(grid.shape), grid)


def _random_state(grid, seed, amp=1e-2, clock=None):
    u = random_band_limited(grid, 3.0, seed, ("div_free", "zero_mean"))
    u = leray_project(u, clock)
    th = random_band_limited(grid, 3.0, seed + 1, "zero_mean")
    scale = amp / velocity_h2(u)
    return State.from_fields(tuple(c * scale for c in u), th * scale, clock=clock)


def _inner(a: SpectralField, b: SpectralField) -> float:
    return float(a.grid.volume * np.sum((np.conj(a.coeffs) * b.coeffs).real))


@pytest.mark.parametrize(
    "kwargs",
    [dict(nu=0.0), dict(nu=2.0), dict(nu=0.1, mu=-1), dict(nu=0.1, a=0.05, b=0.11), dict(nu=0.1, a=0.05, b=0.04),
     dict(nu=0.1, dt=0.0), dict(nu=0.1, t_end=-1.0), dict(nu=0.1, remap_period=0.0)],
)
def test_params_validation(kwargs):
    with pytest.raises(ParameterError):
        Params(**kwargs)


def test_params_defaults():
    p = Params(nu=1e-3)
    assert p.mu == 1e-3
    assert p.nu13 == pytest.approx(0.1)
    assert p.remap_interval(Grid(8, 8, 8, ly=4 * math.pi)) == pytest.approx(0.5)
    assert Params(nu=1e-3, remap_period=math.inf).remap_interval(CUBE) == math.inf


@pytest.mark.parametrize("k1,eta,k3,s0,dt", [(1, 2, 1, 0.0, 0.3), (2, -1, 3, 0.4, 0.6), (3, 0, 0, 0.9, 0.1)])
def test_diffusion_factor_matches_quadrature(k1, eta, k3, s0, dt):
    g = Grid(8, 8, 8, ly=2 * math.pi)
    fac = diffusion_factor(g, 0.1, s0, dt)
    integral, _ = quad(lambda s: k1 ** 2 + (eta - s * k1) ** 2 + k3 ** 2, s0, s0 + dt)
    assert fac[k1 % 8, eta % 8, k3 % 8] == pytest.approx(math.exp(-0.1 * integral), rel=1e-13)


def test_kelvin_factor_known_values():
    assert kelvin_amplitude_factor(0, 0, 0, 1.0, 5.0) == 1.0
    assert kelvin_amplitude_factor(0, 0, 1, 0.1, 1.0) == pytest.approx(math.exp(-0.1))
    # at k1 = 1, eta = 0, t = 3 the exponent is nu (t^3/3) = 9 nu
    assert kelvin_amplitude_factor(1, 0, 0, 0.01, 3.0) == pytest.approx(math.exp(-0.01 * (3 + 9)))


def test_pure_diffusion_of_streamwise_streak():
    # an x-independent u1 = sin z is an exact solution decaying as exp(-nu t)
    zero = SpectralField.zeros(CUBE)
    u1 = _scalar(CUBE, lambda x, y, z: np.sin(z))
    state = State.from_fields((u1, zero, zero), zero)
    p = Params(nu=0.01, dt=0.1, t_end=10.0)
    out = integrate(state, p)
    np.testing.assert_allclose(out.u1.coeffs, math.exp(-0.1) * u1.coeffs, atol=1e-15)
    assert split_drift(out) < 1e-14


def test_remap_moves_label_down_by_k1():
    th = _scalar(CUBE, lambda x, y, z: np.cos(x + 2 * y))
    zero = SpectralField.zeros(CUBE)
    state = State.from_fields((zero, zero, zero), th, clock=ShearClock(1.0, 1.0))
    out = remap(state)
    assert out.clock == ShearClock(1.0, 0.0)
    c = out.theta.coeffs
    assert c[1, 1, 0] == pytest.approx(0.5) and abs(c[1, 2, 0]) < 1e-15
    assert out.lost_energy < 1e-25


def _evaluate(f: SpectralField, clock: ShearClock, pts: np.ndarray) -> np.ndarray:
    """Fixed-frame values at arbitrary points by direct summation."""
    kx, ky, kz = (np.broadcast_to(k, f.grid.shape).ravel() for k in f.grid.k_eff(clock))
    phase = np.outer(pts[:, 0], kx) + np.outer(pts[:, 1], ky) + np.outer(pts[:, 2], kz)
    return (np.exp(1j * phase) @ f.coeffs.ravel()).real


def test_remap_preserves_physical_field():
    g = Grid(8, 32, 8, ly=2 * math.pi)
    th = _scalar(g, lambda x, y, z: np.cos(x + 3 * y) + np.sin(2 * x - y + z))
    zero = SpectralField.zeros(g)
    state = State.from_fields((zero, zero, zero), th, clock=ShearClock(1.0, 1.0))
    out = remap(state)
    pts = np.random.default_rng(0).uniform(0, 2 * math.pi, (50, 3))
    np.testing.assert_allclose(_evaluate(out.theta, out.clock, pts), _evaluate(state.theta, state.clock, pts), atol=1e-13)


def test_remap_phase_check():
    assert remap_shift(CUBE, 2.0) == 2
    with pytest.raises(RemapPhaseError):
        remap_shift(CUBE, 0.5)


def test_remap_reports_dropped_energy():
    # label (2, -5, 0) would move to (2, -7, 0), outside the dealiased band
    g = Grid(16, 16, 16, ly=2 * math.pi)
    th = _scalar(g, lambda x, y, z: np.cos(2 * x - 5 * y))
    zero = SpectralField.zeros(g)
    state = State.from_fields((zero, zero, zero), th, clock=ShearClock(1.0, 1.0))
    out = remap(state)
    assert out.lost_energy == pytest.approx(g.volume / 2)
    assert np.abs(out.theta.coeffs).max() < 1e-15


def test_linear_pressures_closed_form():
    zero = SpectralField.zeros(CUBE)
    u2 = _scalar(CUBE, lambda x, y, z: np.sin(x))
    th = _scalar(CUBE, lambda x, y, z: np.sin(y))
    pn1, pn2, pn3 = pressure_solve(State.from_fields((zero, u2, zero), th))
    x, y, z = CUBE.coords
    ones = np.ones(CUBE.shape)
    np.testing.assert_allclose(to_physical(pn1), 2 * np.cos(x) * ones, atol=1e-13)
    np.testing.assert_allclose(to_physical(pn3), -np.cos(y) * ones, atol=1e-13)
    np.testing.assert_allclose(to_physical(pn2), 0 * ones, atol=1e-13)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_energy_balance_of_tendency(seed):
    # advection and pressure do no work: only lift-up, buoyancy and diffusion remain
    p = Params(nu=0.02, mu=0.03, g=0.7)
    clock = ShearClock(0.3, 0.3)
    state = _random_state(CUBE, seed, amp=0.5, clock=clock)
    tend = full_tendency(state, p)
    rate = sum(_inner(getattr(state, f), getattr(tend, f)) for f in FIELDS[:4])
    grad_sq = lambda f: sum(_inner(derivative(f, j, clock), derivative(f, j, clock)) for j in range(3))
    expected = (
        -_inner(state.u1, state.u2)
        + p.g * _inner(state.theta, state.u2)
        - p.nu * sum(grad_sq(c) for c in state.velocity)
        - p.mu * grad_sq(state.theta)
    )
    assert rate == pytest.approx(expected, rel=1e-10, abs=1e-14)


def test_means_are_conserved():
    p = Params(nu=0.01)
    tend = nonlinear_rhs(_random_state(CUBE, 4, amp=0.3), p)
    for f in FIELDS[:4]:
        assert abs(getattr(tend, f).coeffs[0, 0, 0]) < 1e-15


def test_zero_state_is_a_fixed_point():
    state = State.zeros(CUBE)
    out = integrate(state, Params(nu=0.01, dt=0.25, t_end=2.0))
    assert all(np.all(getattr(out, f).coeffs == 0) for f in FIELDS)
    assert out.clock.t == pytest.approx(2.0)


def test_step_keeps_divergence_and_split():
    state = _random_state(CUBE, 7, amp=0.05)
    p = Params(nu=0.01, dt=0.2)
    for _ in range(8):
        state = step(state, p)
        assert divergence_ratio(state) < 1e-12
        assert split_drift(state) < 1e-12
    assert state.clock.t == pytest.approx(1.6)


def test_step_lands_on_remap_time():
    p = Params(nu=0.01, dt=0.3)
    state = _random_state(CUBE, 8)
    times = []
    integrate(state, p, t_end=1.2, callback=lambda s: times.append((s.clock.t, s.clock.s)))
    # steps of 0.3, 0.3, 0.3, 0.1 (remap), 0.2
    assert [round(t, 12) for t, _ in times] == [0.3, 0.6, 0.9, 1.0, 1.2]
    assert times[3][1] == 0.0


def test_cfl_error_suggests_dt():
    state = _random_state(CUBE, 9, amp=50.0)
    with pytest.raises(CFLError) as info:
        step(state, Params(nu=0.01, dt=1.0))
    assert 0 < info.value.suggested_dt < 1.0


def test_initial_data_amplitudes_exact():
    for template in ("single_mode", "random", "rolls", "rolls_noise"):
        state = initial_data(InitSpec(template, amp_u=3e-3, amp_theta=2e-5, seed=3), CUBE)
        assert velocity_h2(state.velocity) == pytest.approx(3e-3, rel=1e-12)
        assert sobolev_norm(state.theta, 2) == pytest.approx(2e-5, rel=1e-12)
        assert divergence_ratio(state) < 1e-13


def test_initial_data_errors():
    with pytest.raises(GeneratorError):
        initial_data(InitSpec("zero", amp_u=1.0), CUBE)
    with pytest.raises(GeneratorError):
        initial_data(InitSpec("vortex", amp_u=1.0), CUBE)
    with pytest.raises(GeneratorError):
        initial_data(InitSpec("single_mode", amp_u=1.0, mode=(0.5, 0, 0)), CUBE)
    zero = initial_data(InitSpec("zero"), CUBE)
    assert velocity_h2(zero.velocity) == 0.0


def test_state_array_roundtrip():
    state = _random_state(CUBE, 11)
    again = State.from_arrays(CUBE, state.arrays(), state.clock)
    assert all(np.array_equal(getattr(again, f).coeffs, getattr(state, f).coeffs) for f in FIELDS)
    np.testing.assert_allclose(state.scaled(2.0).u2.coeffs, 2 * state.u2.coeffs)


def _reflect(state):
    sign = {"u3": -1.0}
    return State(*(reflect_z(getattr(state, f), sign.get(f, 1.0)) for f in FIELDS), clock=state.clock)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.sampled_from([0.0, 0.25, 0.5]))
def test_step_commutes_with_spanwise_reflection(seed, s):
    g = Grid(8, 8, 8, ly=2 * math.pi)
    p = Params(nu=0.02, dt=0.1)
    state = _random_state(g, seed, amp=0.2, clock=ShearClock(s, s))
    a = _reflect(step(state, p))
    b = step(_reflect(state), p)
    for f in FIELDS:
        np.testing.assert_allclose(getattr(a, f).coeffs, getattr(b, f).coeffs, atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.1, 3.0))
def test_tendency_is_exactly_quadratic_in_amplitude(seed, c):
    # T(c) = c L + c^2 Q, so T(2c) - 2 T(c) = 2 c^2 Q with Q = (T(1) + T(-1)) / 2
    p = Params(nu=0.01)
    g = Grid(8, 8, 8, ly=2 * math.pi)
    base = _random_state(g, seed, amp=1.0)
    tend = {a: nonlinear_rhs(base.scaled(a), p) for a in (c, 2 * c, 1.0, -1.0)}
    for f in FIELDS:
        t = {a: getattr(v, f).coeffs for a, v in tend.items()}
        q = 0.5 * (t[1.0] + t[-1.0])
        scale = max(np.abs(t[2 * c]).max(), 1e-300)
        np.testing.assert_allclose(t[2 * c] - 2 * t[c], 2 * c * c * q, atol=1e-12 * scale)
