import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from wdmgt.asymptotics import annulus_bump
from wdmgt.charroots import RootStructure, RootTriple, solve_characteristic
from wdmgt.errors import RegimeError, ShapeMismatch, ZoneViolation
from wdmgt.linear import (CombinedData, LinearState, critical_profile, energy_dissipation_check,
                          gaussian_symbol, kernel_values, linear_trajectory, mode_ode_residual,
                          pointwise_bound_check, propagate_linear, subcritical_profile)
from wdmgt.model import CutoffPartition, ModelParams
from wdmgt.spectral import Field, NormSpec, SpectralGrid, sobolev_norm, synthesize_gaussian, transform

P = ModelParams(1.0, 1.0, 1.0)
CRIT = ModelParams(1.0, 0.0, 1.0)


def ode_oracle(params, xi, t, y0):
    """DOP853 integration of tau y''' + y'' + (gamma + (delta+tau) xi^2) y' + xi^2 y = 0."""
    c = params.gamma + (params.delta + params.tau) * xi ** 2

    def f(_, y):
        return [y[1], y[2], -(y[2] + c * y[1] + xi ** 2 * y[0]) / params.tau]

    sol = solve_ivp(f, (0, t), y0, method="DOP853", rtol=1e-13, atol=1e-15)
    return sol.y[:, -1]


def random_params(rng):
    while True:
        tau, gamma = rng.uniform(0.2, 3), rng.uniform(0.05, 3)
        if abs(gamma - 1 / (4 * tau)) > 0.02:
            return ModelParams(tau, rng.uniform(0, 3), gamma)


def test_initial_data_matching(rng):
    for _ in range(50):
        p = random_params(rng)
        kv = kernel_values(solve_characteristic(p, rng.uniform(0, 30)), 0.0)
        assert np.max(np.abs(kv.dk[:3] - np.eye(3))) <= 1e-10


def test_kernels_against_ode_oracle(rng):
    for _ in range(12):
        p = random_params(rng)
        xi = rng.uniform(0, 5)
        roots = solve_characteristic(p, xi)
        for t in (0.1, 1.0, 10.0):
            kv = kernel_values(roots, t)
            for l in range(3):
                ref = ode_oracle(p, xi, t, np.eye(3)[l])
                scale = max(np.max(np.abs(ref)), 1e-300)
                assert np.max(np.abs(kv.dk[:3, l] - ref)) <= 1e-8 * scale


def test_spec_example_k2():
    kv = kernel_values(solve_characteristic(P, 1.0), 1.0)
    assert kv.k2 == pytest.approx(ode_oracle(P, 1.0, 1.0, [0, 0, 1])[0], rel=1e-8)


@given(st.floats(0.2, 3), st.floats(0, 3), st.floats(0.3, 3), st.floats(0, 40), st.floats(0, 20))
def test_mode_ode_residual(tau, delta, gamma, xi, t):
    p = ModelParams(tau, delta, gamma)
    kv = kernel_values(solve_characteristic(p, xi), t)
    assert mode_ode_residual(kv, p, xi) <= 1e-8


def test_confluent_limit():
    a, b, h = -1.0, -2.0, 1e-8
    near = RootTriple(complex(a), complex(b), complex(b + h), RootStructure.NEAR_DEGENERATE, h)
    t = 1.3
    fbb = t * math.exp(b * t)
    fab = (math.exp(b * t) - math.exp(a * t)) / (b - a)
    exact_k2 = (fbb - fab) / (b - a)
    assert kernel_values(near, t).k2 == pytest.approx(exact_k2, rel=1e-6)


def test_triple_root_limit():
    lam = -0.7
    tri = RootTriple(complex(lam), complex(lam + 1e-9), complex(lam - 1e-9), RootStructure.NEAR_DEGENERATE, 1e-9)
    t = 2.0
    assert kernel_values(tri, t).k2 == pytest.approx(t * t / 2 * math.exp(lam * t), rel=1e-6)


G = SpectralGrid(1, 200.0, 1024)


def gaussian_data(grid=G, width=1.0):
    f = synthesize_gaussian(grid, 1.0, width)
    return (f, f * 0.3, f * -0.2)


def test_propagate_zero_time_is_identity():
    data = gaussian_data()
    s = propagate_linear(data, P, 0.0)
    for a, b in zip((s.phi, s.phi_t, s.phi_tt), data):
        assert np.max(np.abs(a.coeffs - b.coeffs)) <= 1e-12


@given(st.floats(0, 5), st.floats(0, 5))
def test_semigroup(t1, t2):
    data = gaussian_data()
    direct = propagate_linear(data, P, t1 + t2)
    split = propagate_linear(propagate_linear(data, P, t1), P, t2)
    assert split.t == pytest.approx(t1 + t2)
    scale = np.max(np.abs(direct.coeffs()))
    assert np.max(np.abs(split.coeffs() - direct.coeffs())) <= 1e-9 * scale


def test_single_mode_is_diagonal():
    k = 12
    coeffs = np.zeros(G.shape, complex)
    coeffs[k] = 1.0
    data = (Field(G, coeffs), Field.zeros(G), Field.zeros(G))
    s = propagate_linear(data, P, 3.0)
    kv = kernel_values(solve_characteristic(P, k * G.dxi), 3.0)
    assert s.phi.coeffs[k] == pytest.approx(kv.k0, rel=1e-12)
    assert np.count_nonzero(s.phi.coeffs) == 1


def test_solution_stays_real():
    s = propagate_linear(gaussian_data(), P, 10.0)
    for f in (s.phi, s.phi_t, s.phi_tt):
        assert f.conjugate_symmetry_error() < 1e-12


def test_grid_mismatch():
    other = SpectralGrid(1, 100.0, 1024)
    with pytest.raises(ShapeMismatch):
        propagate_linear((synthesize_gaussian(G), Field.zeros(other), Field.zeros(G)), P, 1.0)


def test_combined_data():
    f = synthesize_gaussian(G)
    p = ModelParams(1.0, 1.0, 2.0)
    comb = CombinedData.from_data((f, Field.zeros(G), Field.zeros(G)), p)
    assert comb.phi0_comb.coeffs[0].real == pytest.approx(2 * f.coeffs[0].real)
    t2 = ModelParams(2.0, 0.0, 1.0)
    c2 = CombinedData.from_data((f, f, f), t2)
    assert np.allclose(c2.phi0_comb.coeffs, (1 + 1 + 2) * f.coeffs)
    assert np.allclose(c2.phi1_comb.coeffs, (0.5 + 1) * f.coeffs)


def test_profile_symbol_at_origin():
    data = gaussian_data()
    prof = subcritical_profile(data, P, 4.0)
    comb = CombinedData.from_data(data, P).phi0_comb
    assert prof.coeffs[0] == pytest.approx(comb.coeffs[0] / P.gamma)
    with pytest.raises(ValueError):
        subcritical_profile(data, P, 0.0)


def test_gaussian_profile_norm_scaling():
    g = SpectralGrid(1, 800.0, 8192)
    data = gaussian_data(g)
    for s in (0.0, 1.0):
        a = sobolev_norm(subcritical_profile(data, P, 50.0, point_mass=True), NormSpec.hdot(s))
        b = sobolev_norm(subcritical_profile(data, P, 100.0, point_mass=True), NormSpec.hdot(s))
        assert b / a == pytest.approx(2 ** (-(1 + 2 * s) / 4), rel=1e-3)


def test_gaussian_symbol_conventions():
    xi = np.array([0.5, 1.0])
    d = gaussian_symbol(P, 1.0, xi, 1)
    lap = gaussian_symbol(P, 1.0, xi, 1, "laplacian")
    assert np.allclose(d, -lap)
    with pytest.raises(ValueError):
        gaussian_symbol(P, 1.0, xi, 1, "other")


def _profile_error_ratio(convention):
    g = SpectralGrid(1, 800.0, 8192)
    f = synthesize_gaussian(g)
    data = (f, Field.zeros(g), Field.zeros(g))
    errs = []
    for t in (50.0, 200.0):
        s = propagate_linear(data, P, t)
        prof = subcritical_profile(data, P, t, 1, point_mass=True, convention=convention)
        errs.append(t ** 1.75 * sobolev_norm(s.phi_t - prof, NormSpec.hdot(1)))
    return errs[1] / errs[0]


def test_time_derivative_profile_sign():
    # the literal |xi|^2 G profile has the wrong sign for d/dt and its error never decays
    assert _profile_error_ratio("derivative") < 0.3
    assert _profile_error_ratio("laplacian") > 0.9


def test_critical_profile_examples():
    g = SpectralGrid(1, 100.0, 1024)
    rng = np.random.default_rng(0)
    data = tuple(transform(g, np.exp(-g.x[0] ** 2) * rng.uniform(0.5, 1.5)) for _ in range(3))
    cut = CutoffPartition()
    r = g.xi_mag
    p0 = critical_profile(data, CRIT, 0.0)
    ext = cut.chi_ext(r) == 1
    assert np.allclose(p0.coeffs[ext], -data[2].coeffs[ext] / r[ext] ** 2)
    inner = cut.chi_int(r) == 1
    sub = subcritical_profile(data, CRIT, 3.0)
    assert np.allclose(critical_profile(data, CRIT, 3.0).coeffs[inner], sub.coeffs[inner])
    with pytest.raises(RegimeError):
        critical_profile(data, P, 1.0)


def test_critical_profile_tracks_solution_at_tau_two():
    # phi0-only data at high frequency: the oscillation carries phi0/tau, so a 1/tau^2 weight is off by 2x
    p = ModelParams(2.0, 0.0, 1.0)
    g = SpectralGrid(1, 100.0, 4096)
    f = Field(g, annulus_bump(g.xi_mag, 80.0))
    data = (f, Field.zeros(g), Field.zeros(g))
    t = 30.0   # e^{-t/tau} mode has died out; phase drift gamma t/(2 tau R) stays below 0.1
    exact = propagate_linear(data, p, t).phi
    prof = critical_profile(data, p, t)
    size = sobolev_norm(exact, NormSpec.hdot(0))
    assert sobolev_norm(exact - prof, NormSpec.hdot(0)) / size < 0.15
    assert sobolev_norm(exact - prof * (1 / p.tau), NormSpec.hdot(0)) / size > 0.4


def test_bound_low_kernel():
    ts = np.linspace(0, 100, 101)
    xs = np.linspace(1e-3, 0.5, 200)
    rep = pointwise_bound_check(P, "low-kernel", ts, xs, j=0, c=0.5)
    assert rep.ratio <= 10 and rep.c == 0.5


def test_bound_middle_default_c():
    rep = pointwise_bound_check(P, "middle", np.linspace(0, 50, 51), np.linspace(0.5, 4, 100))
    assert math.isfinite(rep.ratio) and rep.ratio < 10 and rep.c > 0


def test_bound_high_critical():
    rep = pointwise_bound_check(CRIT, "high-critical", np.linspace(0, 400, 201), np.linspace(4, 16, 100),
                                c=CRIT.gamma / (4 * CRIT.tau ** 2))
    assert math.isfinite(rep.ratio) and rep.ratio < 10


def test_bound_low_profile_derivative_vs_literal():
    ts = np.linspace(0, 200, 101)
    xs = np.geomspace(1e-3, 0.5, 100)
    good = pointwise_bound_check(P, "low-profile", ts, xs, j=1)
    bad = pointwise_bound_check(P, "low-profile", ts, xs, j=1, convention="laplacian")
    assert good.ratio < 10
    assert bad.ratio > 1e3


def test_bound_high_critical_profile_grows_with_frequency():
    ts = np.linspace(0, 2000, 401)
    lo = pointwise_bound_check(CRIT, "high-critical-profile", ts, np.linspace(4, 8, 50)).ratio
    hi = pointwise_bound_check(CRIT, "high-critical-profile", ts, np.linspace(16, 32, 50)).ratio
    assert hi > 1.5 * lo


def test_bound_zone_and_regime_errors():
    with pytest.raises(ZoneViolation):
        pointwise_bound_check(P, "low-kernel", [1.0], [1.0])
    with pytest.raises(RegimeError):
        pointwise_bound_check(P, "high-critical", [1.0], [10.0])
    with pytest.raises(ValueError):
        pointwise_bound_check(P, "es9", [1.0], [0.1])


def test_energy_zero_data():
    g = SpectralGrid(1, 50.0, 64)
    z = Field.zeros(g)
    rep = energy_dissipation_check(linear_trajectory((z, z, z), CRIT, np.linspace(0, 1, 11)), CRIT)
    assert rep.residual == 0 and np.all(rep.energy == 0)


def test_energy_single_mode():
    g = SpectralGrid(1, 2 * math.pi, 16)
    c = np.zeros(g.shape, complex)
    c[3], c[-3] = 1.0, 1.0
    data = (Field(g, c), Field.zeros(g), Field.zeros(g))
    times = 1e-3 * np.arange(5001)
    rep = energy_dissipation_check((propagate_linear(data, CRIT, t) for t in times), CRIT)
    assert rep.residual <= 1e-5 and rep.monotone


def test_energy_requires_critical():
    with pytest.raises(RegimeError):
        energy_dissipation_check([], P)


def test_energy_requires_uniform_sampling():
    g = SpectralGrid(1, 50.0, 64)
    data = gaussian_data(g, 1.0)
    with pytest.raises(ValueError):
        energy_dissipation_check(linear_trajectory(data, CRIT, [0.0, 0.1, 0.3]), CRIT)


def test_linear_state_accessors():
    s = propagate_linear(gaussian_data(), P, 1.0)
    assert isinstance(s, LinearState)
    assert s.derivative(2) is s.phi_tt and s.grid == G
