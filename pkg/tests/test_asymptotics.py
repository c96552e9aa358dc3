import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wdmgt.asymptotics import (RATE_REPORT_COLUMNS, RateFit, RateRow, TimeSeriesRecord, annulus_bump,
                               default_window, fit_decay_rate, fit_exponential, lemma_scaling_check,
                               regularity_loss_experiment, single_mode_decay, smallfreq_norm,
                               subcritical_to_critical_convergence, traveling_data, weighted_profile_error,
                               write_rate_report)
from wdmgt.errors import (InsufficientData, InvalidParameter, NonPositiveValue, RegimeError,
                          ShapeMismatch)
from wdmgt.linear import linear_trajectory, propagate_linear, subcritical_profile
from wdmgt.model import ModelParams
from wdmgt.spectral import Field, NormSpec, SpectralGrid, sobolev_norm, synthesize_gaussian, transform

P = ModelParams(1.0, 1.0, 1.0)
CRIT = ModelParams(1.0, 0.0, 1.0)


def test_fit_exact_power_law():
    t = np.linspace(10, 100, 40)
    fit = fit_decay_rate(TimeSeriesRecord(t, 3 * t ** -1.25))
    assert fit.slope == pytest.approx(-1.25, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3))
    assert fit.window == (25.0, 100.0)


def test_fit_with_noise(rng):
    t = np.geomspace(10, 1000, 200)
    v = t ** -1.25 * (1 + 0.1 * rng.uniform(-1, 1, t.size))
    assert fit_decay_rate(TimeSeriesRecord(t, v)).slope == pytest.approx(-1.25, abs=0.02)


@given(st.floats(-3, 0), st.floats(0.1, 10))
def test_fit_recovers_any_slope(slope, amp):
    t = np.linspace(1, 50, 30)
    assert fit_decay_rate(TimeSeriesRecord(t, amp * t ** slope)).slope == pytest.approx(slope, abs=1e-9)


def test_fit_errors():
    t = np.linspace(1, 10, 9)
    with pytest.raises(InsufficientData):
        fit_decay_rate(TimeSeriesRecord(t, t), (0, 10))
    t = np.linspace(1, 10, 20)
    with pytest.raises(NonPositiveValue):
        fit_decay_rate(TimeSeriesRecord(t, t - 5), (0, 10))
    with pytest.raises(InvalidParameter):
        TimeSeriesRecord([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(ShapeMismatch):
        TimeSeriesRecord([1.0, 2.0], [1.0])


def test_series_helpers():
    s = TimeSeriesRecord(np.arange(1.0, 9.0), 1 / np.arange(1.0, 9.0))
    assert s.is_decreasing() and s.ratio_final_initial() == pytest.approx(1 / 8)
    assert s.window(2, 4).times.tolist() == [2.0, 3.0, 4.0]
    assert default_window(s) == (2.0, 8.0)


def test_fit_exponential():
    t = np.linspace(0, 10, 50)
    rate, rms = fit_exponential(t, 2 * np.exp(-0.3 * t))
    assert rate == pytest.approx(-0.3) and rms < 1e-12
    with pytest.raises(NonPositiveValue):
        fit_exponential(t, -np.exp(-t))


G = SpectralGrid(1, 800.0, 8192)


def test_profile_error_identity_is_zero():
    f = synthesize_gaussian(G)
    data = (f, Field.zeros(G), Field.zeros(G))
    times = [10.0, 20.0, 40.0]
    traj = [(t, subcritical_profile(data, P, t)) for t in times]
    err, floor = weighted_profile_error(traj, lambda t: subcritical_profile(data, P, t), 0, 0.0)
    assert np.all(err.values == 0) and np.all(floor.values > 0)
    assert err.meta["series"] == "error" and floor.meta["j"] == 0


def test_profile_error_decays_for_gaussian():
    f = synthesize_gaussian(G)
    data = (f, Field.zeros(G), Field.zeros(G))
    times = np.linspace(50, 200, 16)
    traj = linear_trajectory(data, P, times)
    err, floor = weighted_profile_error(traj, lambda t: subcritical_profile(data, P, t, point_mass=True), 0, 0.0)
    assert err.is_decreasing() and err.ratio_final_initial() < 0.5
    assert np.all(floor.values > err.values)


def test_profile_error_checks():
    f = synthesize_gaussian(G)
    other = SpectralGrid(1, 400.0, 4096)
    with pytest.raises(ShapeMismatch):
        weighted_profile_error([(1.0, f)], lambda t: Field.zeros(other), 0, 0.0)
    with pytest.raises(InvalidParameter):
        weighted_profile_error([(0.0, f)], lambda t: f, 0, 0.0)


def test_moment_zero_decays_faster():
    x = G.x[0]
    g = synthesize_gaussian(G)
    odd = transform(G, x * np.exp(-x ** 2 / 2))
    times = np.linspace(50, 200, 31)
    slopes = {}
    for name, f in (("even", g), ("odd", odd)):
        traj = linear_trajectory((f, Field.zeros(G), Field.zeros(G)), P, times)
        norms = np.array([sobolev_norm(s.phi, NormSpec.hdot(2)) for s in traj])
        slopes[name] = fit_decay_rate(TimeSeriesRecord(times, norms)).slope
    assert abs(odd.coeffs[0]) < 1e-12
    assert slopes["even"] == pytest.approx(-1.25, abs=0.05)
    assert slopes["odd"] <= -1.25 - 0.2


@pytest.mark.parametrize("n,s", [(1, 0.0), (2, 1.0), (3, 0.5)])
def test_smallfreq_lemma_slope(n, s):
    fit = lemma_scaling_check(s, n, 0.5, "smallfreq")
    assert fit.slope == pytest.approx(-(n + 2 * s) / 4, abs=0.02)


def test_smallfreq_exact_ratio():
    a, b = smallfreq_norm(0.0, 1, 0.5, 1e4), smallfreq_norm(0.0, 1, 0.5, 4e4)
    assert b / a == pytest.approx(4 ** -0.25, rel=1e-8)
    with pytest.raises(InvalidParameter):
        smallfreq_norm(-1.0, 1, 0.5, 1.0)


def test_largefreq_lemma():
    fit = lemma_scaling_check(0.0, 1, 0.5, "largefreq")
    assert fit.slope == pytest.approx(-1.0, abs=0.02)
    assert fit.bound_ratio is not None and fit.bound_ratio < 10
    with pytest.raises(InvalidParameter):
        lemma_scaling_check(0.0, 1, 0.5, "midfreq")


def test_annulus_and_traveling_data():
    r = np.linspace(0, 50, 501)
    b = annulus_bump(r, 10.0)
    assert np.all(b[(r <= 10) | (r >= 20)] == 0) and b.max() == pytest.approx(np.exp(-1))
    g = SpectralGrid(1, 100.0, 1024)
    d = traveling_data(g, annulus_bump(g.xi_mag, 10.0))
    assert all(f.conjugate_symmetry_error() < 1e-14 for f in d)


def test_regularity_loss_scaling():
    res = regularity_loss_experiment(CRIT, [10, 20], T=400.0)
    assert np.all(np.abs(res.ratios - 4) <= 0.6)
    damped = regularity_loss_experiment(P, [10, 20], T=20.0, allow_subcritical=True)
    assert np.all(np.abs(damped.ratios - 1) <= 0.1)


def test_regularity_loss_errors():
    with pytest.raises(RegimeError):
        regularity_loss_experiment(P, [10], T=10.0)
    with pytest.raises(InvalidParameter):
        regularity_loss_experiment(CRIT, [10, 200], T=10.0)


def test_single_mode_rate():
    rate, R = single_mode_decay(CRIT, 40.0, 400.0)
    assert rate == pytest.approx(CRIT.gamma / (2 * CRIT.tau ** 2 * R ** 2), rel=0.01)


def test_convergence_same_delta_is_zero():
    g = SpectralGrid(1, 200.0, 1024)
    f = synthesize_gaussian(g)
    data = (f, f, f)
    rec = subcritical_to_critical_convergence(CRIT, CRIT, data, 0, 0.0, [1.0, 2.0])
    assert np.all(rec.values == 0)
    small = subcritical_to_critical_convergence(ModelParams(1.0, 1e-3, 1.0), CRIT, data, 0, 0.0, [5.0, 10.0])
    big = subcritical_to_critical_convergence(ModelParams(1.0, 1e-2, 1.0), CRIT, data, 0, 0.0, [5.0, 10.0])
    assert np.all(big.values / small.values == pytest.approx(10, rel=0.05))


def test_convergence_errors():
    f = synthesize_gaussian(SpectralGrid(1, 200.0, 1024))
    with pytest.raises(RegimeError):
        subcritical_to_critical_convergence(P, P, (f, f, f), 0, 0.0, [1.0])
    with pytest.raises(InvalidParameter):
        subcritical_to_critical_convergence(ModelParams(2.0, 1.0, 1.0), CRIT, (f, f, f), 0, 0.0, [1.0])


def test_rate_report(tmp_path):
    fit = RateFit(-1.26, 0.1, 0.01, (50.0, 200.0))
    path = tmp_path / "rates.csv"
    write_rate_report(path, [RateRow("linear-decay", 1, 0.0, 0, 0.0, -1.25, fit)])
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RATE_REPORT_COLUMNS
    assert rows[1][6] == "-1.26" and rows[1][-1] == "50.0:200.0"


def test_propagation_matches_profile_mass():
    # sanity link between the linear solution and the profile mass at late time
    f = synthesize_gaussian(G)
    data = (f, Field.zeros(G), Field.zeros(G))
    s = propagate_linear(data, P, 100.0)
    assert s.phi.coeffs[0].real == pytest.approx(subcritical_profile(data, P, 100.0).coeffs[0].real, rel=1e-6)
