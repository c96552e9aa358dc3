"""Decay-rate fitting and the large-time verification experiments."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _quad

from .errors import (FitUnstable, InsufficientData, InvalidParameter, NonConvergence,
                     NonPositiveValue, RegimeError, ShapeMismatch)
from .linear import LinearState, get_propagator, linear_trajectory
from .model import CutoffPartition, ModelParams
from .nonlinear import Trajectory
from .spectral import Field, NormSpec, SpectralGrid, sobolev_norms_batch

MIN_FIT_SAMPLES = 10


@dataclass(frozen=True)
class TimeSeriesRecord:
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ShapeMismatch("times and values must be 1-d arrays of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise InvalidParameter("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def window(self, t0: float, t1: float) -> "TimeSeriesRecord":
        keep = (self.times >= t0) & (self.times <= t1)
        return TimeSeriesRecord(self.times[keep], self.values[keep], dict(self.meta))

    def ratio_final_initial(self) -> float:
        return float(self.values[-1] / self.values[0])

    def is_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) < 0))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    rms_residual: float
    window: tuple[float, float]
    bound_ratio: float | None = None   # largefreq lemma check only


def default_window(series: TimeSeriesRecord) -> tuple[float, float]:
    T = float(series.times[-1])
    return T / 4, T


def fit_decay_rate(series: TimeSeriesRecord, window: tuple[float, float] | None = None) -> RateFit:
    """Least-squares power law v ~ C t^slope over ``window`` (default [T/4, T])."""
    t0, t1 = window if window is not None else default_window(series)
    sub = series.window(t0, t1)
    if sub.times.size < MIN_FIT_SAMPLES:
        raise InsufficientData(f"{sub.times.size} samples in [{t0:g}, {t1:g}], need {MIN_FIT_SAMPLES}")
    if np.any(sub.values <= 0) or np.any(sub.times <= 0):
        raise NonPositiveValue("log-log fit needs positive times and values")
    x, y = np.log(sub.times), np.log(sub.values)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    rms = float(np.sqrt(np.mean((A @ [slope, intercept] - y) ** 2)))
    return RateFit(float(slope), float(intercept), rms, (float(t0), float(t1)))


def fit_exponential(times, values) -> tuple[float, float]:
    """Fit log v = a + b t; returns (rate b, rms residual)."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    if t.size < MIN_FIT_SAMPLES:
        raise InsufficientData(f"{t.size} samples, need {MIN_FIT_SAMPLES}")
    if np.any(v <= 0):
        raise NonPositiveValue("exponential fit needs positive values")
    b, a = np.polyfit(t, np.log(v), 1)
    rms = float(np.sqrt(np.mean((a + b * t - np.log(v)) ** 2)))
    return float(b), rms


# profile errors ------------------------------------------------------------

def _derivative_stack(trajectory, j: int) -> tuple[SpectralGrid, np.ndarray, np.ndarray]:
    if isinstance(trajectory, Trajectory):
        return trajectory.grid, trajectory.times, trajectory.states[:, j]
    states = list(trajectory)
    if not states:
        raise InsufficientData("empty trajectory")
    if isinstance(states[0], LinearState):
        grid = states[0].grid
        return grid, np.array([s.t for s in states]), np.stack([s.derivative(j).coeffs for s in states])
    # (t, Field) pairs
    grid = states[0][1].grid
    return grid, np.array([t for t, _ in states], float), np.stack([f.coeffs for _, f in states])


def weighted_profile_error(trajectory, profile: Callable[[float], Field], j: int, sigma: float,
                           meta: dict | None = None) -> tuple[TimeSeriesRecord, TimeSeriesRecord]:
    """Weighted distance to a profile and the matching optimality floor.

    ``trajectory`` is a nonlinear ``Trajectory``, a list of ``LinearState`` or
    a list of ``(t, Field)`` pairs holding the j-th derivative. ``profile(t)``
    returns the profile of that derivative. Both series carry the weight
    t^((n + 2 sigma + 4 + 2j)/4) and use the Hdot^(sigma + 2 - j) norm.
    """
    grid, times, coeffs = _derivative_stack(trajectory, j)
    if np.any(times <= 0):
        raise InvalidParameter("profile comparison needs t > 0")
    prof = []
    for t in times:
        p = profile(float(t))
        if p.grid != grid:
            raise ShapeMismatch("trajectory and profile live on different grids")
        prof.append(p.coeffs)
    prof = np.stack(prof)
    spec = NormSpec.hdot(sigma + 2 - j, j=j, sigma=sigma)
    w = times ** ((grid.dim + 2 * sigma + 4 + 2 * j) / 4)
    m = dict(meta or {}, j=j, sigma=sigma, norm=spec.label)
    err = TimeSeriesRecord(times, w * sobolev_norms_batch(coeffs - prof, grid, spec), dict(m, series="error"))
    floor = TimeSeriesRecord(times, w * sobolev_norms_batch(prof, grid, spec), dict(m, series="floor"))
    return err, floor


# lemma scaling ---------------------------------------------------------------

def _sphere(n: int) -> float:
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def smallfreq_norm(s: float, n: int, c: float, t: float, cutoffs: CutoffPartition | None = None) -> float:
    """||chi_int(xi) |xi|^s exp(-c |xi|^2 t)||_{L^2(R^n)} by radial quadrature."""
    if not n + 2 * s > 0:
        raise InvalidParameter("smallfreq lemma needs n + 2s > 0")
    cut = cutoffs or CutoffPartition()
    # substitute r = u / sqrt(t): the Gaussian factor lives on u = O(1)
    st = math.sqrt(t)
    u_max = min(cut.eps0 * st, math.sqrt(40.0 / c))

    def f(u):
        return float(cut.chi_int(np.array(u / st))) ** 2 * u ** (2 * s + n - 1) * math.exp(-2 * c * u * u)

    pts = [p for p in (cut.inner_ratio * cut.eps0 * st,) if 0 < p < u_max]
    val, err = _quad.quad(f, 0.0, u_max, points=pts or None, limit=200,
                          epsabs=0.0, epsrel=1e-10)
    if not math.isfinite(val) or err > 1e-6 * max(abs(val), 1e-300):
        raise NonConvergence(f"radial quadrature did not converge (estimate {err:g})")
    return math.sqrt(_sphere(n) * val * t ** (-(2 * s + n) / 2) / (2 * math.pi) ** n)


def largefreq_envelope(s: float, ell: float, c: float, t: float, radii) -> float:
    """sup over R of ||chi_ext |xi|^s exp(-c|xi|^{-2} t) f0|| for unit H^{s+ell} data at |xi| = R."""
    R = np.asarray(radii, float)
    return float(np.max(R ** s * np.exp(-c * t / R ** 2) / (1 + R ** 2) ** ((s + ell) / 2)))


def lemma_scaling_check(s: float, n: int, c: float, which: str, times=None, ell: float = 2.0,
                        radii=None, cutoffs: CutoffPartition | None = None) -> RateFit:
    """Fit the decay of the low-frequency heat multiplier or bound the high-frequency one.

    ``smallfreq`` fits the slope of ||chi_int |xi|^s e^{-c|xi|^2 t}|| (expected
    -(n+2s)/4). ``largefreq`` fits the sup over concentration radii R of the
    high-frequency multiplier norm (expected -ell/2) and reports
    max_t norm / (1+t)^{-ell/2} as ``bound_ratio``.
    """
    times = np.geomspace(1e2, 1e4, 25) if times is None else np.asarray(times, float)
    if which == "smallfreq":
        vals = np.array([smallfreq_norm(s, n, c, t, cutoffs) for t in times])
        return fit_decay_rate(TimeSeriesRecord(times, vals), (times[0], times[-1]))
    if which == "largefreq":
        cut = cutoffs or CutoffPartition()
        lo = cut.outer_ratio * cut.n0
        R = np.geomspace(lo, max(1e3 * lo, 10 * math.sqrt(c * times[-1])), 4000) if radii is None else radii
        vals = np.array([largefreq_envelope(s, ell, c, t, R) for t in times])
        fit = fit_decay_rate(TimeSeriesRecord(times, vals), (times[0], times[-1]))
        ratio = float(np.max(vals * (1 + times) ** (ell / 2)))
        return RateFit(fit.slope, fit.intercept, fit.rms_residual, fit.window, ratio)
    raise InvalidParameter(f"unknown lemma {which!r}")


# regularity loss ------------------------------------------------------------

@dataclass(frozen=True)
class RegularityLossResult:
    radii: np.ndarray
    efold_times: np.ndarray
    fit_residuals: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        """T_e(R_{k+1}) / T_e(R_k)."""
        return self.efold_times[1:] / self.efold_times[:-1]


def annulus_bump(r, R: float) -> np.ndarray:
    """Smooth bump supported in R < r < 2R."""
    r = np.asarray(r, float)
    x = (r - 1.5 * R) / (0.5 * R)
    out = np.zeros_like(r)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def traveling_data(grid: SpectralGrid, spectrum: np.ndarray) -> tuple[Field, Field, Field]:
    """Data exciting mainly the forward wave: phi1 = -i sign(xi_1)|xi| phi0, phi2 = -|xi|^2 phi0."""
    r = grid.xi_mag
    xi1 = grid.xi[0] * np.ones(grid.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        direction = np.where(r > 0, xi1 / np.where(r > 0, r, 1.0), 0.0)
    sgn = np.sign(direction)
    phi0 = spectrum.astype(complex)
    return (Field(grid, phi0), Field(grid, -1j * sgn * r * phi0), Field(grid, -r ** 2 * phi0))


def regularity_loss_experiment(params: ModelParams, radii: Sequence[float], T: float,
                               grid: SpectralGrid | None = None, samples: int = 200,
                               fit_from: float = 0.1, allow_subcritical: bool = False) -> RegularityLossResult:
    """e-folding times of ||phi(t)||_{L^2} for annulus data |xi| in [R, 2R].

    Each annulus is propagated with the exact kernels and log ||phi|| is
    fitted linearly over [fit_from T, T]. The critical regime is required
    unless ``allow_subcritical`` (used for the bounded-in-R comparison run).
    """
    if not (params.is_critical or (allow_subcritical and params.delta > 0)):
        raise RegimeError("regularity-loss experiment requires the critical regime")
    radii = np.asarray(radii, float)
    if grid is None:
        grid = SpectralGrid(1, 100.0, 4096)
    if 2 * radii.max() >= grid.xi1d.max():
        raise InvalidParameter("annulus exceeds the grid's frequency range")
    times = np.linspace(fit_from * T, T, samples)
    spec = NormSpec.hdot(0)
    efold, res = [], []
    for R in radii:
        data = traveling_data(grid, annulus_bump(grid.xi_mag, R))
        c = np.stack([f.coeffs for f in data])
        prop = get_propagator(grid, params)
        norms = np.array([sobolev_norms_batch(prop.apply(float(t), c, orders=1)[:1], grid, spec)[0]
                          for t in times])
        rate, rms = fit_exponential(times, norms)
        if rate >= 0:
            raise FitUnstable(f"no decay detected for R = {R:g}")
        efold.append(-1.0 / rate)
        res.append(rms)
    return RegularityLossResult(radii, np.array(efold), np.array(res))


def single_mode_decay(params: ModelParams, R: float, T: float, grid: SpectralGrid | None = None,
                      samples: int = 200) -> tuple[float, float]:
    """Fitted exponential decay constant of one traveling mode and the lattice radius used."""
    grid = grid or SpectralGrid(1, 100.0, 4096)
    k = int(round(R / grid.dxi))
    r = grid.xi_mag
    spectrum = np.where(np.isclose(r, k * grid.dxi), 1.0, 0.0)
    data = traveling_data(grid, spectrum)
    c = np.stack([f.coeffs for f in data])
    prop = get_propagator(grid, params)
    times = np.linspace(0.1 * T, T, samples)
    norms = np.array([sobolev_norms_batch(prop.apply(float(t), c, orders=1)[:1], grid, NormSpec.hdot(0))[0]
                      for t in times])
    rate, _ = fit_exponential(times, norms)
    return -rate, k * grid.dxi


# sub-critical -> critical ---------------------------------------------------

def subcritical_to_critical_convergence(params_sub: ModelParams, params_crit: ModelParams,
                                        data: Sequence[Field], j: int, s: float, times,
                                        meta: dict | None = None) -> TimeSeriesRecord:
    """Weighted difference t^((n+2s+4+2j)/4) ||d_t^j(phi^delta - phi^0)||_{Hdot^(s+2-j)}."""
    if not params_crit.is_critical:
        raise RegimeError("second parameter set must be critical (delta = 0)")
    if (params_sub.tau, params_sub.gamma) != (params_crit.tau, params_crit.gamma):
        raise InvalidParameter("runs must share tau and gamma")
    if params_sub.delta < 0:
        raise InvalidParameter("first parameter set must have delta >= 0")
    grid = data[0].grid
    times = np.asarray(times, float)
    a = linear_trajectory(data, params_sub, times)
    b = linear_trajectory(data, params_crit, times)
    diff = np.stack([x.derivative(j).coeffs - y.derivative(j).coeffs for x, y in zip(a, b)])
    spec = NormSpec.hdot(s + 2 - j, j=j, sigma=s)
    w = times ** ((grid.dim + 2 * s + 4 + 2 * j) / 4)
    return TimeSeriesRecord(times, w * sobolev_norms_batch(diff, grid, spec),
                            dict(meta or {}, j=j, s=s, delta=(params_sub.delta, params_crit.delta)))


# report -----------------------------------------------------------------------

RATE_REPORT_COLUMNS = ("experiment_id", "n", "s", "j", "sigma", "predicted_slope", "fitted_slope",
                       "residual", "window")


@dataclass(frozen=True)
class RateRow:
    experiment_id: str
    n: int
    s: float
    j: int
    sigma: float
    predicted_slope: float
    fit: RateFit

    def cells(self) -> list[str]:
        w0, w1 = self.fit.window
        return [self.experiment_id, str(self.n), repr(float(self.s)), str(self.j), repr(float(self.sigma)),
                repr(float(self.predicted_slope)), repr(self.fit.slope), repr(self.fit.rms_residual),
                f"{w0!r}:{w1!r}"]


def write_rate_report(path, rows: Sequence[RateRow]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(RATE_REPORT_COLUMNS)
        for row in rows:
            out.writerow(row.cells())
