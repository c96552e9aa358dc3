"""Experiment presets: each writes CSVs (and snapshots) into the output directory."""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import itertools
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (RateRow, TimeSeriesRecord, annulus_bump, fit_decay_rate,
                          regularity_loss_experiment, single_mode_decay, subcritical_to_critical_convergence,
                          traveling_data, weighted_profile_error, write_rate_report)
from .charroots import export_sweep_csv, solve_characteristic_batch, spectral_abscissa_scan
from .config import ExperimentConfig, ExperimentKind as K
from .errors import ConfigError
from .linear import (critical_profile, energy_dissipation_check, linear_trajectory, propagate_linear,
                     subcritical_profile)
from .model import ModelParams
from .nonlinear import (NonlinearityKind, duhamel_mild_solution, integrate, moment_M, nonlinear_profile,
                        solution_space_norm, write_series_csv)
from .plotting import SeriesSpec, gnuplot_script
from .spectral import (Field, NormSpec, read_snapshot, sobolev_norm, sobolev_norms_batch,
                       synthesize_gaussian, transform, write_snapshot)

WORKERS_ENV = "WDMGT_WORKERS"
MANIFEST = "manifest.json"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class RunContext:
    config: ExperimentConfig
    out: Path
    files: list[str] = field(default_factory=list)
    series: list[SeriesSpec] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    log: list[str] = field(default_factory=list)

    def write_csv(self, name: str, header, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.files.append(name)
        return path

    def add_file(self, name: str):
        self.files.append(name)

    def add_series(self, spec: SeriesSpec):
        self.series.append(spec)


# data ------------------------------------------------------------------------

def build_data(cfg: ExperimentConfig) -> tuple[Field, Field, Field]:
    grid, d = cfg.grid, cfg.data
    kind = d.get("type", "gaussian")
    amp, width = float(d.get("amplitude", 1.0)), float(d.get("width", 1.0))
    center = d.get("center", [0.0] * grid.dim)
    zero = Field.zeros(grid)
    if kind == "snapshot":
        out = []
        for s in ("phi0", "phi1", "phi2"):
            if s in d:
                f = read_snapshot(d[s])
                if f.grid != grid:
                    raise ConfigError(f"snapshot {d[s]} was written on a different grid")
                out.append(f)
            else:
                out.append(zero)
        return tuple(out)
    if kind == "annulus":
        return traveling_data(grid, amp * annulus_bump(grid.xi_mag, float(d["radius"])))
    f = synthesize_gaussian(grid, amp, width, center)
    if kind == "antisymmetric":
        # odd in x_1 about the centre: zero mass exactly
        f = transform(grid, (grid.x[0] - center[0]) / width * f.to_physical())
    slots = {"phi0": 0, "phi1": 1, "phi2": 2}
    out = [zero, zero, zero]
    out[slots[d.get("slot", "phi0")]] = f
    return tuple(out)


def sample_times(cfg: ExperimentConfig) -> np.ndarray:
    t = cfg.time
    return np.linspace(t.get("t_start", 0.0), t["T"], t.get("samples", 61))


def _window(cfg: ExperimentConfig, times) -> tuple[float, float]:
    return cfg.fit_window or (float(times[-1]) / 4, float(times[-1]))


def _log_wrap(ctx: RunContext, T: float):
    cfg = ctx.config
    ok = cfg.grid.no_wrap_ok(cfg.params, T)
    ctx.summary["no_wrap_ok"] = ok
    ctx.log.append(f"no-wrap budget at T={T:g} on L={cfg.grid.box_length:g}: {'ok' if ok else 'EXCEEDED'}")


# presets -----------------------------------------------------------------------

def _root_sweep(ctx: RunContext):
    cfg, o = ctx.config, ctx.config.options
    if o["random"]:
        rng = np.random.default_rng(cfg.seed)
        xi = np.sort(rng.uniform(0.0, o["xi_max"], int(o["samples"])))
    else:
        xi = np.linspace(0.0, o["xi_max"], int(o["samples"]))
    export_sweep_csv(ctx.out / "roots.csv", cfg.params, xi)
    ctx.add_file("roots.csv")
    res = solve_characteristic_batch(cfg.params, xi).residual().max()
    ctx.summary["max_residual"] = float(res)
    ctx.add_series(SeriesSpec("roots_real", "roots.csv", "xi", ("re1", "re2", "re3"), title="Re lambda"))
    ctx.add_series(SeriesSpec("roots_imag", "roots.csv", "xi", ("im1", "im2", "im3"), title="Im lambda"))


def _abscissa_job(args):
    tau, delta, gamma, scan, xi_max, samples = args
    p = ModelParams(tau, delta, gamma, instability_scan=scan)
    xi = np.linspace(0.0, xi_max, samples + 1)[1:]
    return spectral_abscissa_scan(p, xi)


def _abscissa_scan(ctx: RunContext):
    cfg, o = ctx.config, ctx.config.options
    combos = [(t, d, g, False) for t, d, g in itertools.product(o["taus"], o["deltas"], o["gammas"])]
    p = cfg.params
    combos.append((p.tau, p.delta, p.gamma, p.instability_scan))
    jobs = [(float(t), float(d), float(g), s, float(o["xi_max"]), int(o["samples"])) for t, d, g, s in combos]
    workers = worker_count()
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_abscissa_job, jobs))
    else:
        results = [_abscissa_job(j) for j in jobs]
    rows = [(j[0], j[1], j[2], a, x, a < 0) for j, (a, x) in zip(jobs, results)]
    ctx.write_csv("abscissa.csv", ["tau", "delta", "gamma", "abscissa", "argmax_xi", "stable"], rows)
    ctx.summary["all_grid_stable"] = all(r[5] for r in rows[:-1])
    ctx.summary["configured_abscissa"] = float(rows[-1][3])
    ctx.add_series(SeriesSpec("abscissa", "abscissa.csv", "delta", ("abscissa",), group="tau",
                              title="spectral abscissa"))


def _linear_decay(ctx: RunContext):
    cfg = ctx.config
    data = build_data(cfg)
    times = sample_times(cfg)
    _log_wrap(ctx, times[-1])
    traj = linear_trajectory(data, cfg.params, times)
    n = cfg.grid.dim
    rows, rates = [], []
    for req in cfg.norms:
        spec = NormSpec.hdot(req.s + 2 - req.j)
        vals = sobolev_norms_batch(np.stack([s.derivative(req.j).coeffs for s in traj]), cfg.grid, spec)
        w = (1 + times) ** ((n + 2 * req.s + 4 + 2 * req.j) / 4)
        rows += [(t, req.j, req.s, v, wv) for t, v, wv in zip(times, vals, w * vals)]
        fit = fit_decay_rate(TimeSeriesRecord(times[times > 0], vals[times > 0]), _window(cfg, times))
        rates.append(RateRow(f"linear-decay/j{req.j}/s{req.s:g}", n, req.s, req.j, req.s,
                             -(n + 2 * req.s + 4 + 2 * req.j) / 4, fit))
    ctx.write_csv("norms.csv", ["t", "j", "s", "norm", "weighted_norm"], rows)
    _rates(ctx, rates)
    write_snapshot(ctx.out / "phi_T.bin", traj[-1].phi)
    ctx.add_file("phi_T.bin")
    ctx.add_series(SeriesSpec("norms", "norms.csv", "t", ("norm",), group="j", logx=True, logy=True,
                              title="||d_t^j phi||"))


def _rates(ctx: RunContext, rates: list[RateRow]):
    write_rate_report(ctx.out / "rates.csv", rates)
    ctx.add_file("rates.csv")
    ctx.summary["rates"] = {r.experiment_id: {"predicted": r.predicted_slope, "fitted": r.fit.slope}
                            for r in rates}


def _linear_profile(ctx: RunContext):
    cfg = ctx.config
    data = build_data(cfg)
    times = sample_times(cfg)
    times = times[times > 0]
    _log_wrap(ctx, times[-1])
    traj = linear_trajectory(data, cfg.params, times)
    p = cfg.params
    rows, summ = [], {}
    for req in cfg.norms:
        if p.is_critical:
            prof = lambda t, j=req.j: critical_profile(data, p, t, j)
        else:
            prof = lambda t, j=req.j: subcritical_profile(data, p, t, j, point_mass=True)
        err, floor = weighted_profile_error(traj, prof, req.j, req.s)
        norms = sobolev_norms_batch(np.stack([s.derivative(req.j).coeffs for s in traj]), cfg.grid,
                                    NormSpec.hdot(req.s + 2 - req.j))
        shadow = times ** ((cfg.grid.dim + 2 * req.s + 4 + 2 * req.j) / 4) * norms
        rows += [(t, req.j, req.s, e, f, sh) for t, e, f, sh in zip(times, err.values, floor.values, shadow)]
        summ[f"j{req.j}/sigma{req.s:g}"] = {"final_over_initial": err.ratio_final_initial(),
                                            "decreasing": err.is_decreasing(),
                                            "min_shadow_over_floor": float(np.min(shadow / floor.values))}
    ctx.write_csv("profile_error.csv", ["t", "j", "sigma", "weighted_error", "floor", "weighted_norm"], rows)
    ctx.summary["profile"] = summ
    ctx.add_series(SeriesSpec("profile_error", "profile_error.csv", "t", ("weighted_error", "floor"),
                              group="j", logx=True, logy=True, title="weighted profile error"))


def _critical_regloss(ctx: RunContext):
    cfg, o = ctx.config, ctx.config.options
    p, T, samples = cfg.params, cfg.time["T"], cfg.time.get("samples", 200)
    runs = [(p, T, False)]
    if o["compare_delta"] and o["compare_delta"] > 0:
        runs.append((p.replace(delta=float(o["compare_delta"])), float(o["compare_T"]), True))
    rows = []
    for params, horizon, sub in runs:
        res = regularity_loss_experiment(params, o["radii"], horizon, cfg.grid, samples, allow_subcritical=sub)
        ratios = [float("nan")] + list(res.ratios)
        rows += [(params.delta, R, te, r, rms) for R, te, r, rms in
                 zip(res.radii, res.efold_times, ratios, res.fit_residuals)]
        ctx.summary[f"ratios_delta{params.delta:g}"] = [float(x) for x in res.ratios]
    ctx.write_csv("efold.csv", ["delta", "R", "efold_time", "ratio_to_previous", "fit_rms"], rows)
    R = float(o["single_mode_radius"])
    rate, r_lat = single_mode_decay(p, R, T, cfg.grid, samples)
    pred = p.gamma / (2 * p.tau ** 2) / r_lat ** 2
    ctx.write_csv("single_mode.csv", ["R", "fitted_rate", "predicted_rate", "ratio"],
                  [(r_lat, rate, pred, rate / pred)])
    ctx.summary["single_mode_ratio"] = rate / pred
    ctx.add_series(SeriesSpec("efold", "efold.csv", "R", ("efold_time",), group="delta", logx=True, logy=True,
                              title="e-folding time per annulus"))


def _critical_energy(ctx: RunContext):
    cfg = ctx.config
    data = build_data(cfg)
    dt, T = cfg.time["dt"], cfg.time["T"]
    steps = int(round(T / dt))
    times = dt * np.arange(steps + 1)
    rep = energy_dissipation_check((propagate_linear(data, cfg.params, t) for t in times), cfg.params)
    dEdt = np.full_like(rep.energy, np.nan)
    dEdt[1:-1] = (rep.energy[2:] - rep.energy[:-2]) / (2 * dt)
    ctx.write_csv("energy.csv", ["t", "energy", "dissipation", "dEdt"],
                  zip(rep.times, rep.energy, rep.dissipation, dEdt))
    ctx.summary.update(residual=rep.residual, monotone=rep.monotone)
    ctx.add_series(SeriesSpec("energy", "energy.csv", "t", ("energy",), title="critical energy"))


def _coro_convergence(ctx: RunContext):
    cfg = ctx.config
    data = build_data(cfg)
    times = sample_times(cfg)
    times = times[times > 0]
    _log_wrap(ctx, times[-1])
    rows, summ = [], {}
    for req in cfg.norms:
        rec = subcritical_to_critical_convergence(cfg.params, cfg.params.replace(delta=0.0), data,
                                                  req.j, req.s, times)
        rows += [(t, req.j, req.s, v) for t, v in zip(rec.times, rec.values)]
        summ[f"j{req.j}/s{req.s:g}"] = {"final_over_initial": rec.ratio_final_initial(),
                                        "decreasing": rec.is_decreasing()}
    ctx.write_csv("convergence.csv", ["t", "j", "s", "weighted_difference"], rows)
    ctx.summary["convergence"] = summ
    ctx.add_series(SeriesSpec("convergence", "convergence.csv", "t", ("weighted_difference",), group="j",
                              logx=True, logy=True, title="delta>0 vs delta=0"))


def _kernel_rates(ctx: RunContext):
    cfg = ctx.config
    if cfg.data.get("slot", "phi2") != "phi2":
        raise ConfigError("kernel-rates convolves K_2, so data.slot must be 'phi2'")
    data = build_data(cfg)
    f0 = data[2]
    if cfg.options["unit_mass"]:
        mass = float(f0.coeffs.flat[0].real)
        if mass == 0:
            raise ConfigError("unit_mass requested for zero-mass data")
        f0 = f0 * (1.0 / mass)
    zero = Field.zeros(cfg.grid)
    times = sample_times(cfg)
    times = times[times > 0]
    _log_wrap(ctx, times[-1])
    traj = linear_trajectory((zero, zero, f0), cfg.params, times)
    n = cfg.grid.dim
    rows, rates = [], []
    for req in cfg.norms:
        if req.j > 1:
            raise ConfigError("kernel-rates needs j in {0, 1} (d_t^(j+1) K_2)")
        vals = sobolev_norms_batch(np.stack([s.derivative(req.j + 1).coeffs for s in traj]), cfg.grid,
                                   NormSpec.hdot(req.s + 2 - req.j))
        rows += [(t, req.j, req.s, v) for t, v in zip(times, vals)]
        fit = fit_decay_rate(TimeSeriesRecord(times, vals), _window(cfg, times))
        rates.append(RateRow(f"kernel-rates/j{req.j}/s{req.s:g}", n, req.s, req.j, req.s,
                             -(n + 2 * req.s + 8 + 2 * req.j) / 4, fit))
    ctx.write_csv("kernel_norms.csv", ["t", "j", "s", "norm"], rows)
    _rates(ctx, rates)
    ctx.add_series(SeriesSpec("kernel_norms", "kernel_norms.csv", "t", ("norm",), group="j", logx=True,
                              logy=True, title="||d_t^(j+1) K_2 * f0||"))


def _nonlinearity(cfg: ExperimentConfig) -> NonlinearityKind:
    if cfg.kind is K.WESTERVELT_DECAY:
        return NonlinearityKind.WESTERVELT
    return NonlinearityKind(cfg.options.get("nonlinearity", "kuznetsov"))


def _integrate(cfg: ExperimentConfig, data):
    t = cfg.time
    return integrate(data, cfg.params, _nonlinearity(cfg), T=t["T"], dt=t["dt"],
                     sample_every=t.get("sample_every", 1))


def _nonlinear_decay(ctx: RunContext):
    cfg = ctx.config
    data = build_data(cfg)
    _log_wrap(ctx, cfg.time["T"])
    kind = _nonlinearity(cfg)
    s = float(cfg.options["s"])
    traj = _integrate(cfg, data)
    M = moment_M(data, cfg.params, kind)
    write_series_csv(ctx.out / "series.csv", traj, s, M)
    ctx.add_file("series.csv")
    n = cfg.grid.dim
    keep = traj.times > 0
    rates = []
    for j in range(3):
        for sigma in (j - 2, s):
            vals = traj.norms(j, NormSpec.hdot(sigma + 2 - j))
            fit = fit_decay_rate(TimeSeriesRecord(traj.times[keep], vals[keep]), _window(cfg, traj.times))
            rates.append(RateRow(f"{cfg.kind.value}/j{j}/sigma{sigma:g}", n, s, j, sigma,
                                 -(n + 2 * sigma + 4 + 2 * j) / 4, fit))
    _rates(ctx, rates)
    ssn = solution_space_norm(traj, s)
    ctx.summary.update(M=M, solution_space_norm=ssn.value)
    alphas = [float(a) for a in cfg.options.get("alphas", [])]
    if alphas:
        base = float(cfg.data.get("amplitude", 1.0))
        rows = []
        for a in alphas:
            scaled = tuple(f * (a / base) for f in data)
            v = solution_space_norm(_integrate(cfg, scaled), s).value
            rows.append((a, v, v / a))
        ctx.write_csv("scaling.csv", ["alpha", "solution_space_norm", "norm_over_alpha"], rows)
    write_snapshot(ctx.out / "psi_T.bin", Field(cfg.grid, traj.states[-1, 0]))
    ctx.add_file("psi_T.bin")
    ctx.add_series(SeriesSpec("weighted_norms", "series.csv", "t", ("weighted_norm",), group="j",
                              filters={"sigma": repr(float(s))}, title="weighted norms, sigma = s"))
    ctx.add_series(SeriesSpec("l2_norm", "series.csv", "t", ("norm",), filters={"j": "0", "sigma": "-2.0"},
                              logx=True, logy=True, title="||psi||_L2"))


def _nonlinear_profile(ctx: RunContext):
    cfg = ctx.config
    data = build_data(cfg)
    _log_wrap(ctx, cfg.time["T"])
    kind = _nonlinearity(cfg)
    traj = _integrate(cfg, data)
    M = moment_M(data, cfg.params, kind)
    w0, w1 = _window(cfg, traj.times)
    sel = [k for k, t in enumerate(traj.times) if t > 0]
    rows, summ = [], {}
    for j in (0, 1):
        pairs = [(traj.times[k], Field(cfg.grid, traj.states[k, j])) for k in sel]
        err, floor = weighted_profile_error(pairs, lambda t, j=j: nonlinear_profile(cfg.grid, cfg.params, M, t, j),
                                            j, j - 2)
        rows += [(t, j, j - 2, e, f, M) for t, e, f in zip(err.times, err.values, floor.values)]
        win = err.window(w0, w1)
        summ[f"j{j}"] = {"final_over_initial": win.ratio_final_initial(), "decreasing": win.is_decreasing()}
    ctx.write_csv("profile_error.csv", ["t", "j", "sigma", "weighted_error", "floor", "M_value"], rows)
    ctx.summary.update(M=M, profile=summ)
    ctx.add_series(SeriesSpec("profile_error", "profile_error.csv", "t", ("weighted_error", "floor"), group="j",
                              logx=True, logy=True, title="nonlinear profile error"))


def _duhamel_crosscheck(ctx: RunContext):
    cfg = ctx.config
    data = build_data(cfg)
    kind = _nonlinearity(cfg)
    T, dt = cfg.time["T"], cfg.time["dt"]
    q = float(cfg.options["quad_dt"])
    stride = int(round(q / dt))
    if stride < 1 or not math.isclose(stride * dt, q, rel_tol=1e-9):
        raise ConfigError("options.quad_dt must be a positive multiple of time.dt")
    traj = integrate(data, cfg.params, kind, T=T, dt=dt, sample_every=stride)
    lin = integrate(data, cfg.params, kind, T=T, dt=dt, nonlinear_scale=0.0)
    mild = duhamel_mild_solution(data, cfg.params, kind, T=T, quad_dt=q, trajectory=traj)
    fin = traj.final()
    spec = NormSpec.hdot(0)
    rows = []
    for name, a, b in (("psi", mild.psi, fin.psi), ("psi_t", mild.psi_t, fin.psi_t),
                       ("psi_tt", mild.psi_tt, fin.psi_tt)):
        rows.append((f"rel_l2_{name}", sobolev_norm(a - b, spec) / sobolev_norm(b, spec)))
    rows.append(("rel_l2_cn_vs_rep2", sobolev_norm(mild.psi_tt - mild.psi_tt_direct, spec)
                 / sobolev_norm(mild.psi_tt, spec)))
    nl = Field(cfg.grid, lin.states[-1, 0])
    rows.append(("rel_nonlinear_effect", sobolev_norm(fin.psi - nl, spec) / sobolev_norm(fin.psi, spec)))
    ctx.write_csv("crosscheck.csv", ["quantity", "value"], rows)
    ctx.summary.update({k: float(v) for k, v in rows})


PRESETS = {
    K.ROOT_SWEEP: _root_sweep,
    K.ABSCISSA_SCAN: _abscissa_scan,
    K.LINEAR_DECAY: _linear_decay,
    K.LINEAR_PROFILE: _linear_profile,
    K.CRITICAL_REGLOSS: _critical_regloss,
    K.CRITICAL_ENERGY: _critical_energy,
    K.CORO_CONVERGENCE: _coro_convergence,
    K.KERNEL_RATES: _kernel_rates,
    K.NONLINEAR_DECAY: _nonlinear_decay,
    K.NONLINEAR_PROFILE: _nonlinear_profile,
    K.DUHAMEL_CROSSCHECK: _duhamel_crosscheck,
    K.WESTERVELT_DECAY: _nonlinear_decay,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy
    return {"wdmgt": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run_experiment(cfg: ExperimentConfig) -> RunContext:
    """Execute one preset; writes CSVs, plot scripts and a manifest into ``cfg.output``."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg, out)
    t0 = time.perf_counter()
    PRESETS[cfg.kind](ctx)
    ctx.timings["run_seconds"] = time.perf_counter() - t0
    for spec in ctx.series:
        name = f"plot_{spec.name}.gp"
        (out / name).write_text(gnuplot_script(spec, out))
        ctx.add_file(name)
    manifest = {
        "kind": cfg.kind.value,
        "config": cfg.raw,
        "seed": cfg.seed,
        "versions": _versions(),
        "timings": ctx.timings,
        "log": ctx.log,
        "summary": _jsonable(ctx.summary),
        "series": [s.as_dict() for s in ctx.series],
        "files": {name: _sha256(out / name) for name in ctx.files},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ctx


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
