"""Experiment configuration: TOML schema, per-preset defaults, validation."""

from __future__ import annotations

import copy
import enum
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError, MGTError
from .model import ModelParams, validate_params
from .spectral import SpectralGrid


class ExperimentKind(enum.Enum):
    ROOT_SWEEP = "root-sweep"
    ABSCISSA_SCAN = "abscissa-scan"
    LINEAR_DECAY = "linear-decay"
    LINEAR_PROFILE = "linear-profile"
    CRITICAL_REGLOSS = "critical-regloss"
    CRITICAL_ENERGY = "critical-energy"
    CORO_CONVERGENCE = "coro-convergence"
    KERNEL_RATES = "kernel-rates"
    NONLINEAR_DECAY = "nonlinear-decay"
    NONLINEAR_PROFILE = "nonlinear-profile"
    DUHAMEL_CROSSCHECK = "duhamel-crosscheck"
    WESTERVELT_DECAY = "westervelt-decay"


K = ExperimentKind

TOP_KEYS = {"kind", "output", "seed", "norms", "params", "grid", "data", "time", "fit", "options"}
SECTION_KEYS = {
    "params": {"tau", "delta", "gamma", "b_over_2a", "instability_scan"},
    "grid": {"dim", "box_length", "points"},
    "data": {"type", "amplitude", "width", "center", "slot", "radius", "phi0", "phi1", "phi2"},
    "time": {"T", "dt", "samples", "t_start", "sample_every"},
    "fit": {"window"},
}
NORM_KEYS = {"j", "s"}
DATA_TYPES = {"gaussian", "annulus", "antisymmetric", "snapshot"}
SLOTS = ("phi0", "phi1", "phi2")

_LINEAR = {
    "params": {"tau": 1.0, "delta": 1.0, "gamma": 1.0},
    "grid": {"dim": 1, "box_length": 800.0, "points": 8192},
    "data": {"type": "gaussian", "amplitude": 1.0, "width": 1.0, "slot": "phi0"},
    "time": {"T": 200.0, "t_start": 50.0, "samples": 61},
    "fit": {"window": [50.0, 200.0]},
    "norms": [{"j": 0, "s": 0.0}, {"j": 1, "s": 0.0}],
}
_NONLINEAR = {
    "params": {"tau": 1.0, "delta": 1.0, "gamma": 1.0},
    "grid": {"dim": 1, "box_length": 800.0, "points": 2048},
    "data": {"type": "gaussian", "amplitude": 1e-2, "width": 1.0, "slot": "phi0"},
    "time": {"T": 200.0, "dt": 0.05, "sample_every": 20},
    "fit": {"window": [50.0, 200.0]},
    "options": {"s": 0.5, "alphas": []},
}

DEFAULTS: dict[ExperimentKind, dict] = {
    K.ROOT_SWEEP: {
        "params": {"tau": 1.0, "delta": 1.0, "gamma": 1.0},
        "options": {"xi_max": 50.0, "samples": 2001, "random": False},
    },
    K.ABSCISSA_SCAN: {
        "params": {"tau": 1.0, "delta": 1.0, "gamma": 1.0},
        "options": {"taus": [0.5, 1.0, 2.0], "deltas": [0.0, 0.5, 1.0], "gammas": [0.1, 1.0, 3.0],
                    "xi_max": 50.0, "samples": 10000},
    },
    K.LINEAR_DECAY: _LINEAR,
    K.LINEAR_PROFILE: _LINEAR,
    K.CRITICAL_REGLOSS: {
        "params": {"tau": 1.0, "delta": 0.0, "gamma": 1.0},
        "grid": {"dim": 1, "box_length": 100.0, "points": 4096},
        "time": {"T": 400.0, "samples": 200},
        "options": {"radii": [10.0, 20.0, 40.0], "compare_delta": 1.0, "compare_T": 20.0,
                    "single_mode_radius": 40.0},
    },
    K.CRITICAL_ENERGY: {
        "params": {"tau": 1.0, "delta": 0.0, "gamma": 1.0},
        "grid": {"dim": 1, "box_length": 100.0, "points": 1024},
        "data": {"type": "gaussian", "amplitude": 1.0, "width": 1.0, "slot": "phi0"},
        "time": {"T": 5.0, "dt": 1e-3},
    },
    K.CORO_CONVERGENCE: {
        "params": {"tau": 1.0, "delta": 0.5, "gamma": 1.0},
        "grid": {"dim": 1, "box_length": 800.0, "points": 8192},
        "data": {"type": "gaussian", "amplitude": 1.0, "width": 1.0, "slot": "phi0"},
        "time": {"T": 200.0, "t_start": 20.0, "samples": 91},
        "norms": [{"j": 0, "s": 0.0}],
    },
    K.KERNEL_RATES: {
        "params": {"tau": 1.0, "delta": 1.0, "gamma": 1.0},
        "grid": {"dim": 1, "box_length": 800.0, "points": 8192},
        "data": {"type": "gaussian", "amplitude": 1.0, "width": 1.0, "slot": "phi2"},
        "time": {"T": 200.0, "t_start": 50.0, "samples": 61},
        "fit": {"window": [50.0, 200.0]},
        "norms": [{"j": 0, "s": 0.0}],
        "options": {"unit_mass": True},
    },
    K.NONLINEAR_DECAY: _NONLINEAR,
    K.NONLINEAR_PROFILE: _NONLINEAR,
    K.WESTERVELT_DECAY: _NONLINEAR,
    K.DUHAMEL_CROSSCHECK: {
        "params": {"tau": 1.0, "delta": 1.0, "gamma": 1.0},
        "grid": {"dim": 1, "box_length": 100.0, "points": 512},
        "data": {"type": "gaussian", "amplitude": 0.5, "width": 1.0, "slot": "phi0"},
        "time": {"T": 1.0, "dt": 1e-2},
        "options": {"quad_dt": 1e-2, "nonlinearity": "kuznetsov"},
    },
}

OPTION_KEYS: dict[ExperimentKind, set] = {k: set(v.get("options", {})) for k, v in DEFAULTS.items()}
OPTION_KEYS[K.NONLINEAR_DECAY] |= {"nonlinearity"}
OPTION_KEYS[K.NONLINEAR_PROFILE] |= {"nonlinearity"}

# sections each preset reads; anything else in the file is rejected
USES: dict[ExperimentKind, set] = {
    K.ROOT_SWEEP: {"params", "options"},
    K.ABSCISSA_SCAN: {"params", "options"},
    K.LINEAR_DECAY: {"params", "grid", "data", "time", "fit", "norms"},
    K.LINEAR_PROFILE: {"params", "grid", "data", "time", "norms"},
    K.CRITICAL_REGLOSS: {"params", "grid", "time", "options"},
    K.CRITICAL_ENERGY: {"params", "grid", "data", "time"},
    K.CORO_CONVERGENCE: {"params", "grid", "data", "time", "norms"},
    K.KERNEL_RATES: {"params", "grid", "data", "time", "fit", "norms", "options"},
    K.NONLINEAR_DECAY: {"params", "grid", "data", "time", "fit", "options"},
    K.NONLINEAR_PROFILE: {"params", "grid", "data", "time", "fit", "options"},
    K.WESTERVELT_DECAY: {"params", "grid", "data", "time", "fit", "options"},
    K.DUHAMEL_CROSSCHECK: {"params", "grid", "data", "time", "options"},
}


@dataclass(frozen=True)
class NormRequest:
    j: int
    s: float


@dataclass(frozen=True)
class ExperimentConfig:
    kind: ExperimentKind
    params: ModelParams
    output: Path
    seed: int = 0
    grid: SpectralGrid | None = None
    data: dict = field(default_factory=dict)
    time: dict = field(default_factory=dict)
    fit_window: tuple[float, float] | None = None
    norms: tuple[NormRequest, ...] = ()
    options: dict = field(default_factory=dict)
    source: Path | None = None
    raw: dict = field(default_factory=dict)     # resolved configuration echo


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(where: str, got, allowed: set):
    if not isinstance(got, dict):
        raise ConfigError(f"[{where}] must be a table")
    unknown = set(got) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")


def _number(where, v, integer=False):
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        raise ConfigError(f"{where} must be {'an integer' if integer else 'a number'}, got {v!r}")
    return v if integer else float(v)


def parse_config(raw: dict, base_dir: Path | None = None, source: Path | None = None) -> ExperimentConfig:
    """Validate a decoded TOML document and fill preset defaults."""
    base_dir = base_dir or Path.cwd()
    _check_keys("top level", raw, TOP_KEYS)
    if "kind" not in raw:
        raise ConfigError("missing required key 'kind'")
    try:
        kind = ExperimentKind(raw["kind"])
    except ValueError:
        raise ConfigError(f"unknown experiment kind {raw['kind']!r}; "
                          f"choose from {', '.join(k.value for k in ExperimentKind)}") from None
    used = USES[kind]
    for sec in set(raw) - {"kind", "output", "seed"}:
        if sec not in used:
            raise ConfigError(f"section '{sec}' is not used by preset {kind.value}")
    for sec, allowed in SECTION_KEYS.items():
        if sec in raw:
            _check_keys(sec, raw[sec], allowed)
    if "options" in raw:
        _check_keys("options", raw["options"], OPTION_KEYS[kind])

    cfg = _merge(DEFAULTS[kind], {k: v for k, v in raw.items() if k not in ("kind", "output", "seed")})
    seed = _number("seed", raw.get("seed", 0), integer=True)
    output = Path(raw.get("output", f"out/{kind.value}"))
    if not output.is_absolute():
        output = base_dir / output

    try:
        params = validate_params(cfg["params"])
    except MGTError as exc:
        raise ConfigError(f"[params]: {exc}") from None
    if kind in (K.CRITICAL_REGLOSS, K.CRITICAL_ENERGY) and not params.is_critical:
        raise ConfigError(f"preset {kind.value} requires delta = 0")
    if kind is K.CORO_CONVERGENCE and not params.delta > 0:
        raise ConfigError("coro-convergence compares a delta > 0 run with delta = 0; set delta > 0")
    if kind not in (K.ROOT_SWEEP, K.ABSCISSA_SCAN) and params.delta < 0:
        raise ConfigError(f"preset {kind.value} cannot evolve super-critical parameters")

    grid = None
    if "grid" in used:
        g = cfg["grid"]
        try:
            grid = SpectralGrid(_number("grid.dim", g["dim"], True), _number("grid.box_length", g["box_length"]),
                                _number("grid.points", g["points"], True))
        except KeyError as exc:
            raise ConfigError(f"[grid] missing {exc}") from None
        except MGTError as exc:
            raise ConfigError(f"[grid]: {exc}") from None

    data = dict(cfg.get("data", {})) if "data" in used else {}
    if data:
        _check_data(data, grid, base_dir)

    time = {k: _number(f"time.{k}", v, k in ("samples", "sample_every"))
            for k, v in cfg.get("time", {}).items()} if "time" in used else {}
    if time:
        if time.get("T", 1.0) <= 0:
            raise ConfigError("time.T must be positive")
        if "dt" in time and time["dt"] <= 0:
            raise ConfigError("time.dt must be positive")
        if time.get("t_start", 0.0) < 0 or time.get("t_start", 0.0) >= time.get("T", 1.0):
            raise ConfigError("time.t_start must lie in [0, T)")

    window = None
    if "fit" in used:
        w = cfg.get("fit", {}).get("window")
        if w is not None:
            if not (isinstance(w, list) and len(w) == 2 and w[0] < w[1]):
                raise ConfigError("fit.window must be [t0, t1] with t0 < t1")
            window = (float(w[0]), float(w[1]))

    norms = ()
    if "norms" in used:
        reqs = []
        for k, item in enumerate(cfg.get("norms", [])):
            _check_keys(f"norms[{k}]", item, NORM_KEYS)
            j = _number(f"norms[{k}].j", item.get("j", 0), integer=True)
            if j not in (0, 1, 2):
                raise ConfigError(f"norms[{k}].j must be 0, 1 or 2")
            reqs.append(NormRequest(j, _number(f"norms[{k}].s", item.get("s", 0.0))))
        if not reqs:
            raise ConfigError("at least one norm request is required")
        norms = tuple(reqs)

    options = dict(cfg.get("options", {}))
    if "nonlinearity" in options and options["nonlinearity"] not in ("kuznetsov", "westervelt"):
        raise ConfigError("options.nonlinearity must be 'kuznetsov' or 'westervelt'")

    resolved = {"kind": kind.value, "output": str(raw.get("output", f"out/{kind.value}")), "seed": seed,
                **{k: v for k, v in cfg.items() if k in used}}
    return ExperimentConfig(kind, params, output, seed, grid, data, time, window, norms, options,
                            source, resolved)


def _check_data(data: dict, grid: SpectralGrid | None, base_dir: Path):
    kind = data.get("type", "gaussian")
    if kind not in DATA_TYPES:
        raise ConfigError(f"data.type must be one of {sorted(DATA_TYPES)}, got {kind!r}")
    if data.get("slot", "phi0") not in SLOTS:
        raise ConfigError(f"data.slot must be one of {SLOTS}")
    if "center" in data and grid is not None and len(data["center"]) != grid.dim:
        raise ConfigError("data.center must have one entry per dimension")
    if kind == "annulus" and "radius" not in data:
        raise ConfigError("annulus data needs data.radius")
    if kind == "snapshot":
        paths = [data[s] for s in SLOTS if s in data]
        if not paths:
            raise ConfigError("snapshot data needs at least one of data.phi0/phi1/phi2")
        for s in SLOTS:
            if s in data:
                p = Path(data[s])
                p = p if p.is_absolute() else base_dir / p
                if not p.is_file():
                    raise ConfigError(f"snapshot file for {s} not found: {p}")
                data[s] = str(p)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path.parent.resolve(), path)
