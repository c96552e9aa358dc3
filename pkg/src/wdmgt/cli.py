"""Command-line entry point: ``wdmgt run|validate|roots|report``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .charroots import RootStructure, solve_characteristic_batch
from .config import load_config
from .errors import BlowUpDetected, ConfigError, MGTError, NonConvergence
from .model import ModelParams
from .plotting import SeriesSpec, render_png
from .presets import MANIFEST, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_GUARD = 0, 2, 3


def _err(msg: str):
    print(f"wdmgt: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)   # wrap budget is logged in the manifest instead
        ctx = run_experiment(cfg)
    for line in ctx.log:
        _err(line)
    print(f"{cfg.kind.value}: wrote {len(ctx.files) + 1} files to {cfg.output}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok: {cfg.kind.value} -> {cfg.output}")
    if cfg.grid is not None and cfg.time.get("T"):
        ok = cfg.grid.no_wrap_ok(cfg.params, cfg.time["T"])
        print(f"no-wrap budget at T={cfg.time['T']:g}: {'ok' if ok else 'EXCEEDED'}")
    return EXIT_OK


def cmd_roots(args) -> int:
    try:
        params = ModelParams(args.tau, args.delta, args.gamma, instability_scan=args.delta < 0)
    except MGTError as exc:
        raise ConfigError(str(exc)) from None
    if args.samples < 1 or args.xi_max < 0:
        raise ConfigError("--samples must be >= 1 and --xi-max >= 0")
    xi = np.linspace(0.0, args.xi_max, args.samples)
    batch = solve_characteristic_batch(params, xi)
    res = batch.residual().max(axis=-1)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["xi", "re1", "im1", "re2", "im2", "re3", "im3", "structure", "residual"])
    for k, x in enumerate(xi):
        w.writerow([repr(float(x))] + [repr(float(v)) for z in batch.roots[k] for v in (z.real, z.imag)]
                   + [RootStructure(int(batch.structure[k])).label, repr(float(res[k]))])
    return EXIT_OK


def cmd_report(args) -> int:
    d = Path(args.dir)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
    except FileNotFoundError:
        raise ConfigError(f"no {MANIFEST} in {d}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{d / MANIFEST}: {exc}") from None
    bad = [name for name, digest in manifest["files"].items()
           if not (d / name).is_file() or hashlib.sha256((d / name).read_bytes()).hexdigest() != digest]
    for name in bad:
        _err(f"hash mismatch or missing file: {name}")
    rows = []
    for raw in manifest["series"]:
        spec = SeriesSpec.from_dict(raw)
        png = render_png(spec, d, d / f"{spec.name}.png")
        rows.append(("figure", spec.name, spec.csv, png.name))
    for key, value in sorted(_flatten(manifest["summary"]).items()):
        rows.append(("summary", key, json.dumps(value), ""))
    with open(d / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section", "name", "value", "figure"])
        w.writerows(rows)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["section", "name", "value", "figure"])
    out.writerows(rows)
    return EXIT_CONFIG if bad else EXIT_OK


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wdmgt", description="Weakly damped MGT/JMGT experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the preset described by a TOML config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a TOML config without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    ro = sub.add_parser("roots", help="print characteristic roots as CSV")
    ro.add_argument("--tau", type=float, required=True)
    ro.add_argument("--delta", type=float, required=True)
    ro.add_argument("--gamma", type=float, required=True)
    ro.add_argument("--xi-max", type=float, default=10.0)
    ro.add_argument("--samples", type=int, default=101)
    ro.set_defaults(func=cmd_roots)
    rep = sub.add_parser("report", help="render figures and a summary for a run directory")
    rep.add_argument("dir")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except (BlowUpDetected, NonConvergence) as exc:
        _err(f"numeric guard tripped: {exc}")
        return EXIT_GUARD
    except MGTError as exc:
        _err(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
