"""Plot descriptions for CSV series: gnuplot scripts and matplotlib PNGs."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class SeriesSpec:
    name: str
    csv: str
    x: str
    y: tuple[str, ...]
    group: str | None = None
    logx: bool = False
    logy: bool = False
    title: str = ""
    filters: dict = field(default_factory=dict)   # column -> required value (string compare)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["y"] = list(self.y)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SeriesSpec":
        return cls(**{**d, "y": tuple(d["y"])})


def read_columns(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _groups(spec: SeriesSpec, header, rows):
    idx = {c: k for k, c in enumerate(header)}
    rows = [r for r in rows if all(r[idx[c]] == str(v) for c, v in spec.filters.items())]
    if spec.group is None:
        return {"": rows}, idx
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r[idx[spec.group]], []).append(r)
    return out, idx


def gnuplot_script(spec: SeriesSpec, directory) -> str:
    """Standalone gnuplot script drawing the series from its CSV."""
    header, rows = read_columns(Path(directory) / spec.csv)
    groups, idx = _groups(spec, header, rows)
    lines = ["set datafile separator ','",
             f"set title '{spec.title or spec.name}'",
             f"set xlabel '{spec.x}'",
             "set key outside",
             "set terminal pngcairo size 900,600",
             f"set output '{spec.name}.gp.png'"]
    if spec.logx:
        lines.append("set logscale x")
    if spec.logy:
        lines.append("set logscale y")
    xcol = idx[spec.x] + 1
    plots = []
    for gval in groups:
        cond = []
        if spec.group is not None:
            cond.append(f"strcol({idx[spec.group] + 1}) eq '{gval}'")
        cond += [f"strcol({idx[c] + 1}) eq '{v}'" for c, v in spec.filters.items()]
        for ycol in spec.y:
            y = idx[ycol] + 1
            label = f"{ycol} {spec.group}={gval}" if spec.group else ycol
            expr = f"(({' && '.join(cond)}) ? ${y} : 1/0)" if cond else f"${y}"
            plots.append(f"'{spec.csv}' every ::1 using {xcol}:{expr} with linespoints title '{label}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def render_png(spec: SeriesSpec, directory, out_path) -> Path:
    """Draw the series with matplotlib's Agg backend."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, rows = read_columns(Path(directory) / spec.csv)
    groups, idx = _groups(spec, header, rows)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for gval, grows in groups.items():
        xs = [float(r[idx[spec.x]]) for r in grows]
        for ycol in spec.y:
            ys = [float(r[idx[ycol]]) for r in grows]
            if spec.logy:
                pts = [(a, b) for a, b in zip(xs, ys) if b > 0]
                xs_, ys_ = [p[0] for p in pts], [p[1] for p in pts]
            else:
                xs_, ys_ = xs, ys
            label = f"{ycol} ({spec.group}={gval})" if spec.group else ycol
            ax.plot(xs_, ys_, marker=".", ms=3, lw=1, label=label)
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel(spec.x)
    ax.set_title(spec.title or spec.name)
    ax.legend(fontsize="small")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return out_path
