"""Render decay figures from a run directory's data.csv and manifest.json.

This package never imports the simulation code: the CSV/JSON files are the
whole interface.  Output is deterministic: fixed styles, a pinned SVG hash
salt, and no timestamps in the file body, so identical inputs give
byte-identical images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SUPPORTED_SCHEMA = 1
CSV_HEADER = "experiment,abscissa,mean,stderr,median,n,t_star_mode"

matplotlib.rcParams.update({
    "svg.hashsalt": "droplet-plots",
    "svg.fonttype": "none",   # keep annotations as text nodes, not paths
    "font.family": "DejaVu Sans",
    "figure.dpi": 100,
    "savefig.dpi": 100,
})


class SchemaError(Exception):
    """The run directory does not match the supported data schema."""


@dataclass
class PlotJob:
    input_dir: Path
    output_path: Path
    scale: str = "semilog"   # semilog | loglog
    image_format: str = "svg"

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.output_path = Path(self.output_path)
        if self.scale not in ("semilog", "loglog"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.image_format not in ("svg", "png"):
            raise ValueError(f"unknown format {self.image_format!r}")


def load_run(input_dir: Path) -> tuple[dict, dict]:
    manifest_path = input_dir / "manifest.json"
    csv_path = input_dir / "data.csv"
    if not manifest_path.exists() or not csv_path.exists():
        raise SchemaError(f"{input_dir} lacks data.csv/manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema_version") != SUPPORTED_SCHEMA:
        raise SchemaError(
            f"schema_version {manifest.get('schema_version')!r} unsupported "
            f"(this renderer reads version {SUPPORTED_SCHEMA})")
    lines = csv_path.read_text().strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise SchemaError(f"unexpected CSV header in {csv_path}")
    series: dict[str, dict[str, list[float]]] = {}
    for line in lines[1:]:
        name, a, mean, stderr, median, n, _star = line.split(",")
        d = series.setdefault(name, {"abscissa": [], "mean": [], "stderr": [], "median": []})
        d["abscissa"].append(float(a))
        d["mean"].append(float(mean))
        d["stderr"].append(float(stderr))
        d["median"].append(float(median))
    data = {name: {k: np.asarray(v) for k, v in d.items()} for name, d in series.items()}
    return manifest, data


def _fit_annotation(fit: dict) -> str:
    return f"m={fit['rate']:.10g}, R2={fit['r_squared']:.6g}"


def _draw_series(ax, name: str, d: dict, fit: dict | None, scale: str):
    ax.errorbar(d["abscissa"], d["mean"], yerr=d["stderr"], marker="o", ms=4,
                lw=1.0, capsize=2, label=name)
    if fit and "rate" in fit:
        xs = np.linspace(d["abscissa"].min(), d["abscissa"].max(), 64)
        ys = fit["prefactor"] * np.exp(-fit["rate"] * xs)
        ax.plot(xs, ys, ls="--", lw=1.0, label=f"fit {_fit_annotation(fit)}")
    ax.set_yscale("log")
    if scale == "loglog":
        ax.set_xscale("log")
    ax.set_xlabel("distance / scale")
    ax.set_ylabel("disorder average")
    ax.legend(fontsize=7, loc="best")


def _window_note(manifest: dict) -> str:
    w = manifest.get("droplet_window")
    if not w:
        return ""
    lo_b = "[" if w.get("lo_closed", True) else "("
    hi_b = "]" if w.get("hi_closed", True) else ")"
    return f"droplet window {lo_b}{w['lo']:.6g}, {w['hi']:.6g}{hi_b}"


def render(job: PlotJob) -> Path:
    """Produce one figure for the experiment held in a run directory.

    Figures fully assemble before anything touches disk, so a failed render
    leaves no partial file behind.
    """
    manifest, data = load_run(job.input_dir)
    preset = manifest.get("config", {}).get("preset", "experiment")
    fits = manifest.get("fits", {})

    if not data:
        fig, ax = plt.subplots(figsize=(5, 3.4))
        ax.text(0.5, 0.5, "no data", ha="center", va="center", fontsize=14)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_title(preset)
    elif preset == "optimality" and {"deloc_droplet", "deloc_above"} <= set(data):
        fig, axes = plt.subplots(1, 2, figsize=(8.6, 3.6))
        _draw_series(axes[0], "deloc_droplet", data["deloc_droplet"],
                     fits.get("deloc_droplet"), job.scale)
        axes[0].set_title("witness inside droplet window")
        _draw_series(axes[1], "deloc_above", data["deloc_above"],
                     fits.get("deloc_above"), job.scale)
        axes[1].set_title("witness above twice the gap edge")
        fig.suptitle(f"optimality contrast ({_window_note(manifest)})", fontsize=9)
    else:
        fig, ax = plt.subplots(figsize=(5.4, 3.8))
        for name in sorted(data):
            _draw_series(ax, name, data[name], fits.get(name), job.scale)
        ax.set_title(f"{preset} ({_window_note(manifest)})", fontsize=9)
    fig.tight_layout()
    job.output_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(job.output_path, format=job.image_format,
                metadata=(None if job.image_format == "png" else {"Date": None}))
    plt.close(fig)
    return job.output_path


def render_tree(input_root: Path, output_root: Path, image_format: str = "svg",
                scale: str = "semilog") -> list[Path]:
    """Render every run directory found under the input root."""
    input_root = Path(input_root)
    runs = sorted(p.parent for p in input_root.glob("**/data.csv"))
    if (input_root / "data.csv").exists():
        runs = [input_root]
    out = []
    for run in runs:
        rel = run.relative_to(input_root)
        name = "_".join(rel.parts) or input_root.name
        job = PlotJob(input_dir=run, output_path=Path(output_root) / f"{name}.{image_format}",
                      image_format=image_format, scale=scale)
        out.append(render(job))
    return out
