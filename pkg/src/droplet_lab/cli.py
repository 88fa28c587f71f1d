"""Command-line front end: presets, TOML configs, overrides, exit discipline.

Precedence is flag > config file > preset default.  Exit codes: 0 success,
2 configuration error (nothing computed), 3 runtime failure (partial outputs
left in place).  Every run writes its manifest before heavy computation so
crashed runs can be diagnosed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .ensemble import (
    PRESET_DEFAULTS,
    EnsembleError,
    ExperimentConfig,
    run_ensemble,
)

SUBCOMMANDS = ("spectrum", "dl-decay", "nonspread", "lr", "cluster",
               "optimality", "fermi", "hastings", "dos")

_OVERRIDE_FIELDS = ("L", "delta", "lam", "beta", "delta_param", "alpha",
                    "realizations", "seed", "jobs")


class ConfigError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="droplet-lab",
        description="Disordered XXZ chain localization experiments",
    )
    sub = parser.add_subparsers(dest="command")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment preset")
        p.add_argument("--config", type=str, default=None, help="TOML parameter file")
        p.add_argument("--out", type=str, default=None, help="output directory root")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--realizations", type=int, default=None)
        p.add_argument("--L", type=int, default=None)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--delta-param", dest="delta_param", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--verbose-per-real", action="store_true", default=None)
        p.add_argument("--dry-run", action="store_true")
    return parser


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"invalid TOML in {p}: {err}") from err
    return data


_TYPES = {"L": int, "delta": float, "lam": float, "beta": float, "delta_param": float,
          "alpha": float, "realizations": int, "seed": int, "jobs": int,
          "verbose_per_real": bool}


def _typed(key: str, value):
    want = _TYPES.get(key)
    if want is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if want is int and float(value) != int(value):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return want(value)


def resolve_config(command: str, args: argparse.Namespace) -> ExperimentConfig:
    """Merge preset defaults, the TOML file, and CLI flags (highest wins)."""
    merged: dict = {"preset": command}
    merged.update(PRESET_DEFAULTS[command])
    if args.config:
        file_cfg = _load_config_file(args.config)
        section = file_cfg.get(command, {})
        flat = {k: v for k, v in file_cfg.items() if not isinstance(v, dict)}
        for key, value in (flat | section).items():
            if key == "lambda":
                key = "lam"
            merged[key] = _typed(key, value)
    for key in _OVERRIDE_FIELDS + ("verbose_per_real",):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = _typed(key, val)
    try:
        return ExperimentConfig(
            preset=command,
            delta=float(merged["delta"]),
            lam=float(merged["lam"]),
            L=int(merged["L"]),
            beta=merged.get("beta"),
            delta_param=float(merged.get("delta_param", 0.5)),
            alpha=float(merged.get("alpha", 0.5)),
            realizations=int(merged["realizations"]),
            seed=int(merged.get("seed", 20240811)),
            jobs=int(merged.get("jobs", 1)),
            verbose_per_real=bool(merged.get("verbose_per_real", False)),
        )
    except (ValueError, KeyError) as err:
        raise ConfigError(str(err)) from err


def _resolved_view(cfg: ExperimentConfig) -> dict:
    droplet = cfg.droplet()
    view = dataclasses.asdict(cfg)
    view["t_grid"] = dataclasses.asdict(cfg.t_grid)
    view["droplet_window"] = {"lo": droplet.lo, "hi": droplet.hi,
                              "lo_closed": droplet.lo_closed, "hi_closed": droplet.hi_closed}
    view["resolved_beta"] = cfg.chain_params().beta
    return view


def parse_and_run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = resolve_config(args.command, args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    if args.dry_run:
        print(json.dumps(_resolved_view(cfg), indent=2, sort_keys=True))
        return 0
    out_root = args.out or os.environ.get("DROPLET_LAB_OUT") or "out"
    try:
        result = run_ensemble(cfg, out_dir=out_root)
    except EnsembleError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 3
    n_fail = len(result.manifest.get("failures", []))
    print(f"{cfg.preset}: {result.manifest['n_success']} realizations "
          f"({n_fail} failed), wall {result.manifest['wall_seconds']:.1f}s")
    return 0


def main() -> None:
    sys.exit(parse_and_run())


if __name__ == "__main__":
    main()
