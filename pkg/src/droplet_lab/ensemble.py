"""Disorder Monte Carlo orchestration: presets, aggregation, persistence.

Every experiment is a pure function of (preset, parameters, seed,
realization index); the harness farms realizations over processes, sorts by
index before aggregating, and writes a fixed-schema CSV plus a JSON manifest.

Results are bit-identical for a given seed no matter how many workers ran.
"""

from __future__ import annotations

import dataclasses
import json
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import dynamics as dy
from . import filters as fl
from . import spectral as sp
from .hamiltonian import ChainParams, DisorderSpec, build, one_magnon_anderson, sample_disorder
from .spincore import Observable, build_bases, local_kron, sigma_x, SIGMA_X

SCHEMA_VERSION = 1
CSV_HEADER = "experiment,abscissa,mean,stderr,median,n,t_star_mode"


@dataclass(frozen=True)
class TGridSpec:
    t_max_lin: float = 100.0
    n_lin: int = 64
    t_min_log: float = 1e-2
    t_max_log: float = 1e3
    n_log: int = 64

    def build(self) -> np.ndarray:
        return dy.default_t_grid(self.t_max_lin, self.n_lin, self.t_min_log,
                                 self.t_max_log, self.n_log)


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    delta: float
    lam: float
    L: int
    beta: float | None = None
    delta_param: float = 0.5
    alpha: float = 0.5
    realizations: int = 200
    seed: int = 20240811
    jobs: int = 1
    t_grid: TGridSpec = field(default_factory=TGridSpec)
    schedule: tuple[int, ...] = ()
    verbose_per_real: bool = False
    max_sites: int = 15

    def chain_params(self) -> ChainParams:
        return ChainParams(delta=self.delta, lam=self.lam, L=self.L, beta=self.beta,
                           disorder=DisorderSpec(kind="uniform01", seed=self.seed))

    def droplet(self) -> sp.EnergyWindow:
        return sp.droplet_window(self.delta, self.delta_param)


@dataclass
class SeriesResult:
    name: str
    abscissae: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    median: np.ndarray
    n: np.ndarray
    t_star_mode: np.ndarray
    per_real: np.ndarray | None = None


@dataclass
class EnsembleResult:
    config: ExperimentConfig
    series: dict[str, SeriesResult]
    manifest: dict


class EnsembleError(Exception):
    pass


# ---------------------------------------------------------------------------
# per-realization work, one function per preset


def _sigma_pair(lam_site: int, L: int) -> Observable:
    """Adjacent two-site spin-flip pair sigma^x_a sigma^x_{a+1}."""
    return local_kron({lam_site: SIGMA_X, lam_site + 1: SIGMA_X}, (lam_site, lam_site + 1), L)


def _full_spectral(cfg: ExperimentConfig, index: int) -> sp.SpectralData:
    params = cfg.chain_params()
    omega = sample_disorder(params.disorder, cfg.L, index)
    basis = build_bases(cfg.L, max_sites=cfg.max_sites)
    return sp.diagonalize(build(params, omega, basis), params=params)


def _realize_spectrum(cfg: ExperimentConfig, index: int) -> dict:
    params = cfg.chain_params()
    omega = sample_disorder(params.disorder, cfg.L, index)
    basis = build_bases(cfg.L, max_sites=cfg.max_sites)
    sd = sp.diagonalize(build(params, omega, basis), params=params, vectors=False)
    e = sd.sorted_energies
    droplet = cfg.droplet()
    return {
        "ground_energy": {0.0: (abs(float(e[0])), None)},
        "gap": {0.0: (float(e[1]), None)},
        "droplet_rank": {0.0: (float(droplet.contains(e).sum()), None)},
    }


def _realize_dl_decay(cfg: ExperimentConfig, index: int) -> dict:
    sd = _full_spectral(cfg, index)
    window = cfg.droplet()
    sched = cfg.schedule or (1, 2, 3, 4, 5)
    out = {}
    for j in sched:
        out[float(2 * j)] = (dg.dl_kernel(sd, -j, j, window), None)
    return {"dl_kernel": out}


def _realize_nonspread(cfg: ExperimentConfig, index: int) -> dict:
    sd = _full_spectral(cfg, index)
    window_i0 = sp.EnergyWindow(0.0, cfg.droplet().hi)
    x = sigma_x(0, cfg.L)
    t_grid = cfg.t_grid.build()
    sched = cfg.schedule or (1, 2, 3, 4)
    out = {}
    for ell in sched:
        point = dg.nonspread_sup(sd, x, ell, t_grid, window_i0)
        out[float(ell)] = (point.value, point.t_star)
    return {"nonspread": out}


def _realize_lr(cfg: ExperimentConfig, index: int) -> dict:
    sd = _full_spectral(cfg, index)
    window = cfg.droplet()
    t_grid = cfg.t_grid.build()
    sched = cfg.schedule or (1, 2, 3, 4)
    pair_series, with_series, without_series = {}, {}, {}
    for a in sched:
        x_pair = _sigma_pair(-a - 1, cfg.L)
        y_pair = _sigma_pair(a, cfg.L)
        point = dg.lr_norm(sd, x_pair, y_pair, window, t_grid)
        pair_series[point.abscissa] = (point.value, point.t_star)
        comp = dg.lr_counterterm_residual(sd, sigma_x(-a, cfg.L), sigma_x(a, cfg.L),
                                          window, t_grid)
        with_series[comp.with_counterterm.abscissa] = (
            comp.with_counterterm.value, comp.with_counterterm.t_star)
        without_series[comp.without_counterterm.abscissa] = (
            comp.without_counterterm.value, comp.without_counterterm.t_star)
    return {"lr": pair_series, "lr_ct_with": with_series, "lr_ct_without": without_series}


def _realize_cluster(cfg: ExperimentConfig, index: int) -> dict:
    sd = _full_spectral(cfg, index)
    theta0 = 1.0 - 1.0 / cfg.delta
    theta2 = min(2.0 * theta0, cfg.droplet().hi) - 0.025
    window_k = sp.EnergyWindow(theta0, theta2)
    t_grid = cfg.t_grid.build()
    sched = cfg.schedule or (1, 2, 3, 4)
    resid_w, resid_o, eigsum, ct_trace = {}, {}, {}, {}
    for a in sched:
        x = sigma_x(-a, cfg.L)
        y = sigma_x(a, cfg.L)
        res = dg.clustering_residual(sd, x, y, window_k, t_grid)
        resid_w[res.with_counterterm.abscissa] = (res.with_counterterm.value, None)
        resid_o[res.without_counterterm.abscissa] = (res.without_counterterm.value, None)
        p = dg.per_eigenstate_clustering(sd, x, y, window_k, t_grid)
        eigsum[p.abscissa] = (p.value, p.t_star)
        c = dg.counterterm_trace(sd, x, y, window_k, t_grid)
        ct_trace[c.abscissa] = (c.value, c.t_star)
    return {"cluster_with": resid_w, "cluster_without": resid_o,
            "cluster_eigsum": eigsum, "cluster_ct_trace": ct_trace}


def optimality_windows(delta: float) -> tuple[sp.EnergyWindow, sp.EnergyWindow]:
    """Droplet-interior window and the above-2*Theta_0 window inside the band."""
    t0 = 1.0 - 1.0 / delta
    droplet = sp.EnergyWindow(t0, 1.5 * t0)
    above = sp.EnergyWindow(2.0 * t0 + 0.05, min(1.0 + 1.0 / delta, 2.0 * t0 + 0.5))
    return droplet, above


def _realize_optimality(cfg: ExperimentConfig, index: int) -> dict:
    # witnesses reduce exactly to the one-magnon Anderson model, so the full
    # many-body build is skipped (sigma^x psi_0 lives in the one-magnon sector)
    params = cfg.chain_params()
    omega = sample_disorder(params.disorder, cfg.L, index)
    mat = one_magnon_anderson(params, omega)
    droplet, above = optimality_windows(cfg.delta)
    sched = cfg.schedule or (2, 3, 4, 5, 6, 7, 8)
    w_droplet, w_above = {}, {}
    for d in sched:
        i = -(d // 2)
        j = d + i
        wd = dg.deloc_witness_anderson(mat, cfg.delta, i, j, droplet, cesaro_t=0.0)
        wa = dg.deloc_witness_anderson(mat, cfg.delta, i, j, above, cesaro_t=0.0)
        w_droplet[float(d)] = (wd.product_norm, None)
        w_above[float(d)] = (wa.product_norm, None)
    return {"deloc_droplet": w_droplet, "deloc_above": w_above}


def _realize_fermi(cfg: ExperimentConfig, index: int) -> dict:
    sd = _full_spectral(cfg, index)
    params = sd.params
    x = sigma_x(0, cfg.L)
    theta = dg.bond_norm_bound(params)
    scanner = dg.FermiScanner(sd, x)
    report = scanner.scan(theta, 1.0)
    out = {"fermi_max_ratio": {0.0: (report.max_checked_ratio, None)},
           "fermi_violations": {0.0: (float(report.violation), None)}}
    # transition-norm profile across a fixed grid of Fermi-level pairs
    e = sd.sorted_energies
    lo_levels = np.quantile(e, [0.02, 0.10, 0.25, 0.40])
    profile = {}
    for frac_gap in (1.0, 2.0, 4.0, 8.0, 12.0):
        worst = 0.0
        for lo in lo_levels:
            hi = lo + frac_gap
            if hi < e[-1]:
                worst = max(worst, scanner.transition(float(lo), float(hi)))
        profile[float(frac_gap)] = (worst, None)
    return out | {"fermi_profile": profile}


def _hastings_filter(cfg: ExperimentConfig) -> fl.FilterSpec:
    t0 = 1.0 - 1.0 / cfg.delta
    return fl.FilterSpec(theta1=t0 + 0.1, theta2=t0 - 0.15, theta3=2.0 * t0 + 0.2,
                         alpha=cfg.alpha)


def _realize_hastings(cfg: ExperimentConfig, index: int) -> dict:
    sd = _full_spectral(cfg, index)
    f = fl.filter_f(_hastings_filter(cfg))
    r_grid = fl.hastings_r_grid(sd, f, cfg.alpha, tail_eps=1e-7)
    fhat = fl.fourier(f, r_grid)
    sched = cfg.schedule or (1, 2, 3, 4)
    resid, tail = {}, {}
    for d in sched:
        i = -((d + 1) // 2)
        j = d + i
        x, y = sigma_x(i, cfg.L), sigma_x(j, cfg.L)
        res = fl.hastings_residual(sd, x, y, f, fhat)
        resid[float(d)] = (res.residual, None)
        tail[float(d)] = (fl.commutator_tail(sd, x, y, 0.5), None)
    return {"hastings_resid": resid, "lr_tail": tail}


def _realize_dos(cfg: ExperimentConfig, index: int) -> dict:
    params = cfg.chain_params()
    omega = sample_disorder(params.disorder, cfg.L, index)
    evals = np.linalg.eigvalsh(one_magnon_anderson(params, omega))
    edges = dos_bin_edges(params, n_bins=64)
    counts, _ = np.histogram(evals, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    mass = counts / len(evals)
    return {"dos": {float(c): (float(m), None) for c, m in zip(centers, mass)}}


_REALIZERS = {
    "spectrum": _realize_spectrum,
    "dl-decay": _realize_dl_decay,
    "nonspread": _realize_nonspread,
    "lr": _realize_lr,
    "cluster": _realize_cluster,
    "optimality": _realize_optimality,
    "fermi": _realize_fermi,
    "hastings": _realize_hastings,
    "dos": _realize_dos,
}

# defaults chosen so each preset probes its diagnostic in a populated regime;
# the droplet-dynamics presets run at moderate disorder because stronger
# fields empty the droplet window at desk scale (see the output manifests)
PRESET_DEFAULTS = {
    "spectrum": dict(delta=2.0, lam=1.0, L=5, beta=0.25, realizations=1000),
    "dl-decay": dict(delta=4.0, lam=4.0, L=6, delta_param=0.5, realizations=200),
    "nonspread": dict(delta=4.0, lam=1.1, L=6, delta_param=0.03125, realizations=300),
    "lr": dict(delta=4.0, lam=1.5, L=6, delta_param=0.125, realizations=200),
    "cluster": dict(delta=4.0, lam=1.5, L=6, delta_param=0.125, realizations=200),
    "optimality": dict(delta=2.0, lam=3.0, L=6, realizations=2000),
    "fermi": dict(delta=2.0, lam=1.0, L=5, beta=0.25, realizations=100),
    "hastings": dict(delta=2.0, lam=1.0, L=3, realizations=24),
    "dos": dict(delta=2.0, lam=1.0, L=5, realizations=500),
}

FIT_PLANS = {
    "dl-decay": {"dl_kernel": ("mean", "exponential")},
    "optimality": {"deloc_droplet": ("mean", "exponential"),
                   "deloc_above": ("mean", "exponential")},
    "lr": {"lr": ("mean", "exponential")},
    "cluster": {"cluster_ct_trace": ("mean", "exponential")},
    "nonspread": {"nonspread": ("median", "exponential")},
}


def dos_bin_edges(params: ChainParams, n_bins: int = 64) -> np.ndarray:
    lo = params.theta0
    hi = max(1.0 + 1.0 / params.delta + params.lam,
             0.5 + params.beta + params.lam + 0.5 / params.delta) + 1e-9
    return np.linspace(lo - 1e-9, hi, n_bins + 1)


@dataclass
class DoSHistogram:
    edges: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        if abs(self.mass.sum() - 1.0) > 1e-12:
            raise ValueError("density-of-states mass must sum to 1")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def integrate_f_squared(self, f) -> float:
        return float(np.sum(np.asarray(f(self.centers)) ** 2 * self.mass))


def dos_estimate(params: ChainParams, realizations: int, bins: int = 64) -> DoSHistogram:
    """Disorder-averaged one-magnon spectral histogram, normalized per site."""
    if bins < 8:
        raise ValueError("need at least 8 bins")
    edges = dos_bin_edges(params, bins)
    counts = np.zeros(bins)
    for r in range(realizations):
        omega = sample_disorder(params.disorder, params.L, r)
        evals = np.linalg.eigvalsh(one_magnon_anderson(params, omega))
        c, _ = np.histogram(evals, bins=edges)
        counts += c
    return DoSHistogram(edges=edges, mass=counts / (realizations * params.n_sites))


# ---------------------------------------------------------------------------
# orchestration


def _limit_worker_threads():
    try:
        import threadpoolctl
        global _thread_limiter
        _thread_limiter = threadpoolctl.threadpool_limits(limits=1)
    except Exception:
        pass


def _run_one(payload) -> tuple[int, dict | None, float, str | None]:
    cfg_dict, index = payload
    cfg = _config_from_dict(cfg_dict)
    start = time.perf_counter()
    try:
        data = _REALIZERS[cfg.preset](cfg, index)
        return index, data, time.perf_counter() - start, None
    except Exception as err:  # noqa: BLE001 - failures are logged, not fatal
        return index, None, time.perf_counter() - start, f"{type(err).__name__}: {err}"


def _config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["t_grid"] = dataclasses.asdict(cfg.t_grid)
    return d


def _config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    d["t_grid"] = TGridSpec(**d["t_grid"])
    d["schedule"] = tuple(d.get("schedule") or ())
    return ExperimentConfig(**d)


def run_ensemble(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> EnsembleResult:
    """Run every realization of one experiment and aggregate.

    Deterministic for a given seed regardless of the worker count: the
    disorder stream is keyed by (seed, index) and aggregation happens after a
    sort by index.  Per-realization failures are logged in the manifest and
    excluded; a run with zero successes raises.
    """
    if cfg.preset not in _REALIZERS:
        raise EnsembleError(f"unknown preset {cfg.preset!r}")
    if cfg.realizations < 1:
        raise EnsembleError("need at least one realization")
    run_dir = None
    manifest = _initial_manifest(cfg)
    if out_dir is not None:
        run_dir = _make_run_dir(out_dir, cfg.preset)
        (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    payloads = [(_config_to_dict(cfg), r) for r in range(cfg.realizations)]
    start = time.perf_counter()
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_limit_worker_threads) as pool:
            raw = list(pool.map(_run_one, payloads, chunksize=max(1, cfg.realizations // (4 * cfg.jobs))))
    else:
        raw = [_run_one(p) for p in payloads]
    raw.sort(key=lambda item: item[0])
    wall = time.perf_counter() - start

    failures = [(idx, err) for idx, data, _, err in raw if err is not None]
    successes = [(idx, data, dt) for idx, data, dt, err in raw if err is None]
    if not successes:
        raise EnsembleError(f"all {cfg.realizations} realizations failed; first: {failures[0][1]}")

    series = _aggregate(successes, keep_per_real=cfg.verbose_per_real)
    manifest.update({
        "status": "complete",
        "wall_seconds": wall,
        "per_realization_seconds": [dt for _, _, dt in successes],
        "failures": [{"index": idx, "error": err} for idx, err in failures],
        "n_success": len(successes),
    })
    _attach_fits(cfg, series, manifest)
    result = EnsembleResult(config=cfg, series=series, manifest=manifest)
    if run_dir is not None:
        persist(result, run_dir)
    return result


def _initial_manifest(cfg: ExperimentConfig) -> dict:
    droplet = cfg.droplet()
    return {
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "status": "running",
        "config": _config_to_dict(cfg),
        "droplet_window": {"lo": droplet.lo, "hi": droplet.hi,
                           "lo_closed": droplet.lo_closed, "hi_closed": droplet.hi_closed},
        "t_grid": list(map(float, cfg.t_grid.build())),
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }


def _aggregate(successes, keep_per_real: bool) -> dict[str, SeriesResult]:
    names = sorted({name for _, data, _ in successes for name in data})
    out: dict[str, SeriesResult] = {}
    for name in names:
        abscissae = sorted({a for _, data, _ in successes if name in data for a in data[name]})
        table = np.full((len(successes), len(abscissae)), np.nan)
        stars: list[list[float | None]] = [[] for _ in abscissae]
        for row, (_, data, _) in enumerate(successes):
            per = data.get(name, {})
            for col, a in enumerate(abscissae):
                if a in per:
                    table[row, col] = per[a][0]
                    stars[col].append(per[a][1])
        n = np.sum(~np.isnan(table), axis=0)
        mean = np.nanmean(table, axis=0)
        median = np.nanmedian(table, axis=0)
        if table.shape[0] > 1:
            with np.errstate(invalid="ignore"):
                std = np.nanstd(table, axis=0, ddof=1)
        else:
            std = np.zeros(table.shape[1])  # single realization: flagged via n
        stderr = np.where(n > 1, std / np.sqrt(np.maximum(n, 1)), 0.0)
        modes = np.full(len(abscissae), np.nan)
        for col, vals in enumerate(stars):
            good = [v for v in vals if v is not None]
            if good:
                modes[col] = Counter(good).most_common(1)[0][0]
        out[name] = SeriesResult(name=name, abscissae=np.asarray(abscissae, dtype=float),
                                 mean=mean, stderr=stderr, median=median, n=n,
                                 t_star_mode=modes,
                                 per_real=table if keep_per_real else None)
    return out


def _attach_fits(cfg: ExperimentConfig, series: dict[str, SeriesResult], manifest: dict) -> None:
    plan = FIT_PLANS.get(cfg.preset, {})
    fits = {}
    for name, (aggregate, model) in plan.items():
        if name not in series:
            continue
        s = series[name]
        values = s.mean if aggregate == "mean" else s.median
        try:
            fit = dg.fit_decay(list(zip(s.abscissae, values)), model=model,
                               alpha=cfg.alpha if model == "stretched" else None)
        except (dg.FitRefusedError, ValueError) as err:
            fits[name] = {"error": str(err), "aggregate": aggregate}
            continue
        fits[name] = dataclasses.asdict(fit) | {"aggregate": aggregate}
    manifest["fits"] = fits


def _make_run_dir(out_root: str | Path, preset: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = Path(out_root) / preset
    run_dir = base / stamp
    k = 1
    while run_dir.exists():
        run_dir = base / f"{stamp}-{k}"
        k += 1
    run_dir.mkdir(parents=True)
    return run_dir


def format_float(x: float) -> str:
    """Shortest round-trip decimal form; parses back bit-identically."""
    return repr(float(x))


def persist(result: EnsembleResult, run_dir: str | Path, formats: tuple[str, ...] = ("csv", "json")) -> dict[str, Path]:
    """Write data.csv (fixed schema) and manifest.json under the run directory."""
    run_dir = Path(run_dir)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise EnsembleError(f"cannot create output directory {run_dir}: {err}") from err
    paths: dict[str, Path] = {}
    if "csv" in formats:
        lines = [CSV_HEADER]
        for name in sorted(result.series):
            s = result.series[name]
            for col in range(len(s.abscissae)):
                star = "" if np.isnan(s.t_star_mode[col]) else format_float(s.t_star_mode[col])
                lines.append(",".join([
                    name, format_float(s.abscissae[col]), format_float(s.mean[col]),
                    format_float(s.stderr[col]), format_float(s.median[col]),
                    str(int(s.n[col])), star,
                ]))
        path = run_dir / "data.csv"
        path.write_text("\n".join(lines) + "\n")
        paths["csv"] = path
    if "json" in formats:
        path = run_dir / "manifest.json"
        path.write_text(json.dumps(result.manifest, indent=2, sort_keys=True))
        paths["json"] = path
    if result.config.verbose_per_real:
        per_dir = run_dir / "per_real"
        per_dir.mkdir(exist_ok=True)
        for name, s in result.series.items():
            if s.per_real is None:
                continue
            rows = [",".join(["realization"] + [format_float(a) for a in s.abscissae])]
            for r in range(s.per_real.shape[0]):
                rows.append(",".join([str(r)] + [format_float(v) for v in s.per_real[r]]))
            (per_dir / f"{name}.csv").write_text("\n".join(rows) + "\n")
        paths["per_real"] = per_dir
    return paths


def load_csv(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    """Parse a data.csv back into arrays keyed by series name."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise EnsembleError(f"unrecognized CSV schema in {path}")
    out: dict[str, dict[str, list]] = {}
    for line in lines[1:]:
        name, a, mean, stderr, median, n, star = line.split(",")
        d = out.setdefault(name, {"abscissa": [], "mean": [], "stderr": [],
                                  "median": [], "n": [], "t_star_mode": []})
        d["abscissa"].append(float(a))
        d["mean"].append(float(mean))
        d["stderr"].append(float(stderr))
        d["median"].append(float(median))
        d["n"].append(int(n))
        d["t_star_mode"].append(float(star) if star else np.nan)
    return {name: {k: np.asarray(v) for k, v in d.items()} for name, d in out.items()}
