"""Harness determinism, aggregation, persistence, and the DoS estimator."""

import json

import numpy as np
import pytest

from droplet_lab import ensemble as en
from droplet_lab import hamiltonian as hm
from droplet_lab import filters as fl


def small_cfg(**kw):
    base = dict(preset="optimality", delta=2.0, lam=3.0, L=4, realizations=8,
                seed=42, schedule=(2, 3, 4))
    base.update(kw)
    return en.ExperimentConfig(**base)


def test_run_ensemble_basic():
    res = en.run_ensemble(small_cfg())
    s = res.series["deloc_droplet"]
    assert list(s.abscissae) == [2.0, 3.0, 4.0]
    assert np.all(s.n == 8)
    assert res.manifest["status"] == "complete"
    assert res.manifest["n_success"] == 8


def test_single_realization_stderr_zero():
    res = en.run_ensemble(small_cfg(realizations=1))
    s = res.series["deloc_droplet"]
    assert np.all(s.stderr == 0.0)
    assert np.all(s.n == 1)


def test_clean_chain_stderr_zero():
    res = en.run_ensemble(small_cfg(lam=0.0, realizations=4))
    for s in res.series.values():
        assert np.abs(s.stderr).max() < 1e-15


def test_determinism_across_jobs():
    a = en.run_ensemble(small_cfg(jobs=1))
    b = en.run_ensemble(small_cfg(jobs=2))
    for name in a.series:
        assert np.array_equal(a.series[name].mean, b.series[name].mean)
        assert np.array_equal(a.series[name].median, b.series[name].median)


def test_failures_logged_not_fatal(monkeypatch):
    calls = {}
    orig = en._realize_optimality

    def flaky(cfg, index):
        if index == 3:
            raise RuntimeError("synthetic failure")
        return orig(cfg, index)

    monkeypatch.setitem(en._REALIZERS, "optimality", flaky)
    res = en.run_ensemble(small_cfg())
    assert res.manifest["n_success"] == 7
    assert res.manifest["failures"][0]["index"] == 3
    assert np.all(res.series["deloc_droplet"].n == 7)


def test_all_failures_raise(monkeypatch):
    def broken(cfg, index):
        raise RuntimeError("nope")

    monkeypatch.setitem(en._REALIZERS, "optimality", broken)
    with pytest.raises(en.EnsembleError, match="all .* failed"):
        en.run_ensemble(small_cfg(realizations=2))


def test_unknown_preset_rejected():
    with pytest.raises(en.EnsembleError):
        en.run_ensemble(small_cfg(preset="never-heard-of-it"))


def test_persist_roundtrip(tmp_path):
    res = en.run_ensemble(small_cfg(verbose_per_real=True), out_dir=tmp_path)
    runs = list((tmp_path / "optimality").iterdir())
    assert len(runs) == 1
    run_dir = runs[0]
    data = en.load_csv(run_dir / "data.csv")
    s = res.series["deloc_droplet"]
    assert np.array_equal(data["deloc_droplet"]["mean"], s.mean)
    assert np.array_equal(data["deloc_droplet"]["stderr"], s.stderr)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["schema_version"] == en.SCHEMA_VERSION
    assert manifest["droplet_window"]["lo"] == 0.5
    # per-realization dump reproduces the aggregate exactly
    per = (run_dir / "per_real" / "deloc_droplet.csv").read_text().strip().splitlines()
    table = np.array([[float(v) for v in line.split(",")[1:]] for line in per[1:]])
    assert np.abs(table.mean(axis=0) - s.mean).max() < 1e-12
    std = table.std(axis=0, ddof=1) / np.sqrt(table.shape[0])
    assert np.abs(std - s.stderr).max() < 1e-12


def test_empty_series_header_only(tmp_path):
    res = en.run_ensemble(small_cfg(realizations=1))
    res.series.clear()
    paths = en.persist(res, tmp_path / "empty")
    text = paths["csv"].read_text()
    assert text == en.CSV_HEADER + "\n"


def test_csv_float_roundtrip(tmp_path):
    res = en.run_ensemble(small_cfg(), out_dir=tmp_path)
    run_dir = next((tmp_path / "optimality").iterdir())
    data = en.load_csv(run_dir / "data.csv")
    for name, s in res.series.items():
        assert np.array_equal(data[name]["mean"], s.mean)
        assert np.array_equal(data[name]["median"], s.median)


def test_manifest_written_before_compute(tmp_path, monkeypatch):
    def broken(cfg, index):
        raise RuntimeError("nope")

    monkeypatch.setitem(en._REALIZERS, "optimality", broken)
    with pytest.raises(en.EnsembleError):
        en.run_ensemble(small_cfg(realizations=2), out_dir=tmp_path)
    run_dir = next((tmp_path / "optimality").iterdir())
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["status"] == "running"  # crash forensics snapshot


def test_load_csv_schema_guard(tmp_path):
    bad = tmp_path / "data.csv"
    bad.write_text("something,else\n1,2\n")
    with pytest.raises(en.EnsembleError):
        en.load_csv(bad)


# ---------------------------------------------------------------------------
# density of states


def test_dos_total_mass_and_support():
    p = hm.ChainParams(delta=2.0, lam=0.0, L=10, beta=0.25,
                       disorder=hm.DisorderSpec(seed=1))
    hist = en.dos_estimate(p, realizations=3, bins=32)
    assert abs(hist.mass.sum() - 1.0) < 1e-12
    inside = (hist.centers >= 0.5 - hist.edges[1] + hist.edges[0]) & (hist.centers <= 1.5)
    assert hist.mass[~inside].sum() < 1e-12


def test_dos_filter_overlap_positive():
    p = hm.ChainParams(delta=2.0, lam=1.0, L=6, disorder=hm.DisorderSpec(seed=2))
    hist = en.dos_estimate(p, realizations=40, bins=64)
    f = fl.filter_f(fl.FilterSpec(theta1=0.8, theta2=0.55, theta3=1.6))
    assert hist.integrate_f_squared(f) > 0.0


def test_dos_bins_guard():
    p = hm.ChainParams(delta=2.0, lam=1.0, L=4)
    with pytest.raises(ValueError):
        en.dos_estimate(p, realizations=2, bins=4)


@pytest.mark.slow
def test_hastings_preset_trend():
    # ensemble median of the Hastings residual shrinks from dist 1 to dist 3
    cfg = en.ExperimentConfig(preset="hastings", delta=2.0, lam=1.0, L=3,
                              realizations=8, seed=5, jobs=2, schedule=(1, 3))
    res = en.run_ensemble(cfg)
    s = res.series["hastings_resid"]
    assert s.median[0] > s.median[-1]
    # Lieb-Robinson sanity input: commutator tails fall with distance too
    tails = res.series["lr_tail"]
    assert tails.median[0] > tails.median[-1]
