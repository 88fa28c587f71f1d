"""Diagonalization, windows, functional calculus, and windowed compression."""

import numpy as np
import pytest

from droplet_lab import hamiltonian as hm
from droplet_lab import spectral as sp
from droplet_lab import spincore as sc


@pytest.fixture(scope="module")
def sd():
    p = hm.ChainParams(delta=2.0, lam=1.0, L=3)
    omega = hm.sample_disorder(p.disorder, 3, 2)
    return sp.diagonalize(hm.build(p, omega), params=p)


def test_residuals_and_orthonormality(sd):
    H = sd.H
    scale = max(1.0, sd.norm_h)
    for s, sec in enumerate(sd.basis):
        blk = H.block(s, s)
        v, e = sd.vectors[s], sd.energies[s]
        assert np.abs(blk @ v - v * e).max() < 1e-10 * scale
        assert np.abs(v.T @ v - np.eye(sec.dim)).max() < 1e-12


def test_global_index_sorted_with_ground_first(sd):
    assert np.all(np.diff(sd.sorted_energies) >= 0)
    assert sd.sorted_energies[0] == 0.0
    assert sd.sorted_sector[0] == 0


def test_simple_spectrum_no_close_repeats(sd):
    gaps = np.diff(sd.sorted_energies)
    assert np.min(gaps) > 1e-10  # a.s. simple for random disorder


def test_one_magnon_cross_oracle(sd):
    A = hm.one_magnon_anderson(sd.params, hm.sample_disorder(sd.params.disorder, 3, 2))
    assert np.abs(np.sort(np.linalg.eigvalsh(A)) - np.sort(sd.energies[1])).max() < 1e-12


def test_spectral_theorem_roundtrip(sd):
    rec = sp.matrix_function(sd, lambda e: e)
    err = 0.0
    for s, sec in enumerate(sd.basis):
        blk = rec.block(s, s)
        if blk is None:
            blk = np.zeros((sec.dim, sec.dim))  # absent block means zero
        err = max(err, np.abs(blk - sd.H.block(s, s)).max())
    assert err < 1e-10 * max(1.0, sd.norm_h)


def test_matrix_function_identity_and_projector(sd):
    one = sp.matrix_function(sd, lambda e: np.ones_like(e))
    for s, sec in enumerate(sd.basis):
        assert np.abs(one.block(s, s) - np.eye(sec.dim)).max() < 1e-12
    w = sp.EnergyWindow(-np.inf, np.inf)
    proj = sp.window_projector(sd, w)
    for s, sec in enumerate(sd.basis):
        assert np.abs(proj.block(s, s) - np.eye(sec.dim)).max() < 1e-12


def test_window_projector_vacuum(sd):
    w = sp.EnergyWindow(-1e-9, 1e-9)
    p = sp.window_projector(sd, w)
    blk = p.block(0, 0)
    assert blk.shape == (1, 1) and np.isclose(blk[0, 0].real, 1.0)
    total = sum(np.trace(p.block(s, s)).real for s in range(len(sd.basis)) if p.block(s, s) is not None)
    assert np.isclose(total, 1.0)


def test_window_projector_idempotent(sd):
    w = sp.droplet_window(2.0, 0.5)
    p = sp.window_projector(sd, w)
    sq = p @ p
    for key, blk in p.blocks.items():
        assert np.abs(sq.blocks[key] - blk).max() < 1e-12


def test_gap_structure(sd):
    # with beta at the floor, nothing lives in (0, 1 - 1/Delta)
    e = sd.sorted_energies
    inside = (e > 1e-12) & (e < 0.5 - 1e-12)
    assert not inside.any()


def test_window_split_at_gap(sd):
    i0 = sp.EnergyWindow(0.0, 0.75)
    i = sp.EnergyWindow(0.5, 0.75)
    assert sd.select(i0).dim == sd.select(i).dim + 1


def test_droplet_window_endpoints():
    w = sp.droplet_window(2.0, 0.0)
    assert (w.lo, w.hi, w.hi_closed) == (0.5, 1.0, False)
    w = sp.droplet_window(2.0, 0.5)
    assert (w.lo, w.hi, w.hi_closed) == (0.5, 0.75, True)
    w = sp.droplet_window(1e12, 0.25)  # Delta -> infinity limit
    assert np.isclose(w.lo, 1.0, atol=1e-9) and np.isclose(w.hi, 1.75, atol=1e-9)
    with pytest.raises(ValueError):
        sp.droplet_window(2.0, 1.0)
    with pytest.raises(ValueError):
        sp.droplet_window(0.9, 0.1)


def test_window_membership_endpoints():
    w = sp.EnergyWindow(0.5, 1.0, lo_closed=True, hi_closed=False)
    assert w.contains(np.array([0.5]))[0]
    assert not w.contains(np.array([1.0]))[0]
    assert w.contains(np.array([1.0 - 1e-6]))[0]
    # relative tolerance honors values within 1e-12 of a closed endpoint
    assert w.contains(np.array([0.5 - 1e-13]))[0]


def test_window_rank_counts_eigenvalues(sd):
    w = sp.droplet_window(2.0, 0.5)
    rank = sd.select(w).dim
    count = int(np.sum(w.contains(sd.sorted_energies)))
    assert rank == count


def test_window_compress_identity(sd):
    w = sp.droplet_window(2.0, 0.0)
    one = sc.identity_observable(3)
    wop = sp.window_compress(sd, w, one)
    assert np.abs(wop.matrix - np.eye(wop.matrix.shape[0])).max() < 1e-12


def test_window_compress_idempotent(sd):
    w = sp.droplet_window(2.0, 0.0)
    x = sc.sigma_x(0, 3)
    first = sp.window_compress(sd, w, x)
    # compressing the compression is the same matrix: (X_I)_I = X_I
    states = sd.select(w)
    vecs = states.vectors_config()
    again = vecs.conj().T @ (vecs @ first.matrix @ vecs.conj().T) @ vecs
    assert np.abs(again - first.matrix).max() < 1e-12


def test_window_compress_norm_matches_dense(sd):
    rng = np.random.default_rng(0)
    local = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    x = sc.embed_local(local, (-1, 0), 3)
    w = sp.EnergyWindow(0.4, 1.2)
    wop = sp.window_compress(sd, w, x)
    # dense full-space oracle
    proj = sp.window_projector(sd, w)
    xd = x.op_on(sd.basis).to_dense_config()
    pd = proj.to_dense_config()
    dense = pd @ xd @ pd
    sv = np.linalg.svd(dense, compute_uv=False)
    assert abs(wop.norm("trace") - sv.sum()) < 1e-10
    assert abs(wop.norm("operator") - sv[0]) < 1e-10


def test_empty_window_is_zero(sd):
    w = sp.EnergyWindow(0.05, 0.45)  # inside the gap
    assert sd.select(w).dim == 0
    assert sp.window_compress(sd, w, sc.sigma_x(0, 3)).norm("trace") == 0.0


def test_eigensolver_error_tags_sector():
    basis = sc.build_bases(1)
    H = sc.BlockOperator(basis)
    bad = np.full((3, 3), np.nan)
    H.set_block(1, 1, bad)
    with pytest.raises(sp.EigensolverError, match="sector 1"):
        sp.diagonalize(H)


def test_cluster_merging():
    basis = sc.build_bases(1)
    H = sc.BlockOperator(basis)
    H.set_block(0, 0, np.array([[0.0]]))
    H.set_block(1, 1, np.diag([1.0, 1.0 + 1e-13, 2.0]))
    H.set_block(2, 2, np.diag([3.0, 4.0, 5.0]))
    H.set_block(3, 3, np.array([[6.0]]))
    sd = sp.diagonalize(H)
    sizes = [c.stop - c.start for c in sd.clusters()]
    assert sizes == [1, 2, 1, 1, 1, 1, 1]


def test_spectral_cache_roundtrip(tmp_path):
    p = hm.ChainParams(delta=2.0, lam=0.5, L=2)
    omega = hm.sample_disorder(p.disorder, 2, 0)
    sd = sp.diagonalize(hm.build(p, omega), params=p)
    key = sp.spectral_key(p, 0, 0)
    sp.save_spectral(sd, tmp_path, key)
    loaded = sp.load_spectral(tmp_path, key, sd.basis)
    assert loaded is not None
    assert np.array_equal(loaded.sorted_energies, sd.sorted_energies)
    assert sp.load_spectral(tmp_path, "deadbeef", sd.basis) is None
