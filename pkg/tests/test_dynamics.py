"""Heisenberg evolution, truncated dynamics, correlators, and counterterms."""

import numpy as np
import pytest
import scipy.linalg

from droplet_lab import dynamics as dy
from droplet_lab import hamiltonian as hm
from droplet_lab import spectral as sp
from droplet_lab import spincore as sc


@pytest.fixture(scope="module")
def setup():
    p = hm.ChainParams(delta=2.0, lam=0.4, L=3)
    omega = hm.sample_disorder(p.disorder, 3, 1)
    H = hm.build(p, omega)
    sd = sp.diagonalize(H, params=p)
    return p, H, sd


def block_diff(a, b):
    keys = set(a.blocks) | set(b.blocks)
    worst = 0.0
    for k in keys:
        x = a.blocks.get(k)
        y = b.blocks.get(k)
        if x is None:
            x = np.zeros_like(y)
        if y is None:
            y = np.zeros_like(x)
        worst = max(worst, np.abs(x - y).max())
    return worst


def test_heisenberg_t0_and_group_law(setup):
    _, H, sd = setup
    x = sc.sigma_x(0, 3)
    assert block_diff(dy.heisenberg(sd, x, 0.0), sc.BlockOperator(sd.basis, dict(x.op_on(sd.basis).blocks))) < 1e-12
    a = dy.heisenberg(sd, x, 1.3)
    b = dy.heisenberg(sd, x, 2.4)
    # group law via dense comparison at t = 3.7
    dense_a = a.to_dense_config()
    E, V = np.linalg.eigh(H.to_dense_config())
    u = (V * np.exp(1j * 2.4 * E)) @ V.conj().T
    again = u @ dense_a @ u.conj().T
    c = dy.heisenberg(sd, x, 3.7).to_dense_config()
    assert np.abs(again - c).max() < 1e-10


def test_heisenberg_isometry(setup):
    _, _, sd = setup
    x = sc.sigma_x(0, 3)
    for t in (1.0, 10.0, 100.0):
        xt = dy.heisenberg(sd, x, t)
        assert abs(sc.norms(xt, "operator") - 1.0) < 1e-10
        assert abs(sc.norms(xt, "trace") - sc.norms(x, "trace")) < 1e-8
        assert abs(sc.norms(xt, "frobenius") - sc.norms(x, "frobenius")) < 1e-9


def test_function_of_h_invariant(setup):
    _, H, sd = setup
    g = sp.matrix_function(sd, lambda e: np.exp(-e))
    # evolve g(H) via dense conjugation: must be unchanged
    E, V = np.linalg.eigh(H.to_dense_config())
    u = (V * np.exp(1j * 5.1 * E)) @ V.conj().T
    gd = g.to_dense_config()
    assert np.abs(u @ gd @ u.conj().T - gd).max() < 1e-11


def test_energy_conservation(setup):
    _, _, sd = setup
    x = sc.sigma_x(1, 3)
    xt = dy.heisenberg(sd, x, 2.2)
    w = sp.EnergyWindow(-np.inf, np.inf)
    states = sd.select(w)
    vecs = states.vectors_config()
    before = np.real(np.einsum("ik,ik->k", vecs.conj(), x.apply_config(vecs)))
    after = np.real(np.einsum("ik,ik->k", vecs.conj(), xt.apply_config(vecs.astype(complex))))
    assert np.abs(before - after).max() < 1e-10


def test_truncated_evolution_identities(setup):
    _, H, sd = setup
    x = sc.sigma_x(0, 3)
    full = sp.EnergyWindow(-np.inf, np.inf)
    assert block_diff(dy.heisenberg_truncated(sd, x, 2.9, full), dy.heisenberg(sd, x, 2.9)) < 1e-11

    # ground-cluster truncation leaves X alone: H_B psi_0 = 0
    b0 = sp.EnergyWindow(-1e-9, 1e-9)
    assert block_diff(dy.heisenberg_truncated(sd, x, 4.2, b0), dy.heisenberg(sd, x, 0.0)) < 1e-11

    # (tau^B_t(X))_B = tau_t(X_B) against a dense expm oracle
    w = sp.droplet_window(2.0, 0.0)
    t = 3.7
    E, V = np.linalg.eigh(H.to_dense_config())
    sel = w.contains(E).astype(float)
    hb = (V * (E * sel)) @ V.conj().T
    u = scipy.linalg.expm(1j * t * hb)
    xd = x.op_on(sd.basis).to_dense_config()
    pb = (V * sel) @ V.conj().T
    lhs = pb @ u @ xd @ u.conj().T @ pb
    rhs = dy.heisenberg_truncated(sd, x, t, w).to_dense_config()
    assert np.abs(pb @ rhs @ pb - lhs).max() < 1e-10


def test_correlator_trivial_cases(setup):
    _, _, sd = setup
    w = sp.droplet_window(2.0, 0.0)
    x = sc.sigma_x(0, 3)
    one = sc.identity_observable(3)
    assert dy.correlator(sd, x, one, w).norm("trace") < 1e-13
    r = dy.correlator(sd, one, x, w)
    # R_B(1, Y) = P_B (1) Pbar_B Y P_B = 0 as well
    assert r.norm("trace") < 1e-13


def test_correlator_diagonal_identity(setup):
    # tr R_E(X, Y) = <XY> - <X><Y> for a simple eigenstate
    _, _, sd = setup
    x = sc.sigma_x(-1, 3)
    y = sc.sigma_x(1, 3)
    pos = 7
    e = sd.sorted_energies[pos]
    w = sp.EnergyWindow(e - 1e-12, e + 1e-12)
    states = sd.select(w)
    assert states.dim == 1
    r = dy.correlator(sd, x, y, w)
    vec = states.vectors_config()[:, 0]
    xy = np.vdot(vec, x.apply_config(y.apply_config(vec)))
    ex = np.vdot(vec, x.apply_config(vec))
    ey = np.vdot(vec, y.apply_config(vec))
    assert abs(np.trace(r.matrix) - (xy - ex * ey)) < 1e-12


def test_counterterm_rank_one_properties(setup):
    _, _, sd = setup
    w = sp.droplet_window(2.0, 0.0)
    x = sc.sigma_x(-2, 3)
    y = sc.sigma_x(2, 3)
    terms = [dy.counterterm(sd, x, y, t, w) for t in np.linspace(0, 50, 32)]
    norms = np.array([t.trace_norm() for t in terms])
    assert np.ptp(norms) < 1e-10
    states = sd.select(w)
    want = (np.linalg.norm(dy.vacuum_overlaps(sd, x, states))
            * np.linalg.norm(dy.vacuum_overlaps(sd, y.adjoint(), states)))
    assert abs(norms[0] - want) < 1e-12
    # matrix embedding agrees with a dense construction at t = 0
    dense = np.outer(dy.vacuum_overlaps(sd, x, states),
                     dy.vacuum_overlaps(sd, y.adjoint(), states).conj())
    assert np.abs(terms[0].to_matrix() - dense).max() < 1e-14


def test_counterterm_orthogonal_vacuum_image(setup):
    _, _, sd = setup
    w = sp.droplet_window(2.0, 0.5)
    # N_i kills the vacuum, so the right factor vanishes identically
    y = sc.number_op(0, 3)
    term = dy.counterterm(sd, sc.sigma_x(0, 3), y.adjoint(), 1.0, w)
    assert term.trace_norm() < 1e-14


def test_counterterm_one_magnon_identity(setup):
    # ||(tau_t(X) P_0 Y)_W||_1 = ||P_W delta_i|| ||P_W delta_j|| for sigma^x pairs
    p, _, sd = setup
    w = sp.droplet_window(2.0, 0.5)
    i, j = -1, 2
    term = dy.counterterm(sd, sc.sigma_x(i, 3), sc.sigma_x(j, 3), 2.3, w)
    e1 = sd.energies[1]
    v1 = sd.vectors[1]
    sel = w.contains(e1)
    li = np.linalg.norm(v1[i + 3, sel])
    lj = np.linalg.norm(v1[j + 3, sel])
    assert abs(term.trace_norm() - li * lj) < 1e-12


def test_double_bracket_against_dense(setup):
    _, H, sd = setup
    k = sp.EnergyWindow(0.5, 0.74)
    x = sc.sigma_x(-1, 3)
    y = sc.sigma_x(1, 3)
    t = 2.6
    db = dy.double_bracket(sd, x, y, t, k)
    E, V = np.linalg.eigh(H.to_dense_config())
    sel = k.contains(E).astype(float)
    u = scipy.linalg.expm(1j * t * (V * (E * sel)) @ V.conj().T)
    xd = x.op_on(sd.basis).to_dense_config()
    yd = y.op_on(sd.basis).to_dense_config()
    a = u @ xd @ u.conj().T
    yt = u @ yd @ u.conj().T
    p0 = np.zeros_like(xd)
    p0[0, 0] = 1.0
    m = (a @ yd - yd @ a) - (a @ p0 @ yd + yt @ p0 @ xd) + (yd @ p0 @ a + xd @ p0 @ yt)
    states = sd.select(k)
    vecs = states.vectors_config()
    oracle = vecs.conj().T @ m @ vecs
    assert np.abs(db.matrix - oracle).max() < 1e-12


def test_double_bracket_trivial_zeros(setup):
    _, _, sd = setup
    k = sp.EnergyWindow(0.5, 0.74)
    x = sc.sigma_x(0, 3)
    assert dy.double_bracket(sd, x, x, 0.0, k).norm("trace") < 1e-13
    one = sc.identity_observable(3)
    assert dy.double_bracket(sd, x, one, 4.4, k).norm("trace") < 1e-13


def test_default_t_grid():
    g = dy.default_t_grid()
    assert g[0] == 0.0
    assert np.all(np.diff(g) > 0)
    assert g[-1] == 1e3


def test_vacuum_sandwich_vanishes_without_pp_block(setup):
    # P_0 X P_0 = 0 whenever the (+,+) block vanishes, e.g. X = sigma^x
    _, _, sd = setup
    for site in (-2, 0, 1):
        x = sc.sigma_x(site, 3)
        vac = sd.ground_vector_config()
        assert abs(np.vdot(vac, x.apply_config(vac))) == 0.0
        assert sc.pm_decompose(x).zeta == 0.0
