"""Heisenberg evolution, truncated evolution, correlators, and counterterms.

All evolutions are eigenbasis phase multiplications, exact up to the
diagonalization error; sup over real times is replaced by a grid maximum,
and the grid travels with the results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spincore import BlockOperator, Observable
from .spectral import EnergyWindow, SpectralData, WindowedOperator, WindowStates


def default_t_grid(t_max_lin: float = 100.0, n_lin: int = 64,
                   t_min_log: float = 1e-2, t_max_log: float = 1e3, n_log: int = 64) -> np.ndarray:
    """{0} plus linear and log-spaced times, deduplicated and sorted."""
    lin = np.linspace(0.0, t_max_lin, n_lin + 1)
    log = np.geomspace(t_min_log, t_max_log, n_log)
    return np.unique(np.concatenate([lin, log]))


@dataclass
class RankOneTerm:
    """T(psi1, psi2) = <psi2, .> psi1 restricted to a window eigenbasis.

    Counterterms are kept in this form instead of dense matrices: the trace
    norm is exactly the product of the two vector norms, at O(dim) cost.
    """

    left: np.ndarray
    right: np.ndarray
    window: EnergyWindow
    eigenlist: np.ndarray

    def trace_norm(self) -> float:
        return float(np.linalg.norm(self.left) * np.linalg.norm(self.right))

    operator_norm = trace_norm

    def to_matrix(self) -> np.ndarray:
        return np.outer(self.left, self.right.conj())


def _eig_transform(sd: SpectralData, x: Observable) -> dict[tuple[int, int], np.ndarray]:
    """Blocks of X in the eigenbasis, keyed like BlockOperator blocks."""
    out = {}
    xop = x.op_on(sd.basis)
    for (a, b), blk in xop.blocks.items():
        va, vb = sd.vectors[a], sd.vectors[b]
        out[(a, b)] = va.conj().T @ blk @ vb
    return out


def heisenberg(sd: SpectralData, x: Observable, t: float) -> BlockOperator:
    """tau_t(X) = e^{itH} X e^{-itH} as a BlockOperator (test scale only)."""
    out = BlockOperator(sd.basis)
    for (a, b), m in _eig_transform(sd, x).items():
        ph_a = np.exp(1j * t * sd.energies[a])
        ph_b = np.exp(-1j * t * sd.energies[b])
        core = (ph_a[:, None] * m) * ph_b[None, :]
        out.set_block(a, b, sd.vectors[a] @ core @ sd.vectors[b].conj().T)
    return out


def heisenberg_truncated(sd: SpectralData, x: Observable, t: float, window: EnergyWindow) -> BlockOperator:
    """tau^B_t(X) with H_B = P_B H: energies outside the window evolve with phase 0."""
    out = BlockOperator(sd.basis)
    for (a, b), m in _eig_transform(sd, x).items():
        ea = np.where(window.contains(sd.energies[a]), sd.energies[a], 0.0)
        eb = np.where(window.contains(sd.energies[b]), sd.energies[b], 0.0)
        core = (np.exp(1j * t * ea)[:, None] * m) * np.exp(-1j * t * eb)[None, :]
        out.set_block(a, b, sd.vectors[a] @ core @ sd.vectors[b].conj().T)
    return out


def phases(states: WindowStates, t: float) -> np.ndarray:
    return np.exp(1j * t * states.energies)


def evolve_windowed(w: WindowedOperator, t: float) -> np.ndarray:
    """(tau_t(X_W))_W in the window basis: phase-conjugated matrix."""
    ph = np.exp(1j * t * w.eigenlist)
    return (ph[:, None] * w.matrix) * ph.conj()[None, :]


def windowed_products(sd: SpectralData, states: WindowStates, x: Observable, y: Observable):
    """(X_W, Y_W, M1) with M1[E,E'] = <psi_E, X Y psi_E'> for window states.

    M1 is assembled from matvecs only, so the product operator XY is never
    materialized.
    """
    vecs = states.vectors_config()
    xv = x.apply_config(vecs)
    yv = y.apply_config(vecs)
    xw = vecs.conj().T @ xv
    yw = vecs.conj().T @ yv
    xdag_v = x.adjoint().apply_config(vecs)
    m1 = xdag_v.conj().T @ yv
    return xw, yw, m1


def correlator(sd: SpectralData, x: Observable, y: Observable, window: EnergyWindow) -> WindowedOperator:
    """R_B(X, Y) = P_B X (1 - P_B) Y P_B in the window eigenbasis."""
    states = sd.select(window)
    if states.dim == 0:
        return WindowedOperator(window, np.zeros((0, 0), dtype=complex), np.zeros(0))
    xw, yw, m1 = windowed_products(sd, states, x, y)
    return WindowedOperator(window, m1 - xw @ yw, states.energies)


def vacuum_overlaps(sd: SpectralData, x: Observable, states: WindowStates) -> np.ndarray:
    """Coefficients <psi_E, X psi_0> for the window states."""
    n = 2 ** sd.basis.n_sites
    v0 = np.zeros(n)
    v0[0] = 1.0
    xv = x.apply_config(v0)
    return states.vectors_config().conj().T @ xv


def counterterm(sd: SpectralData, x: Observable, y: Observable, t: float,
                window: EnergyWindow) -> RankOneTerm:
    """(tau_t(X) P_0 Y)_W as a rank-one term.

    left = P_W e^{itH} X psi_0 and right = P_W Y^* psi_0 in window coordinates;
    the evolution only rotates the left vector inside Ran P_W, so every norm
    of the term is independent of t and of dist(X, Y).
    """
    states = sd.select(window)
    left = np.exp(1j * t * states.energies) * vacuum_overlaps(sd, x, states)
    right = vacuum_overlaps(sd, y.adjoint(), states)
    return RankOneTerm(left=left, right=right, window=window, eigenlist=states.energies)


def double_bracket(sd: SpectralData, x: Observable, y: Observable, t: float,
                   window: EnergyWindow) -> WindowedOperator:
    """[[tau^K_t(X), Y]] compressed to K: commutator minus ground-state counterterms.

    Equals [tau^K_t(X), Y] - (tau^K_t(X) P_0 Y + tau^K_t(Y) P_0 X)
                           + (Y P_0 tau^K_t(X) + X P_0 tau^K_t(Y)),
    assembled in the window basis from five pieces.
    """
    states = sd.select(window)
    if states.dim == 0:
        return WindowedOperator(window, np.zeros((0, 0), dtype=complex), np.zeros(0))
    xw, yw, m1_xy = windowed_products(sd, states, x, y)
    _, _, m1_yx = windowed_products(sd, states, y, x)
    r_xy = m1_xy - xw @ yw          # R_K(X, Y)
    r_yx = m1_yx - yw @ xw
    ph = np.exp(1j * t * states.energies)
    ax = (ph[:, None] * xw) * ph.conj()[None, :]       # (tau^K_t(X))_K
    # commutator compressed to K picks up the out-of-window legs through R_K
    comm = ax @ yw + (ph[:, None] * r_xy) - yw @ ax - r_yx * ph.conj()[None, :]
    ux = vacuum_overlaps(sd, x, states)
    uy = vacuum_overlaps(sd, y, states)
    uxd = vacuum_overlaps(sd, x.adjoint(), states)
    uyd = vacuum_overlaps(sd, y.adjoint(), states)
    o_xy = np.outer(ux, uyd.conj())   # (X P_0 Y)_K
    o_yx = np.outer(uy, uxd.conj())
    ct = (ph[:, None] * (o_xy + o_yx)) - (o_yx + o_xy) * ph.conj()[None, :]
    return WindowedOperator(window, comm - ct, states.energies)
