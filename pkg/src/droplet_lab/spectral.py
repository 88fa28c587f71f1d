"""Sector-wise diagonalization, energy windows, and windowed operator algebra.

Everything downstream works in eigenbases.  Windowed diagnostics never touch
the full 2**n space: a window selects a handful of eigenpairs and operators
are compressed to that subspace, which is the central performance decision
of this package.

SpectralData is immutable after construction and safe to share across
workers; the harness parallelizes over disorder realizations, never inside
one decomposition.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .hamiltonian import ChainParams
from .spincore import BasisSet, BlockOperator, Observable, SiteSetProjector

CLUSTER_TOL = 1e-10


class EigensolverError(Exception):
    """Per-sector eigensolver failure, tagged with the sector id."""


@dataclass(frozen=True)
class EnergyWindow:
    """Energy interval with closed/open endpoints and a relative tolerance."""

    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True
    tol: float = 1e-12

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"window [{self.lo}, {self.hi}] is empty")

    def contains(self, energies: np.ndarray) -> np.ndarray:
        e = np.asarray(energies)
        slo = self.tol * max(1.0, abs(self.lo))
        shi = self.tol * max(1.0, abs(self.hi))
        lo_ok = (e >= self.lo - slo) if self.lo_closed else (e > self.lo + slo)
        hi_ok = (e <= self.hi + shi) if self.hi_closed else (e < self.hi - shi)
        return lo_ok & hi_ok

    def as_tuple(self) -> tuple[float, float, bool, bool]:
        return (self.lo, self.hi, self.lo_closed, self.hi_closed)


FULL_WINDOW = EnergyWindow(-np.inf, np.inf)


def droplet_window(delta: float, delta_param: float = 0.0, closed_hi: bool | None = None) -> EnergyWindow:
    """The interval [1 - 1/D, (2 - delta_param)(1 - 1/D)].

    delta_param = 0 gives the half-open droplet spectrum; positive values give
    the closed strict subinterval used by the localization assumption.
    """
    if delta <= 1:
        raise ValueError("delta must exceed 1")
    if not 0 <= delta_param < 1:
        raise ValueError("delta_param must lie in [0, 1)")
    t0 = 1.0 - 1.0 / delta
    if closed_hi is None:
        closed_hi = delta_param > 0
    return EnergyWindow(t0, (2.0 - delta_param) * t0, lo_closed=True, hi_closed=closed_hi)


class SpectralData:
    """Per-sector eigenpairs of a chain Hamiltonian plus a global sorted index."""

    def __init__(self, basis: BasisSet, energies: list[np.ndarray], vectors: list[np.ndarray | None],
                 H: BlockOperator | None = None, params: ChainParams | None = None):
        self.basis = basis
        self.energies = energies
        self.vectors = vectors
        self.H = H
        self.params = params
        flat = np.concatenate(energies)
        sec = np.concatenate([np.full(len(e), s) for s, e in enumerate(energies)])
        idx = np.concatenate([np.arange(len(e)) for e in energies])
        order = np.argsort(flat, kind="stable")
        self.sorted_energies = flat[order]
        self.sorted_sector = sec[order]
        self.sorted_index = idx[order]
        self._clusters: list[slice] | None = None

    @property
    def total_dim(self) -> int:
        return len(self.sorted_energies)

    @property
    def norm_h(self) -> float:
        return float(max(abs(self.sorted_energies[0]), abs(self.sorted_energies[-1])))

    @property
    def ground_energy(self) -> float:
        return float(self.sorted_energies[0])

    def ground_vector_config(self) -> np.ndarray:
        out = np.zeros(2 ** self.basis.n_sites)
        out[0] = 1.0
        return out

    def clusters(self) -> list[slice]:
        """Slices of the sorted spectrum merged at relative tolerance 1e-10.

        Needed because per-eigenvalue quantities assume simple spectrum; for
        deterministic or symmetric chains, degeneracies are grouped and the
        cluster projector replaces the rank-one one.
        """
        if self._clusters is None:
            tol = CLUSTER_TOL * max(1.0, self.norm_h)
            gaps = np.diff(self.sorted_energies)
            cuts = np.nonzero(gaps > tol)[0]
            starts = np.concatenate([[0], cuts + 1])
            ends = np.concatenate([cuts + 1, [len(self.sorted_energies)]])
            self._clusters = [slice(int(a), int(b)) for a, b in zip(starts, ends)]
        return self._clusters

    def select(self, window: EnergyWindow) -> "WindowStates":
        mask = window.contains(self.sorted_energies)
        return WindowStates(self, np.nonzero(mask)[0])

    def vectors_config(self, positions: np.ndarray) -> np.ndarray:
        """Eigenvectors at sorted positions, scattered to the 2**n basis (2**n x k)."""
        out = np.zeros((2 ** self.basis.n_sites, len(positions)))
        for col, pos in enumerate(positions):
            s = int(self.sorted_sector[pos])
            if self.vectors[s] is None:
                raise EigensolverError(f"sector {s} was diagonalized without vectors")
            out[self.basis[s].states, col] = self.vectors[s][:, self.sorted_index[pos]]
        return out

    def positions_by_sector(self) -> list[np.ndarray]:
        """Sorted-spectrum positions of each sector, ordered by in-sector index."""
        out = []
        for s in range(len(self.basis)):
            pos = np.nonzero(self.sorted_sector == s)[0]
            out.append(pos[np.argsort(self.sorted_index[pos], kind="stable")])
        return out

    def eig_coeffs(self, vecs_config: np.ndarray) -> np.ndarray:
        """Expand config-basis vectors over all eigenvectors, in sorted-spectrum order."""
        one_d = vecs_config.ndim == 1
        v = vecs_config[:, None] if one_d else vecs_config
        out = np.zeros((self.total_dim, v.shape[1]), dtype=v.dtype)
        for s, pos in enumerate(self.positions_by_sector()):
            if len(pos) == 0:
                continue
            comp = v[self.basis[s].states]
            out[pos] = self.vectors[s].conj().T @ comp
        return out[:, 0] if one_d else out


class WindowStates:
    """The eigenpairs of one energy window, with lazily scattered vectors."""

    def __init__(self, sd: SpectralData, positions: np.ndarray):
        self.sd = sd
        self.positions = positions
        self._config: np.ndarray | None = None

    @property
    def energies(self) -> np.ndarray:
        return self.sd.sorted_energies[self.positions]

    @property
    def dim(self) -> int:
        return len(self.positions)

    def vectors_config(self) -> np.ndarray:
        if self._config is None:
            self._config = self.sd.vectors_config(self.positions)
        return self._config

    def index_of_ground(self) -> int | None:
        hits = np.nonzero((self.sd.sorted_sector[self.positions] == 0)
                          & (self.sd.sorted_index[self.positions] == 0))[0]
        return int(hits[0]) if len(hits) else None


@dataclass
class WindowedOperator:
    """An operator compressed to a window eigenbasis."""

    window: EnergyWindow
    matrix: np.ndarray
    eigenlist: np.ndarray

    def __post_init__(self):
        if self.matrix.shape != (len(self.eigenlist), len(self.eigenlist)):
            raise ValueError("windowed matrix does not match its eigenlist")

    def norm(self, kind: str = "operator") -> float:
        if self.matrix.size == 0:
            return 0.0
        s = np.linalg.svd(self.matrix, compute_uv=False)
        if kind == "operator":
            return float(s[0])
        if kind == "trace":
            return float(s.sum())
        if kind == "frobenius":
            return float(np.sqrt((s ** 2).sum()))
        raise ValueError(f"unknown norm kind {kind!r}")


def diagonalize(H: BlockOperator, params: ChainParams | None = None,
                vectors: bool = True) -> SpectralData:
    """Dense eigendecomposition sector by sector.

    Full spectra are required by the functional calculus and the truncated
    dynamics, so no iterative solver is used at desk scale.
    """
    energies: list[np.ndarray] = []
    vecs: list[np.ndarray | None] = []
    for sec in H.basis:
        blk = H.block(sec.n_magnons, sec.n_magnons)
        if blk is None:
            blk = np.zeros((sec.dim, sec.dim))
        try:
            if vectors:
                e, v = np.linalg.eigh(blk)
            else:
                e, v = np.linalg.eigvalsh(blk), None
        except np.linalg.LinAlgError as err:
            raise EigensolverError(f"sector {sec.n_magnons}: {err}") from err
        energies.append(e)
        vecs.append(v)
    for key in H.blocks:
        if key[0] != key[1]:
            raise ValueError("H has off-sector blocks; it does not commute with N")
    return SpectralData(H.basis, energies, vecs, H=H, params=params)


def matrix_function(sd: SpectralData, g: Callable[[np.ndarray], np.ndarray],
                    window: EnergyWindow | None = None) -> BlockOperator:
    """g(H) by eigenbasis functional calculus, optionally cut to a window."""
    out = BlockOperator(sd.basis)
    for s, sec in enumerate(sd.basis):
        e = sd.energies[s]
        v = sd.vectors[s]
        vals = np.asarray(g(e), dtype=complex)
        if window is not None:
            vals = np.where(window.contains(e), vals, 0.0)
        if not np.any(vals):
            continue
        blk = (v * vals) @ v.conj().T
        if np.max(np.abs(blk.imag)) < 1e-15:
            blk = blk.real
        out.set_block(s, s, blk)
    return out


def window_projector(sd: SpectralData, window: EnergyWindow) -> BlockOperator:
    """Spectral projector chi_window(H); empty windows give the zero operator."""
    return matrix_function(sd, lambda e: np.ones_like(e), window=window)


def window_compress(sd: SpectralData, window: EnergyWindow, x: Observable) -> WindowedOperator:
    """X compressed to the window eigenbasis: entries <psi_E, X psi_E'>."""
    ws = sd.select(window)
    if ws.dim == 0:
        return WindowedOperator(window, np.zeros((0, 0)), np.zeros(0))
    vecs = ws.vectors_config()
    xv = x.apply_config(vecs)
    return WindowedOperator(window, vecs.conj().T @ xv, ws.energies)


def compress_states(states: WindowStates, x: Observable) -> np.ndarray:
    """Matrix of X between explicit window states (same basis both sides)."""
    vecs = states.vectors_config()
    return vecs.conj().T @ x.apply_config(vecs)


def project_mask(states: WindowStates, proj: SiteSetProjector) -> np.ndarray:
    """Diagonal-mask projector between window states."""
    vecs = states.vectors_config()
    keep = proj.keeps(np.arange(vecs.shape[0], dtype=np.uint64))
    return (vecs[keep].conj().T @ vecs[keep])


# ---------------------------------------------------------------------------
# optional binary cache


CACHE_VERSION = 1


def spectral_key(params: ChainParams, seed: int, index: int) -> str:
    payload = json.dumps({"params": params.key_dict(), "seed": seed, "index": index},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:32]


def save_spectral(sd: SpectralData, cache_dir: str | Path, key: str) -> Path:
    """Versioned little-endian dump of eigenpairs (numpy arrays are stored '<')."""
    path = Path(cache_dir) / f"spectral_{key}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"version": np.array([CACHE_VERSION]), "L": np.array([sd.basis.L])}
    for s, (e, v) in enumerate(zip(sd.energies, sd.vectors)):
        arrays[f"e{s}"] = e.astype("<f8")
        if v is not None:
            arrays[f"v{s}"] = v.astype("<f8")
    np.savez(path, **arrays)
    return path


def load_spectral(cache_dir: str | Path, key: str, basis: BasisSet) -> SpectralData | None:
    path = Path(cache_dir) / f"spectral_{key}.npz"
    if not path.exists():
        return None
    with np.load(path) as data:
        if int(data["version"][0]) != CACHE_VERSION or int(data["L"][0]) != basis.L:
            return None
        energies = [data[f"e{s}"] for s in range(len(basis))]
        vectors = [data[f"v{s}"] if f"v{s}" in data else None for s in range(len(basis))]
    return SpectralData(basis, energies, vectors)
