"""Finite disordered XXZ chain in the Ising phase.

H = sum_{i=-L}^{L-1} h_{i,i+1} + lambda * sum_i omega_i N_i + beta (N_{-L} + N_L)

with the bond term h = (1 - sz sz)/4 - (sx sx + sy sy)/(4 Delta).  The all-up
state is the zero-energy ground state, and with beta >= (1 - 1/Delta)/2 the
spectrum keeps a gap of 1 - 1/Delta above it.  The one-magnon block is a
tridiagonal Anderson matrix, which this module also builds directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.random import Generator, Philox

from .spincore import BasisSet, BlockOperator, build_bases


def gap_floor_beta(delta: float) -> float:
    return 0.5 * (1.0 - 1.0 / delta)


@dataclass(frozen=True)
class DisorderSpec:
    """Disorder distribution with a deterministic counter-based stream.

    kind:
      - "uniform01": i.i.d. uniform on [0, 1].
      - "iid-quantile": i.i.d. with quantile(u) applied to uniform draws;
        the quantile function must map [0,1] into [0,1].
      - "ergodic-shift": generator(realization_index, n_sites) -> values,
        for ergodic non-i.i.d. fields; the hook owns the sequence.
    """

    kind: str = "uniform01"
    seed: int = 0
    quantile: Callable[[np.ndarray], np.ndarray] | None = None
    generator: Callable[[int, int], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("uniform01", "iid-quantile", "ergodic-shift"):
            raise ValueError(f"unknown disorder kind {self.kind!r}")
        if self.kind == "iid-quantile" and self.quantile is None:
            raise ValueError("iid-quantile needs a quantile callable")
        if self.kind == "ergodic-shift" and self.generator is None:
            raise ValueError("ergodic-shift needs a generator callable")


@dataclass(frozen=True)
class DisorderRealization:
    omega: np.ndarray
    seed: int
    index: int

    def __post_init__(self):
        if np.any(self.omega < 0) or np.any(self.omega > 1):
            raise ValueError("disorder values must lie in [0, 1]")


@dataclass(frozen=True)
class ChainParams:
    """Chain couplings; beta defaults to the smallest gap-preserving value."""

    delta: float
    lam: float
    L: int
    beta: float | None = None
    disorder: DisorderSpec = field(default_factory=DisorderSpec)

    def __post_init__(self):
        if self.delta <= 1:
            raise ValueError("anisotropy must satisfy delta > 1 (Ising phase)")
        if self.lam < 0:
            raise ValueError("disorder strength must be nonnegative")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.beta is None:
            object.__setattr__(self, "beta", gap_floor_beta(self.delta))
        elif self.beta < gap_floor_beta(self.delta) - 1e-12:
            raise ValueError(
                f"beta={self.beta} breaks the spectral gap; need >= {gap_floor_beta(self.delta)}"
            )

    @property
    def n_sites(self) -> int:
        return 2 * self.L + 1

    @property
    def theta0(self) -> float:
        return 1.0 - 1.0 / self.delta

    def key_dict(self) -> dict:
        return {
            "delta": self.delta, "lam": self.lam, "L": self.L, "beta": self.beta,
            "disorder": self.disorder.kind, "seed": self.disorder.seed,
        }


def sample_disorder(spec: DisorderSpec, L: int, realization_index: int) -> DisorderRealization:
    """Draw the 2L+1 field values for one realization.

    The stream is keyed by (seed, realization_index), so realizations are
    independent of evaluation order and safe to draw in parallel workers.
    """
    n = 2 * L + 1
    if spec.kind == "ergodic-shift":
        vals = np.asarray(spec.generator(realization_index, n), dtype=float)
        if vals.shape != (n,):
            raise ValueError("ergodic generator returned wrong length")
    else:
        rng = Generator(Philox(key=np.array([spec.seed % 2 ** 64, realization_index], dtype=np.uint64)))
        vals = rng.random(n)
        if spec.kind == "iid-quantile":
            vals = np.asarray(spec.quantile(vals), dtype=float)
    return DisorderRealization(omega=vals, seed=spec.seed, index=realization_index)


def local_term(delta: float) -> np.ndarray:
    """Bond Hamiltonian on two spins; eigenvalues {0, 0, 1/2 - 1/(2D), 1/2 + 1/(2D)}."""
    if delta <= 1:
        raise ValueError("delta must exceed 1")
    zz = np.kron(np.diag([1.0, -1.0]), np.diag([1.0, -1.0]))
    xx = np.kron(np.array([[0, 1], [1, 0]]), np.array([[0, 1], [1, 0]]))
    sy = np.array([[0, -1j], [1j, 0]])
    yy = np.kron(sy, sy).real  # purely real for this bond combination
    return 0.25 * (np.eye(4) - zz) - (xx + yy) / (4.0 * delta)


def build(params: ChainParams, omega: DisorderRealization, basis: BasisSet | None = None,
          max_sites: int = 15) -> BlockOperator:
    """Assemble H as dense magnon-sector blocks (real symmetric).

    Diagonal entries count mismatched bonds at weight 1/2 plus the field and
    boundary terms; hopping moves one down spin across a mismatched bond with
    amplitude -1/(2 Delta).
    """
    if len(omega.omega) != params.n_sites:
        raise ValueError(f"disorder has {len(omega.omega)} entries, chain needs {params.n_sites}")
    if basis is None:
        basis = build_bases(params.L, max_sites=max_sites)
    n = params.n_sites
    hop = -1.0 / (2.0 * params.delta)
    lam_om = params.lam * omega.omega
    H = BlockOperator(basis)
    for sec in basis:
        states = sec.states.astype(np.int64)
        dim = sec.dim
        blk = np.zeros((dim, dim))
        bits = (states[:, None] >> np.arange(n)[None, :]) & 1
        mismatch = bits[:, :-1] != bits[:, 1:]
        diag = 0.5 * mismatch.sum(axis=1) + bits @ lam_om + params.beta * (bits[:, 0] + bits[:, -1])
        blk[np.arange(dim), np.arange(dim)] = diag
        for b in range(n - 1):
            movable = np.nonzero(mismatch[:, b])[0]
            if len(movable) == 0:
                continue
            flipped = (states[movable] ^ ((1 << b) | (1 << (b + 1)))).astype(np.uint64)
            cols = sec.indices_of(flipped)
            blk[movable, cols] += hop
        H.set_block(sec.n_magnons, sec.n_magnons, blk)
    return H


def one_magnon_anderson(params: ChainParams, omega: DisorderRealization) -> np.ndarray:
    """Tridiagonal Anderson image of the one-magnon block.

    Convention pinned so that at lambda = 0, beta = (1 - 1/Delta)/2 the
    spectrum is the band [1 - 1/Delta, 1 + 1/Delta]: interior diagonal
    1 + lambda*omega_i, edge diagonal 1/2 + beta + lambda*omega_{+-L},
    off-diagonal -1/(2 Delta).  Equals the direct restriction of the chain
    to the states sigma^x_i psi_0 in site order.
    """
    if len(omega.omega) != params.n_sites:
        raise ValueError("disorder length mismatch")
    n = params.n_sites
    diag = 1.0 + params.lam * omega.omega
    diag[0] = 0.5 + params.beta + params.lam * omega.omega[0]
    diag[-1] = 0.5 + params.beta + params.lam * omega.omega[-1]
    off = np.full(n - 1, -1.0 / (2.0 * params.delta))
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
