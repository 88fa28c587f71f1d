"""Spin-1/2 chain combinatorics: magnon sectors, block operators, local observables.

Sites are signed integers in [-L, L] for a chain of n = 2L+1 spins.  Bit k of a
basis configuration (weight 2**k) encodes the spin at site k - L, with a set
bit meaning *down*.  The all-up configuration 0 is the vacuum.  The total
down-spin number is conserved by every Hamiltonian built here, so operators
are stored block-wise over magnon sectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from math import comb
from typing import Iterator, Mapping, Sequence

import numpy as np

# Single-site matrices in the (up, down) basis; index 1 = down spin.
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]])
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
NUMBER = np.array([[0.0, 0.0], [0.0, 1.0]])   # projection onto down spin
UP_PROJ = np.array([[1.0, 0.0], [0.0, 0.0]])
ID2 = np.eye(2)

# Desk-scale guard: full-chain dense eigendecompositions above this many sites
# exceed a few GB of eigenvector storage.
MAX_SITES_DEFAULT = 15


class CapacityError(Exception):
    """Requested chain size exceeds the configured memory budget."""


def _popcount(a: np.ndarray) -> np.ndarray:
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(a)
    return np.array([bin(int(x)).count("1") for x in a])


@dataclass(frozen=True)
class SectorBasis:
    """Ordered basis of the fixed-magnon-number subspace."""

    n_sites: int
    n_magnons: int
    states: np.ndarray  # strictly increasing uint64 configurations

    @property
    def dim(self) -> int:
        return len(self.states)

    def index_of(self, config: int) -> int:
        k = int(np.searchsorted(self.states, config))
        if k >= len(self.states) or self.states[k] != config:
            raise KeyError(f"configuration {config} not in sector {self.n_magnons}")
        return k

    def indices_of(self, configs: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.states, configs)
        if np.any(self.states[idx] != configs):
            raise KeyError("configuration outside sector")
        return idx


class BasisSet:
    """All magnon sectors of a chain, with global (sector, index) offsets."""

    def __init__(self, L: int, sectors: Sequence[SectorBasis]):
        self.L = L
        self.n_sites = 2 * L + 1
        self.sectors = list(sectors)
        self.offsets = np.concatenate([[0], np.cumsum([s.dim for s in self.sectors])])
        self.total_dim = int(self.offsets[-1])

    def __iter__(self) -> Iterator[SectorBasis]:
        return iter(self.sectors)

    def __len__(self) -> int:
        return len(self.sectors)

    def __getitem__(self, n: int) -> SectorBasis:
        return self.sectors[n]

    def site_bit(self, site: int) -> int:
        if not -self.L <= site <= self.L:
            raise ValueError(f"site {site} outside chain [-{self.L}, {self.L}]")
        return site + self.L

    def scatter(self, n_magnons: int, vecs: np.ndarray) -> np.ndarray:
        """Embed sector vectors (dim x k) into the 2**n computational basis."""
        vecs = np.atleast_2d(vecs.T).T if vecs.ndim == 1 else vecs
        out = np.zeros((2 ** self.n_sites,) + vecs.shape[1:], dtype=vecs.dtype)
        out[self.sectors[n_magnons].states] = vecs
        return out


def build_bases(L: int, max_sites: int = MAX_SITES_DEFAULT) -> BasisSet:
    """Enumerate every magnon sector of the chain [-L, L].

    Sector states are sorted by integer encoding, which makes indexing
    reproducible and lets lookups use binary search.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    n = 2 * L + 1
    if n > max_sites:
        raise CapacityError(
            f"chain of {n} sites exceeds the configured budget of {max_sites}; "
            "raise max_sites explicitly if you really have the memory"
        )
    configs = np.arange(2 ** n, dtype=np.uint64)
    counts = _popcount(configs)
    sectors = []
    for m in range(n + 1):
        states = configs[counts == m]
        assert len(states) == comb(n, m)
        sectors.append(SectorBasis(n_sites=n, n_magnons=m, states=states))
    return BasisSet(L, sectors)


class BlockOperator:
    """Sector-resolved operator storage: map (sector_to, sector_from) -> dense block.

    Absent blocks are zero.  Justified by [H, N] = 0: every operator we build
    couples only a few magnon sectors.
    """

    def __init__(self, basis: BasisSet, blocks: Mapping[tuple[int, int], np.ndarray] | None = None):
        self.basis = basis
        self.blocks: dict[tuple[int, int], np.ndarray] = {}
        if blocks:
            for key, blk in blocks.items():
                self.set_block(key[0], key[1], blk)

    def set_block(self, to_sector: int, from_sector: int, block: np.ndarray) -> None:
        expect = (self.basis[to_sector].dim, self.basis[from_sector].dim)
        if block.shape != expect:
            raise ValueError(f"block ({to_sector},{from_sector}) has shape {block.shape}, expected {expect}")
        self.blocks[(to_sector, from_sector)] = block

    def block(self, to_sector: int, from_sector: int) -> np.ndarray | None:
        return self.blocks.get((to_sector, from_sector))

    def adjoint(self) -> "BlockOperator":
        out = BlockOperator(self.basis)
        for (a, b), blk in self.blocks.items():
            out.set_block(b, a, blk.conj().T)
        return out

    def __add__(self, other: "BlockOperator") -> "BlockOperator":
        out = BlockOperator(self.basis)
        keys = set(self.blocks) | set(other.blocks)
        for k in keys:
            x = self.blocks.get(k)
            y = other.blocks.get(k)
            out.set_block(*k, (x if y is None else y if x is None else x + y).copy())
        return out

    def __sub__(self, other: "BlockOperator") -> "BlockOperator":
        return self + (other * (-1.0))

    def __mul__(self, scalar: complex) -> "BlockOperator":
        out = BlockOperator(self.basis)
        for k, blk in self.blocks.items():
            out.set_block(*k, blk * scalar)
        return out

    __rmul__ = __mul__

    def __matmul__(self, other: "BlockOperator") -> "BlockOperator":
        out = BlockOperator(self.basis)
        acc: dict[tuple[int, int], np.ndarray] = {}
        for (a, b), x in self.blocks.items():
            for (bb, c), y in other.blocks.items():
                if b != bb:
                    continue
                k = (a, c)
                prod = x @ y
                acc[k] = acc[k] + prod if k in acc else prod
        for k, blk in acc.items():
            out.set_block(*k, blk)
        return out

    def apply_global(self, vecs: np.ndarray) -> np.ndarray:
        """Apply to vectors given in the concatenated (sector-ordered) global basis."""
        vecs2 = vecs[:, None] if vecs.ndim == 1 else vecs
        dt = np.result_type(vecs2.dtype, *(b.dtype for b in self.blocks.values())) if self.blocks else vecs2.dtype
        out = np.zeros((self.basis.total_dim, vecs2.shape[1]), dtype=dt)
        off = self.basis.offsets
        for (a, b), blk in self.blocks.items():
            out[off[a]:off[a + 1]] += blk @ vecs2[off[b]:off[b + 1]]
        return out[:, 0] if vecs.ndim == 1 else out

    def apply_config(self, vecs: np.ndarray) -> np.ndarray:
        """Apply to vectors indexed by computational configuration (length 2**n)."""
        vecs2 = vecs[:, None] if vecs.ndim == 1 else vecs
        dt = np.result_type(vecs2.dtype, *(b.dtype for b in self.blocks.values())) if self.blocks else vecs2.dtype
        out = np.zeros_like(vecs2, dtype=dt)
        for (a, b), blk in self.blocks.items():
            src = vecs2[self.basis[b].states]
            out[self.basis[a].states] += blk @ src
        return out[:, 0] if vecs.ndim == 1 else out

    def to_dense_config(self) -> np.ndarray:
        """Dense 2**n matrix in the computational basis (small chains only)."""
        n = self.basis.n_sites
        if 2 ** n > 4096:
            raise CapacityError("dense assembly refused above 4096 dimensions")
        dt = np.result_type(*(b.dtype for b in self.blocks.values())) if self.blocks else float
        out = np.zeros((2 ** n, 2 ** n), dtype=dt)
        for (a, b), blk in self.blocks.items():
            out[np.ix_(self.basis[a].states, self.basis[b].states)] = blk
        return out

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        for (a, b), blk in self.blocks.items():
            other = self.blocks.get((b, a))
            if other is None:
                if np.max(np.abs(blk)) > tol:
                    return False
            elif np.max(np.abs(blk - other.conj().T)) > tol:
                return False
        return True


def _singular_values(op: BlockOperator) -> np.ndarray:
    """All nonzero singular values; uses per-block SVD when block keys form a matching."""
    if not op.blocks:
        return np.zeros(0)
    rows = [a for a, _ in op.blocks]
    cols = [b for _, b in op.blocks]
    if len(set(rows)) == len(rows) and len(set(cols)) == len(cols):
        return np.concatenate([np.linalg.svd(blk, compute_uv=False) for blk in op.blocks.values()])
    return np.linalg.svd(op.to_dense_config(), compute_uv=False)


def norms(op, kind: str = "operator") -> float:
    """Operator, trace, or Frobenius norm of a BlockOperator or Observable."""
    if isinstance(op, Observable):
        s = np.linalg.svd(op.local, compute_uv=False)
        outside = op.n_sites - op.width
        if kind == "operator":
            return float(s[0]) if len(s) else 0.0
        if kind == "trace":
            return float(s.sum() * 2 ** outside)
        if kind == "frobenius":
            return float(np.sqrt((s ** 2).sum()) * 2 ** (outside / 2))
        raise ValueError(f"unknown norm kind {kind!r}")
    s = _singular_values(op)
    if kind == "operator":
        return float(s.max()) if len(s) else 0.0
    if kind == "trace":
        return float(s.sum())
    if kind == "frobenius":
        return float(np.sqrt((s ** 2).sum()))
    raise ValueError(f"unknown norm kind {kind!r}")


def _as_interval(support) -> tuple[int, int]:
    s, r = int(support[0]), int(support[1])
    if s > r:
        raise ValueError(f"support interval [{s}, {r}] is empty")
    return s, r


@dataclass
class Observable:
    """A local operator with a declared interval support.

    The support is caller-declared and never shrunk: supports are not unique,
    and several bounds depend on the declared one.  The dense block form is
    built lazily; the reshaped local action is what the hot paths use.
    """

    local: np.ndarray
    support: tuple[int, int]
    n_sites: int
    _op: BlockOperator | None = field(default=None, repr=False, compare=False)
    _basis: BasisSet | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.support = _as_interval(self.support)
        L = (self.n_sites - 1) // 2
        if self.support[0] < -L or self.support[1] > L:
            raise ValueError(f"support {self.support} not inside chain [-{L}, {L}]")
        w = self.width
        if self.local.shape != (2 ** w, 2 ** w):
            raise ValueError(f"local matrix shape {self.local.shape} does not match 2^{w}")

    @property
    def width(self) -> int:
        return self.support[1] - self.support[0] + 1

    @property
    def L(self) -> int:
        return (self.n_sites - 1) // 2

    def op_on(self, basis: BasisSet) -> BlockOperator:
        if self._op is None or self._basis is not basis:
            self._op = _embed_block(self.local, self.support, basis)
            self._basis = basis
        return self._op

    def adjoint(self) -> "Observable":
        return Observable(self.local.conj().T, self.support, self.n_sites)

    def norm(self) -> float:
        return norms(self, "operator")

    def apply_config(self, vecs: np.ndarray) -> np.ndarray:
        """Apply to computational-basis vectors (2**n or 2**n x k) via reshape."""
        one_d = vecs.ndim == 1
        v = vecs[:, None] if one_d else vecs
        n, w = self.n_sites, self.width
        lo_bits = self.support[0] + self.L
        hi_bits = n - lo_bits - w
        k = v.shape[1]
        v4 = v.reshape(2 ** hi_bits, 2 ** w, 2 ** lo_bits * k)
        out = np.einsum("ab,hbx->hax", self.local, v4)
        out = out.reshape(2 ** n, k)
        return out[:, 0] if one_d else out

    def expect_vacuum(self) -> complex:
        """<psi_0, X psi_0> = top-left entry of the local matrix."""
        return complex(self.local[0, 0])


def _embed_block(local: np.ndarray, support: tuple[int, int], basis: BasisSet) -> BlockOperator:
    """Dense sector blocks of a local operator acting as identity outside its support."""
    L = basis.L
    s, r = support
    w = r - s + 1
    shift = s + L
    win_mask = ((1 << w) - 1) << shift
    out = BlockOperator(basis)
    dtype = np.result_type(local.dtype, np.float64)
    for b_sec, sec in enumerate(basis):
        states = sec.states.astype(np.int64)
        pat_from = (states >> shift) & ((1 << w) - 1)
        outside = states & ~win_mask
        sub = local[:, pat_from]  # (2**w, dim_b)
        rows_pat, col_idx = np.nonzero(sub)
        if len(rows_pat) == 0:
            continue
        vals = sub[rows_pat, col_idx]
        new_states = (outside[col_idx] | (rows_pat.astype(np.int64) << shift)).astype(np.uint64)
        new_m = _popcount(new_states).astype(np.int64)
        for a_sec in np.unique(new_m):
            a_sec = int(a_sec)
            pick = new_m == a_sec
            blk = np.zeros((basis[a_sec].dim, sec.dim), dtype=dtype)
            rows = basis[a_sec].indices_of(new_states[pick])
            np.add.at(blk, (rows, col_idx[pick]), vals[pick])
            out.set_block(a_sec, b_sec, blk)
    return out


def embed_local(local: np.ndarray, support, L: int) -> Observable:
    """Wrap a matrix on the spins of an interval as a chain observable."""
    s, r = _as_interval(support)
    w = r - s + 1
    local = np.asarray(local)
    if local.shape != (2 ** w, 2 ** w):
        raise ValueError(f"matrix of shape {local.shape} does not act on {w} spins")
    return Observable(local.copy(), (s, r), 2 * L + 1)


def local_kron(site_ops: Mapping[int, np.ndarray], support, L: int) -> Observable:
    """Tensor single-site matrices over an interval, identity where unspecified.

    The local index convention puts the leftmost site of the support in the
    least significant bit, matching the chain's configuration encoding.
    """
    s, r = _as_interval(support)
    mats = [np.asarray(site_ops.get(site, ID2)) for site in range(s, r + 1)]
    local = reduce(lambda low, high: np.kron(high, low), mats)
    return embed_local(local, (s, r), L)


def sigma_x(site: int, L: int) -> Observable:
    return local_kron({site: SIGMA_X}, (site, site), L)


def sigma_z(site: int, L: int) -> Observable:
    return local_kron({site: SIGMA_Z}, (site, site), L)


def number_op(site: int, L: int) -> Observable:
    return local_kron({site: NUMBER}, (site, site), L)


def identity_observable(L: int) -> Observable:
    return embed_local(np.eye(1 * 2), (0, 0), L)


class SiteSetProjector:
    """P_+ over an arbitrary site set: all listed spins up, identity elsewhere.

    Stored as a diagonal mask, not a dense matrix, because the sets used by
    the non-spreading construction cover most of the chain.
    """

    def __init__(self, sites: Sequence[int], L: int):
        self.sites = tuple(sorted(set(int(s) for s in sites)))
        self.L = L
        self.n_sites = 2 * L + 1
        for s in self.sites:
            if not -L <= s <= L:
                raise ValueError(f"site {s} outside chain")
        self.bitmask = 0
        for s in self.sites:
            self.bitmask |= 1 << (s + L)

    def diag_config(self) -> np.ndarray:
        configs = np.arange(2 ** self.n_sites, dtype=np.uint64)
        return ((configs & np.uint64(self.bitmask)) == 0).astype(float)

    def keeps(self, configs: np.ndarray) -> np.ndarray:
        return (configs.astype(np.uint64) & np.uint64(self.bitmask)) == 0

    def apply_config(self, vecs: np.ndarray) -> np.ndarray:
        d = self.keeps(np.arange(2 ** self.n_sites, dtype=np.uint64))
        return vecs * (d if vecs.ndim == 1 else d[:, None])


def plus_projector(support, L: int) -> Observable:
    """P_+ on an interval: projection onto all-spins-up inside the support."""
    s, r = _as_interval(support)
    return local_kron({site: UP_PROJ for site in range(s, r + 1)}, (s, r), L)


def minus_projector(support, L: int) -> Observable:
    """P_- = 1 - P_+ on an interval."""
    p = plus_projector(support, L)
    return Observable(np.eye(p.local.shape[0]) - p.local, p.support, p.n_sites)


@dataclass
class PMDecomposition:
    """Four projector-sandwich blocks of an observable plus its vacuum weight."""

    pp: Observable
    pm: Observable
    mp: Observable
    mm: Observable
    zeta: complex

    def reconstruct(self) -> Observable:
        total = self.pp.local + self.pm.local + self.mp.local + self.mm.local
        return Observable(total, self.pp.support, self.pp.n_sites)


def pm_decompose(x: Observable) -> PMDecomposition:
    """Split X into P_a X P_b blocks over its own support.

    The all-up projector is rank one on the support, so the (+,+) block is a
    scalar multiple of it; that scalar is the vacuum expectation of X.
    """
    dim = x.local.shape[0]
    p = np.zeros((dim, dim), dtype=x.local.dtype)
    p[0, 0] = 1.0
    m = np.eye(dim) - p
    mk = lambda mat: Observable(mat, x.support, x.n_sites)
    return PMDecomposition(
        pp=mk(p @ x.local @ p),
        pm=mk(p @ x.local @ m),
        mp=mk(m @ x.local @ p),
        mm=mk(m @ x.local @ m),
        zeta=complex(x.local[0, 0]),
    )


def compress(z: Observable, window, L: int | None = None) -> Observable:
    """Compress Z onto a window interval: Z~ acts on the window only and satisfies
    P_+(O) Z P_+(O) = Z~ P_+(O) = P_+(O) Z~ with O the complement of the window.

    Entries are vacuum-dressed matrix elements: spins outside the window are
    pinned up.  The compression never increases the operator norm.
    """
    L = z.L if L is None else L
    ws, wr = _as_interval(window)
    if ws < -L or wr > L:
        raise ValueError("window outside chain")
    wwidth = wr - ws + 1
    if wwidth > 12:
        raise CapacityError("compress windows above 12 sites are not materialized")
    wdim = 2 ** wwidth
    zs, zr = z.support
    pats = np.arange(wdim, dtype=np.int64)
    overlap_lo, overlap_hi = max(ws, zs), min(wr, zr)
    if overlap_lo > overlap_hi:
        # disjoint supports: spins of supp(Z) are pinned up, Z~ is a scalar
        out = np.eye(wdim, dtype=z.local.dtype) * z.local[0, 0]
        return Observable(out, (ws, wr), z.n_sites)
    # window pattern splits into bits inside supp(Z) (shifted into Z's local
    # coordinates; supp(Z) sites beyond the window are pinned up) and bits
    # outside supp(Z), on which Z acts as the identity.
    in_shift = overlap_lo - ws
    in_width = overlap_hi - overlap_lo + 1
    in_mask = ((1 << in_width) - 1) << in_shift
    inside = (pats & in_mask) >> in_shift
    outside = pats & ~in_mask
    zpat = inside << (overlap_lo - zs)
    out = z.local[np.ix_(zpat, zpat)] * (outside[:, None] == outside[None, :])
    return Observable(out.astype(z.local.dtype, copy=False), (ws, wr), z.n_sites)
