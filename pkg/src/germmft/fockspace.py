"""Occupation-number bookkeeping for bosons on a finite set of modes.

A :class:`FockBasis` enumerates every occupation multi-index ``n`` with
``sum(n) <= n_max`` over ``M`` modes.  Sectors are stored in increasing
particle number and each sector is ordered lexicographically, so the
fixed-``N`` basis used for exact states and the truncated Fock space used
for germ vectors share one indexing convention.
"""

from __future__ import annotations

import itertools
from functools import lru_cache, cached_property
from math import comb, factorial, lgamma

import numpy as np
import scipy.sparse as sp


def sector_states(M: int, n: int) -> tuple[tuple[int, ...], ...]:
    """All occupation tuples of ``M`` modes holding ``n`` bosons, lexicographic."""
    out = []
    for bars in itertools.combinations(range(n + M - 1), M - 1):
        prev = -1
        occ = []
        for b in bars:
            occ.append(b - prev - 1)
            prev = b
        occ.append(n + M - 2 - prev)
        out.append(tuple(occ))
    out.sort()
    return tuple(out)


def log_multinomial(occ) -> float:
    """``log(n! / prod(n_x!))`` for an occupation tuple."""
    n = sum(occ)
    return lgamma(n + 1) - sum(lgamma(k + 1) for k in occ)


class FockBasis:
    """Truncated bosonic Fock space over ``M`` modes with at most ``n_max`` quanta.

    Parameters
    ----------
    M : int
        Number of modes (lattice sites).
    n_max : int
        Largest particle number kept.

    Notes
    -----
    Instances are cached through :func:`fock_basis`; build them with that
    function so sparse operators are shared.
    """

    def __init__(self, M: int, n_max: int):
        if M < 1 or n_max < 0:
            raise ValueError("need M >= 1 and n_max >= 0")
        self.M = int(M)
        self.n_max = int(n_max)
        self.sectors = [sector_states(self.M, n) for n in range(self.n_max + 1)]
        self.offsets = np.cumsum([0] + [len(s) for s in self.sectors])
        self.dim = int(self.offsets[-1])
        self._index = [{occ: i for i, occ in enumerate(s)} for s in self.sectors]

    def __repr__(self):
        return f"FockBasis(M={self.M}, n_max={self.n_max}, dim={self.dim})"

    def sector_dim(self, n: int) -> int:
        return comb(n + self.M - 1, n)

    def sector_slice(self, n: int) -> slice:
        return slice(int(self.offsets[n]), int(self.offsets[n + 1]))

    def index(self, occ) -> int:
        """Global index of an occupation tuple."""
        n = sum(occ)
        return int(self.offsets[n]) + self._index[n][tuple(occ)]

    def local_index(self, occ) -> int:
        return self._index[sum(occ)][tuple(occ)]

    @cached_property
    def occupations(self) -> np.ndarray:
        """``(dim, M)`` integer array of all occupation tuples."""
        return np.array([occ for s in self.sectors for occ in s], dtype=np.int64).reshape(self.dim, self.M)

    @cached_property
    def number(self) -> np.ndarray:
        """Total particle number of every basis state."""
        return self.occupations.sum(axis=1)

    def creation_block(self, x: int, n: int) -> sp.csr_matrix:
        """``b+_x`` restricted to sector ``n -> n+1`` (shape ``D_{n+1} x D_n``)."""
        return _creation_block(self.M, x, n)

    def annihilation_block(self, x: int, n: int) -> sp.csr_matrix:
        """``b_x`` restricted to sector ``n -> n-1``."""
        return _creation_block(self.M, x, n - 1).T.tocsr()

    @cached_property
    def creation(self) -> list[sp.csr_matrix]:
        """``b+_x`` on the whole truncated space; the top sector maps to zero."""
        ops = []
        for x in range(self.M):
            rows, cols, vals = [], [], []
            for n in range(self.n_max):
                blk = self.creation_block(x, n).tocoo()
                rows.append(blk.row + self.offsets[n + 1])
                cols.append(blk.col + self.offsets[n])
                vals.append(blk.data)
            if rows:
                r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
            else:
                r = c = np.zeros(0, dtype=np.int64)
                v = np.zeros(0)
            ops.append(sp.csr_matrix((v, (r, c)), shape=(self.dim, self.dim)))
        return ops

    @cached_property
    def annihilation(self) -> list[sp.csr_matrix]:
        return [op.T.tocsr() for op in self.creation]

    def embed(self, vec: np.ndarray, other: "FockBasis") -> np.ndarray:
        """Copy amplitudes into a (possibly larger or smaller) basis with the same ``M``."""
        if other.M != self.M:
            raise ValueError("mode count mismatch")
        out = np.zeros(other.dim, dtype=np.result_type(vec, np.complex128))
        top = min(self.n_max, other.n_max)
        out[: other.offsets[top + 1]] = vec[: self.offsets[top + 1]]
        return out


@lru_cache(maxsize=64)
def fock_basis(M: int, n_max: int) -> FockBasis:
    """Cached :class:`FockBasis` constructor."""
    return FockBasis(M, n_max)


@lru_cache(maxsize=512)
def _creation_block(M: int, x: int, n: int) -> sp.csr_matrix:
    src = sector_states(M, n)
    dst = {occ: i for i, occ in enumerate(sector_states(M, n + 1))}
    rows = np.empty(len(src), dtype=np.int64)
    vals = np.empty(len(src))
    for j, occ in enumerate(src):
        up = list(occ)
        up[x] += 1
        rows[j] = dst[tuple(up)]
        vals[j] = np.sqrt(up[x])
    mat = sp.csr_matrix((vals, (rows, np.arange(len(src)))), shape=(len(dst), len(src)))
    return mat


def multinomial_weights(occs: np.ndarray) -> np.ndarray:
    """``sqrt(n!/prod n_x!)`` for each row of an occupation array."""
    return np.array([np.exp(0.5 * log_multinomial(row)) for row in occs])


def tensor_to_occupation(tensor: np.ndarray, n: int, M: int, h: float = 1.0) -> np.ndarray:
    """Symmetric rank-``n`` tensor over ``M`` sites to occupation amplitudes.

    Uses ``<m|g> = h^{n/2} sqrt(n!/prod m_x!) g(x(m))`` where ``x(m)`` is any
    ordered tuple with occupations ``m``; the map is an isometry from the
    symmetric tensors with measure ``h`` onto the sector.
    """
    occs = sector_states(M, n)
    out = np.empty(len(occs), dtype=np.complex128)
    for i, occ in enumerate(occs):
        idx = tuple(x for x, k in enumerate(occ) for _ in range(k))
        out[i] = tensor[idx] if n else tensor
        out[i] *= np.exp(0.5 * log_multinomial(occ))
    return out * h ** (0.5 * n)


def occupation_to_tensor(amps: np.ndarray, n: int, M: int, h: float = 1.0) -> np.ndarray:
    """Inverse of :func:`tensor_to_occupation`, returning the full symmetric tensor."""
    if n == 0:
        return np.asarray(amps[0], dtype=np.complex128)
    out = np.empty((M,) * n, dtype=np.complex128)
    scale = h ** (-0.5 * n)
    for idx in itertools.product(range(M), repeat=n):
        occ = tuple(np.bincount(idx, minlength=M))
        i = _local_index(M, occ)
        out[idx] = amps[i] * scale * np.exp(-0.5 * log_multinomial(occ))
    return out


@lru_cache(maxsize=256)
def _sector_lookup(M: int, n: int) -> dict:
    return {occ: i for i, occ in enumerate(sector_states(M, n))}


def _local_index(M: int, occ) -> int:
    return _sector_lookup(M, sum(occ))[tuple(int(k) for k in occ)]


def factorial_ratio(N: int, p: int) -> float:
    """``N! / (N - p)!`` as a float."""
    return float(factorial(N) // factorial(N - p))
