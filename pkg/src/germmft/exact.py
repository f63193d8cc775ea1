"""Exact ``N``-boson dynamics on the occupation basis.

Second-quantized assembly: a level-``l`` kernel of body order ``p`` enters
``H_N`` as ``N**(1-l) / (N**p p!) * sum k(x;y) b+_x1..b+_xp b_yp..b_y1`` with
the operator tensor ``k``.  Annihilation strings ``b_y1..b_yp`` from sector
``N`` to ``N - p`` are stacked into one sparse matrix ``E`` so that each kernel
contributes ``E^dagger (k (x) 1) E``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fock import SymmetricState
from .fockspace import _creation_block, sector_states
from .lattice import HamiltonianSpec, LatticeSpec, OneParticleState, PBodyKernel

DIM_CAP = 20000
DENSE_EXPM_MAX = 2000


@dataclass
class ExactOperator:
    """Operator on the sector of ``N`` bosons over ``M`` sites."""

    N: int
    M: int
    matrix: sp.csr_matrix
    lattice: LatticeSpec

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def hermiticity_error(self) -> float:
        d = self.matrix - self.matrix.getH()
        return float(abs(d).max()) if d.nnz else 0.0

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, psi):
        if isinstance(psi, SymmetricState):
            return SymmetricState(self.matrix @ psi.amp, self.N, self.lattice)
        return self.matrix @ psi


@dataclass
class CorrelatorTensor:
    """``k``-particle correlator ``R_k(x1..xk; y1..yk)`` in continuum normalization."""

    k: int
    tensor: np.ndarray
    h: float = 1.0

    def operator_matrix(self) -> np.ndarray:
        """Density matrix on the ``k``-fold lattice space (unit trace for unit states)."""
        n = self.tensor.shape[0] ** self.k
        return self.h**self.k * self.tensor.reshape(n, n)

    def trace(self) -> complex:
        return complex(np.trace(self.operator_matrix()))

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the density matrix in decreasing order."""
        rho = self.operator_matrix()
        return np.sort(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)))[::-1]


def sector_dim(M: int, N: int) -> int:
    return len(sector_states(M, N))


@lru_cache(maxsize=128)
def annihilation_strings(M: int, N: int, p: int) -> sp.csr_matrix:
    """Stacked ``b_y1 .. b_yp`` maps, shape ``(M**p * D_{N-p}, D_N)``, tuples in C order."""
    blocks = []
    for ys in itertools.product(range(M), repeat=p):
        op = sp.identity(sector_dim(M, N), format="csr")
        n = N
        for y in reversed(ys):
            op = _creation_block(M, y, n - 1).T @ op
            n -= 1
        blocks.append(op)
    return sp.vstack(blocks, format="csr")


def kernel_operator(T: np.ndarray, p: int, M: int, N: int) -> sp.csr_matrix:
    """``sum k(x;y) b+_x.. b_y..`` on sector ``N`` for an operator matrix ``T`` (``M^p x M^p``)."""
    D = sector_dim(M, N)
    if p > N:
        return sp.csr_matrix((D, D), dtype=np.complex128)
    E = annihilation_strings(M, N, p)
    Dl = sector_dim(M, N - p)
    K = sp.kron(sp.csr_matrix(np.asarray(T).reshape(M**p, M**p)), sp.identity(Dl), format="csr")
    return (E.T @ K @ E).tocsr()


def assemble_hamiltonian(spec: HamiltonianSpec, N: int, cap: int = DIM_CAP) -> ExactOperator:
    """Exact ``H_N`` on the ``N``-boson sector.

    Raises
    ------
    ValueError
        If the sector dimension exceeds ``cap``.
    """
    M = spec.lattice.M
    D = sector_dim(M, N)
    if D > cap:
        raise ValueError(f"sector dimension {D} above cap {cap}")
    H = sp.csr_matrix((D, D), dtype=np.complex128)
    for l in range(spec.k + 1):
        for ker in spec.level(l):
            w = float(N) ** (1 - l) / (float(N) ** ker.p * factorial(ker.p))
            H = H + w * kernel_operator(ker.operator_matrix(spec.h), ker.p, M, N)
    H = (0.5 * (H + H.getH())).tocsr()
    return ExactOperator(N, M, H, spec.lattice)


def evolve_exact(H: ExactOperator, psi0: SymmetricState, T: float, norm_tol: float = 1e-10) -> SymmetricState:
    """``exp(-i H T) psi0`` by dense scaling-and-squaring or, for large sectors, a Krylov action.

    Raises
    ------
    FloatingPointError
        If the norm drifts by more than ``norm_tol`` (relative).
    """
    if psi0.dim != H.dim:
        raise ValueError("state and operator dimensions differ")
    if T == 0:
        return SymmetricState(psi0.amp.copy(), psi0.N, psi0.lattice)
    if H.dim <= DENSE_EXPM_MAX:
        out = sla.expm(-1j * T * H.dense()) @ psi0.amp
    else:
        out = spla.expm_multiply(-1j * T * H.matrix, psi0.amp)
    n0 = psi0.norm()
    if abs(np.linalg.norm(out) - n0) > norm_tol * max(n0, 1.0):
        raise FloatingPointError("exact propagation lost unitarity")
    return SymmetricState(out, psi0.N, psi0.lattice)


class ExactPropagator:
    """Eigendecomposition of a (dense) Hermitian ``H_N`` for repeated evolution."""

    def __init__(self, H: ExactOperator):
        self.H = H
        self.evals, self.evecs = np.linalg.eigh(H.dense())

    def evolve(self, psi0: SymmetricState, t: float) -> SymmetricState:
        c = self.evecs.conj().T @ psi0.amp
        return SymmetricState(self.evecs @ (np.exp(-1j * self.evals * t) * c), psi0.N, psi0.lattice)


def correlator_k(psi: SymmetricState, k: int) -> CorrelatorTensor:
    """Unit-trace ``k``-particle correlator of a (unit) symmetric state.

    ``rho(x; y) = (N-k)!/N! <psi| b+_y.. b_x.. |psi>`` in operator form.

    Raises
    ------
    ValueError
        If ``k > N``.
    """
    N, M = psi.N, psi.M
    if not 0 < k <= N:
        raise ValueError("correlator order must satisfy 0 < k <= N")
    E = annihilation_strings(M, N, k)
    v = (E @ psi.amp).reshape(M**k, -1)
    rho = (v @ v.conj().T) * (factorial(N - k) / factorial(N))
    h = psi.lattice.h
    return CorrelatorTensor(k, (rho / h**k).reshape((M,) * (2 * k)), h)


def product_correlator(phi: OneParticleState, k: int = 1) -> CorrelatorTensor:
    """Correlator ``phi(x1)..phi(xk) conj(phi)(y1)..`` of a product state."""
    u = phi.unit
    w = u
    for _ in range(k - 1):
        w = np.kron(w, u)
    M, h = phi.lattice.M, phi.lattice.h
    return CorrelatorTensor(k, (np.outer(w, w.conj()) / h**k).reshape((M,) * (2 * k)), h)


def trace_distance(a: CorrelatorTensor, b: CorrelatorTensor) -> float:
    """Trace norm of the difference of the two density matrices."""
    d = a.operator_matrix() - b.operator_matrix()
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def chaos_distance(psi: SymmetricState, phi: OneParticleState):
    """``min_c ||psi - c phi^N|| = sqrt(1 - |<phi^N, psi>|^2)`` and the minimizer ``c``."""
    prod = SymmetricState.product(phi, psi.N)
    c = prod.inner(psi)
    return float(np.sqrt(max(0.0, psi.norm() ** 2 - abs(c) ** 2))), c


def special_observable_mean(psi: SymmetricState, kernels, N: int | None = None) -> complex:
    """``<psi, A_N psi>`` for ``A_N = sum_p (1/(N^p p!)) sum_{i1!=..!=ip} A^(p)``."""
    N = psi.N if N is None else N
    h = psi.lattice.h
    out = 0j
    for ker in kernels:
        if not isinstance(ker, PBodyKernel):
            raise TypeError("kernels must be PBodyKernel instances")
        if ker.p > N:
            raise ValueError("kernel body order exceeds N")
        op = kernel_operator(ker.operator_matrix(h), ker.p, psi.M, psi.N)
        out += np.vdot(psi.amp, op @ psi.amp) / (float(N) ** ker.p * factorial(ker.p))
    return complex(out)


def residual_norm(spec, state_at, t: float, delta: float = 1e-2, stencil: int = 5,
                  rtol: float = 5e-3, atol: float = 1e-9, max_halvings: int = 12, return_delta: bool = False):
    """``||i dPsi/dt - H Psi||`` at ``t`` via finite differences of ``state_at``.

    ``spec`` is a :class:`HamiltonianSpec` or an :class:`ExactOperator`.  The
    step is halved until two successive estimates agree to ``rtol``
    (relative), i.e. two significant digits by default, or until the estimate
    drops below ``atol * max(1, ||H Psi||)`` where only roundoff remains.

    Raises
    ------
    ArithmeticError
        If the refinement does not settle.
    """
    psi_t = state_at(t)
    H = spec if isinstance(spec, ExactOperator) else assemble_hamiltonian(spec, psi_t.N)
    Hpsi = H.matrix @ psi_t.amp
    floor = atol * max(1.0, float(np.linalg.norm(Hpsi)))

    def estimate(d):
        if stencil == 3:
            deriv = (state_at(t + d).amp - state_at(t - d).amp) / (2 * d)
        else:
            deriv = (state_at(t - 2 * d).amp - 8 * state_at(t - d).amp
                     + 8 * state_at(t + d).amp - state_at(t + 2 * d).amp) / (12 * d)
        return float(np.linalg.norm(1j * deriv - Hpsi))

    prev = estimate(delta)
    d = delta
    for _ in range(max_halvings):
        d /= 2
        cur = estimate(d)
        if abs(cur - prev) <= rtol * max(cur, 1e-300) or cur < floor:
            return (cur, d) if return_delta else cur
        prev = cur
    raise ArithmeticError("finite-difference refinement did not converge")
