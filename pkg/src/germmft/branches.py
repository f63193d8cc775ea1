"""Operator-valued symbols: eigen-branches, branch flows, branch phases and superpositions.

Kernels carry a finite internal index: an operator tensor of body order ``p``
has shape ``(d, d) + (M,) * 2p``.  Contracting it with the condensate gives the
``d x d`` Hermitian symbol ``H_l(phi)``.  An isolated eigenvalue
``lambda(phi)`` of the level-0 symbol is a scalar functional.  Its Hartree flow,
germ and phase come from the machinery of the scalar case, fed with the
derivatives of ``lambda``:

* gradient by Hellmann-Feynman, ``<zeta, dH/dconj(phi) zeta>``;
* Hessian by second-order perturbation theory with the reduced resolvent
  ``G = (lambda - H)^{-1} (1 - Pi)``;
* the O(1) phase picks up ``sum_x <zeta, dH/dphi_x G dH/dconj(phi)_x zeta>``
  and the Berry term ``i <zeta, dzeta/dt>``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from .exact import CorrelatorTensor, annihilation_strings, correlator_k, sector_dim
from .corrections import assemble_leading
from .fock import SymmetricState
from .lattice import HamiltonianSpec, LatticeSpec, OneParticleState, contract
from .meanfield import FlowConfig, GermTrajectory, Symbol, germ_trajectory

GAP_MIN = 1e-6


class BranchCollisionError(ValueError):
    """The tracked eigenvalue came closer than ``gap_min`` to another one."""


# ---------------------------------------------------------------------------
# operator-valued specs


@dataclass(frozen=True)
class InternalSpace:
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("internal dimension must be a positive integer")


@dataclass
class OperatorValuedSpec:
    """Leveled operator-valued kernels in operator form.

    Parameters
    ----------
    lattice : LatticeSpec
    d : int
        Internal dimension.
    levels : sequence of sequences of (p, tensor)
        ``tensor`` has shape ``(d, d) + (M,) * 2p`` and is already in operator
        form (local kernels expanded, block symmetric).
    source : dict
        Free-form record of how the kernels were built.
    """

    lattice: LatticeSpec
    d: int
    levels: tuple
    source: dict = field(default_factory=dict)
    herm_tol: float = 1e-10

    def __post_init__(self):
        InternalSpace(self.d)
        M = self.lattice.M
        lv_out = []
        for lv in self.levels:
            terms = []
            for p, T in lv:
                T = np.asarray(T, dtype=np.complex128)
                if T.shape != (self.d, self.d) + (M,) * (2 * p):
                    raise ValueError(f"kernel of order {p} has shape {T.shape}")
                n = self.d * M**p
                mat = np.moveaxis(T, 1, p + 1).reshape(n, n)
                err = float(np.max(np.abs(mat - mat.conj().T))) if n else 0.0
                if err > self.herm_tol * max(1.0, float(np.max(np.abs(mat)))):
                    raise ValueError(f"operator-valued kernel of order {p} not Hermitian (defect {err:.2e})")
                terms.append((int(p), T))
            lv_out.append(tuple(terms))
        self.levels = tuple(lv_out) or ((),)

    @property
    def h(self) -> float:
        return self.lattice.h

    @property
    def k(self) -> int:
        return len(self.levels) - 1

    @property
    def M(self) -> int:
        return self.lattice.M

    def op_tensors(self, l: int):
        return self.levels[l] if 0 <= l < len(self.levels) else ()

    @classmethod
    def from_scalar(cls, spec: HamiltonianSpec, d: int, extra=()) -> "OperatorValuedSpec":
        """Scalar kernels times the internal identity, plus ``extra`` ``(level, p, tensor)`` terms."""
        eye = np.eye(d)
        levels = []
        for l in range(spec.k + 1):
            levels.append([(p, np.multiply.outer(eye, T)) for p, T in spec.op_tensors(l)])
        for l, p, T in extra:
            while len(levels) <= l:
                levels.append([])
            levels[l].append((p, T))
        return cls(spec.lattice, d, tuple(tuple(lv) for lv in levels), dict(base=spec))


def contract_ov(T: np.ndarray, p: int, m: int, s: int, u: np.ndarray) -> np.ndarray:
    """Operator-valued :func:`contract`; output axes ``(x.., y.., I, J)``."""
    d = T.shape[0]
    first = contract(T[0, 0], p, m, s, u)
    out = np.empty(np.shape(first) + (d, d), dtype=np.complex128)
    for i in range(d):
        for j in range(d):
            out[..., i, j] = first if (i == 0 and j == 0) else contract(T[i, j], p, m, s, u)
    return out


def h0_internal(spec: OperatorValuedSpec, phi, level: int = 0, check: bool = True) -> np.ndarray:
    """Internal symbol ``H_l(phi) = sum_p (1/p!) <phi^p, k_p phi^p>`` as a ``d x d`` matrix.

    Raises
    ------
    ValueError
        If the result is not Hermitian to ``1e-12`` (relative).
    """
    u = _unit(spec, phi)
    H = np.zeros((spec.d, spec.d), dtype=np.complex128)
    for p, T in spec.op_tensors(level):
        H += contract_ov(T, p, 0, 0, u) / factorial(p)
    if check:
        err = float(np.max(np.abs(H - H.conj().T)))
        if err > 1e-12 * max(1.0, float(np.max(np.abs(H)))):
            raise ValueError(f"internal symbol not Hermitian (defect {err:.2e})")
    return 0.5 * (H + H.conj().T)


def symbol_derivatives(spec: OperatorValuedSpec, u: np.ndarray):
    """First and second derivatives of the level-0 internal symbol.

    Returns ``(Hb, Hf, Hbf, Hbb, Hff)`` with spatial axes first and internal
    axes last: ``Hb[x] = dH/dconj(u_x)``, ``Hf[y] = dH/du_y``, ``Hbf[x, y]``,
    ``Hbb[x, y]`` and ``Hff[x, y]`` the mixed, conjugate-conjugate and plain
    second derivatives.
    """
    M, d = spec.M, spec.d
    Hb = np.zeros((M, d, d), dtype=np.complex128)
    Hf = np.zeros_like(Hb)
    Hbf = np.zeros((M, M, d, d), dtype=np.complex128)
    Hbb = np.zeros_like(Hbf)
    Hff = np.zeros_like(Hbf)
    for p, T in spec.op_tensors(0):
        if p == 0:
            continue
        Hb += contract_ov(T, p, 1, 0, u) / factorial(p - 1)
        Hf += contract_ov(T, p, 0, 1, u) / factorial(p - 1)
        Hbf += p * contract_ov(T, p, 1, 1, u) / factorial(p - 1)
        if p >= 2:
            w = p * (p - 1) / factorial(p)
            Hbb += w * contract_ov(T, p, 2, 0, u)
            Hff += w * contract_ov(T, p, 0, 2, u)
    return Hb, Hf, Hbf, Hbb, Hff


def _unit(spec, phi) -> np.ndarray:
    if isinstance(phi, OneParticleState):
        return phi.unit
    return np.sqrt(spec.h) * np.asarray(phi, dtype=np.complex128)


# ---------------------------------------------------------------------------
# eigen-branches


def _fix_phase_largest(z: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(z)))
    return z * (abs(z[k]) / z[k])


def eigenbranch(H0: np.ndarray, prev_zeta: np.ndarray | None = None, index: int | None = None,
                gap_min: float = GAP_MIN):
    """Isolated eigenpair ``(lambda, zeta)`` of a Hermitian matrix.

    With ``prev_zeta`` the eigenvector of largest overlap is chosen and its
    phase makes ``<prev_zeta, zeta>`` real and positive (discrete parallel
    transport).  Otherwise ``index`` selects the eigenvalue in ascending order
    and the largest-magnitude component is made real and positive.

    Raises
    ------
    BranchCollisionError
        If the selected eigenvalue is closer than ``gap_min`` to another.
    """
    H0 = np.asarray(H0, dtype=np.complex128)
    vals, vecs = np.linalg.eigh(0.5 * (H0 + H0.conj().T))
    if prev_zeta is not None:
        k = int(np.argmax(np.abs(vecs.conj().T @ prev_zeta)))
    elif index is not None:
        k = int(index)
    else:
        raise ValueError("need prev_zeta or index")
    gap = branch_gap(vals, k)
    if gap < gap_min:
        raise BranchCollisionError(f"branch {k} gap {gap:.3e} below {gap_min:.1e}")
    z = vecs[:, k]
    if prev_zeta is not None:
        ov = np.vdot(prev_zeta, z)
        z = z * (abs(ov) / ov) if ov != 0 else z
    else:
        z = _fix_phase_largest(z)
    return float(vals[k]), z


def branch_gap(vals: np.ndarray, k: int) -> float:
    others = np.delete(vals, k)
    return float(np.min(np.abs(others - vals[k]))) if len(others) else np.inf


def two_level_closed_form(H: np.ndarray, H00: float = 0.0):
    """Eigenvalues and eigenvectors of ``H00 + [[H11, H12], [H21, H22]]`` in closed form.

    Returns ``(lam_plus, lam_minus, beta, zeta_plus, zeta_minus)`` with
    ``beta = sqrt(((H11 - H22)/2)^2 + H12 H21)``,
    ``zeta = a (H12, (H22 - H11)/2 +- beta)`` and
    ``a^{-2} = 2 beta ((H22 - H11)/2 +- beta)``.
    """
    H11, H12, H21, H22 = (complex(H[i, j]) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    beta = np.sqrt(((H11 - H22) / 2) ** 2 + H12 * H21)
    mid = (H11 + H22) / 2
    out = []
    for sgn in (1, -1):
        b = (H22 - H11) / 2 + sgn * beta
        a = 1 / np.sqrt(2 * beta * b)
        out.append(np.array([a * H12, a * b]))
    return (float((H00 + mid + beta).real), float((H00 + mid - beta).real), float(beta.real), out[0], out[1])


def branch_symbol(spec: OperatorValuedSpec, index: int, gap_min: float = GAP_MIN):
    """Symbol of the ``index``-th eigenvalue (ascending) as a scalar functional.

    The phase density is ``(1/2) sum kmm r + <zeta, H_1 zeta> + X`` with
    ``X = sum_x <zeta, dH/du_x G dH/dconj(u_x) zeta>``; the Berry term is
    accumulated separately from the gauge-fixed eigenvectors.
    """

    def sym(u: np.ndarray) -> Symbol:
        H = h0_internal(spec, u, 0, check=False)
        vals, vecs = np.linalg.eigh(H)
        gap = branch_gap(vals, index)
        if gap < gap_min:
            raise BranchCollisionError(f"branch {index} gap {gap:.3e} below {gap_min:.1e}")
        lam = float(vals[index])
        z = vecs[:, index]
        inv = np.array([0.0 if k == index else 1.0 / (lam - vals[k]) for k in range(len(vals))])
        G = (vecs * inv) @ vecs.conj().T
        Hb, Hf, Hbf, Hbb, Hff = symbol_derivatives(spec, u)
        zb = Hb @ z                      # (M, d): dH/dconj(u_x) zeta
        grad = zb @ z.conj()
        kpm = np.einsum("i,xyij,j->xy", z.conj(), Hbf, z) + _sandwich(z, Hb, G, Hf) + _sandwich(z, Hf, G, Hb).T
        kpp = np.einsum("i,xyij,j->xy", z.conj(), Hbb, z) + _sandwich(z, Hb, G, Hb) + _sandwich(z, Hb, G, Hb).T
        kmm = np.einsum("i,xyij,j->xy", z.conj(), Hff, z) + _sandwich(z, Hf, G, Hf) + _sandwich(z, Hf, G, Hf).T
        X = float(np.real(np.trace(_sandwich(z, Hf, G, Hb))))
        h1 = 0.0
        if spec.k >= 1:
            h1 = float(np.real(np.vdot(z, h0_internal(spec, u, 1, check=False) @ z)))

        def density(r, kmm=kmm, h1=h1, X=X):
            return 0.5 * np.sum(kmm * r) + h1 + X

        return Symbol(lam, grad, kpm, kpp, kmm, density)

    return sym


def _sandwich(z, A, G, B) -> np.ndarray:
    """``S[x, y] = <zeta, A[x] G B[y] zeta>``."""
    left = np.einsum("i,xij->xj", z.conj(), A)
    right = B @ z
    return left @ G @ right.T


# ---------------------------------------------------------------------------
# branch flows


@dataclass
class BranchState:
    """One branch at one time: eigenpair, germ data and accumulated phase exponent."""

    branch_id: int
    lam: float
    zeta: np.ndarray
    germ: object
    Gamma: complex
    gap: float

    def check(self, spec: OperatorValuedSpec, tol: float = 1e-9, gap_min: float = GAP_MIN) -> None:
        H = h0_internal(spec, self.germ.phi)
        if abs(np.linalg.norm(self.zeta) - 1) > tol:
            raise ValueError("internal vector not normalized")
        if np.linalg.norm(H @ self.zeta - self.lam * self.zeta) > tol:
            raise ValueError("internal vector is not an eigenvector")
        if self.gap < gap_min:
            raise BranchCollisionError("gap below minimum")


@dataclass
class BranchTrajectory:
    """Germ trajectory of one branch with gauge-fixed eigenvectors and phases on the grid.

    ``berry[i]`` is ``int i <zeta, dzeta/dt>`` accumulated as
    ``-sum arg <zeta_n, zeta_{n+1}>``, so it accounts for whatever gauge the
    stored ``zeta`` carry.
    """

    spec: OperatorValuedSpec
    branch_id: int
    germ: GermTrajectory
    lam: np.ndarray
    zeta: np.ndarray
    gap: np.ndarray
    berry: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.germ.t

    def phase(self, i: int) -> complex:
        """``c~ = c exp(i berry)``, the O(1) phase of the branch."""
        return complex(self.germ.c[i] * np.exp(1j * self.berry[i]))

    def Gamma_integral(self, i: int) -> complex:
        """``int_0^t Gamma`` such that the O(1) phase is ``exp(i int Gamma)``."""
        return complex(-self.germ.w[i] + self.berry[i])

    def state(self, i: int) -> BranchState:
        return BranchState(self.branch_id, float(self.lam[i]), self.zeta[i], self.germ.state(i),
                           self.Gamma_integral(i), float(self.gap[i]))

    def min_gauge_overlap(self) -> float:
        return float(min(np.real(np.vdot(a, b)) for a, b in zip(self.zeta[:-1], self.zeta[1:])))


def branch_hartree_flow(spec: OperatorValuedSpec, branch_id: int, phi0, cfg: FlowConfig = FlowConfig(),
                        gap_min: float = GAP_MIN) -> BranchTrajectory:
    """Hartree-like flow of one eigenvalue branch with its germ data and phases.

    Raises
    ------
    BranchCollisionError
        When the gap closes anywhere on the grid or at a stage point.
    """
    sym = branch_symbol(spec, branch_id, gap_min)
    germ = germ_trajectory(spec, phi0, cfg, sym_fn=sym)
    n = germ.n
    lam = np.empty(n + 1)
    gap = np.empty(n + 1)
    zeta = np.empty((n + 1, spec.d), dtype=np.complex128)
    z = None
    for i, u in enumerate(germ.phi_u):
        H = h0_internal(spec, u, 0, check=False)
        if z is None:
            lam[i], z = eigenbranch(H, index=branch_id, gap_min=gap_min)
        else:
            lam[i], z = eigenbranch(H, prev_zeta=z, gap_min=gap_min)
        gap[i] = branch_gap(np.linalg.eigvalsh(H), branch_id)
        zeta[i] = z
    steps = np.array([np.angle(np.vdot(a, b)) for a, b in zip(zeta[:-1], zeta[1:])])
    berry = -np.concatenate([[0.0], np.cumsum(steps)])
    return BranchTrajectory(spec, branch_id, germ, lam, zeta, gap, berry)


def gamma_phase(spec: OperatorValuedSpec, traj: BranchTrajectory) -> np.ndarray:
    """``int_0^t Gamma`` on the grid: the exponent of the branch's O(1) phase factor."""
    return np.array([traj.Gamma_integral(i) for i in range(len(traj.t))])


# ---------------------------------------------------------------------------
# states with an internal index


@dataclass
class InternalState:
    """Element of ``C^d (x) Sym_N``: ``amp[I]`` is the symmetric state of internal component ``I``."""

    amp: np.ndarray
    N: int
    lattice: LatticeSpec

    @property
    def d(self) -> int:
        return self.amp.shape[0]

    def flat(self) -> np.ndarray:
        return self.amp.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amp))

    def inner(self, other: "InternalState") -> complex:
        return complex(np.vdot(self.amp, other.amp))

    def distance(self, other: "InternalState") -> float:
        return float(np.linalg.norm(self.amp - other.amp))

    def __add__(self, other):
        return InternalState(self.amp + other.amp, self.N, self.lattice)

    def __mul__(self, z):
        return InternalState(self.amp * z, self.N, self.lattice)

    __rmul__ = __mul__

    def block(self, I: int) -> SymmetricState:
        return SymmetricState(self.amp[I], self.N, self.lattice)

    @classmethod
    def from_flat(cls, v: np.ndarray, d: int, N: int, lattice: LatticeSpec) -> "InternalState":
        return cls(np.asarray(v, dtype=np.complex128).reshape(d, -1), N, lattice)

    @classmethod
    def product(cls, xi: np.ndarray, phi: OneParticleState, N: int) -> "InternalState":
        psi = SymmetricState.product(phi, N)
        return cls(np.outer(np.asarray(xi, dtype=np.complex128), psi.amp), N, phi.lattice)


def assemble_branch_asymptotic(traj: BranchTrajectory, i: int, N: int, tol: float = 1e-13) -> InternalState:
    """``c~ e^{iNS} zeta (x) K^N Phi_R`` at grid node ``i``."""
    st = traj.germ.state(i)
    psi = assemble_leading(st, N=N, tol=tol)
    amp = np.outer(traj.zeta[i], psi.amp) * np.exp(1j * traj.berry[i])
    return InternalState(amp, N, st.phi.lattice)


def superposition_weights(zetas0, xi: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Coefficients of ``xi`` in the initial eigenvectors ``zetas0``.

    Raises
    ------
    ValueError
        If ``xi`` is not reproduced by the listed eigenvectors to ``tol``.
    """
    Z = np.array(zetas0).T
    w = Z.conj().T @ np.asarray(xi, dtype=np.complex128)
    if np.linalg.norm(Z @ w - xi) > tol * max(1.0, np.linalg.norm(xi)):
        raise ValueError("initial internal vector not in the span of the chosen branches")
    return w


def superpose_branches(branches, weights, i: int, N: int) -> InternalState:
    """``sum_J w_J (branch J asymptotics)`` at grid node ``i``."""
    out = None
    for tr, w in zip(branches, weights):
        term = assemble_branch_asymptotic(tr, i, N) * w
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# examples


def build_two_level(spec_scalar: HamiltonianSpec, B) -> OperatorValuedSpec:
    """Scalar Hamiltonian on the internal identity plus the one-body coupling ``sum_i B(x_i)``.

    ``B`` has shape ``(M, 2, 2)`` (one Hermitian matrix per site), expressed
    in the units of ``H / hbar`` like the scalar kernels.

    Raises
    ------
    ValueError
        If any ``B(x)`` is not Hermitian.
    """
    B = np.asarray(B, dtype=np.complex128)
    M = spec_scalar.lattice.M
    if B.shape != (M, 2, 2):
        raise ValueError("B must have shape (M, 2, 2)")
    if np.max(np.abs(B - np.conj(np.transpose(B, (0, 2, 1))))) > 1e-12:
        raise ValueError("coupling matrices must be Hermitian")
    T = np.zeros((2, 2, M, M), dtype=np.complex128)
    for x in range(M):
        T[:, :, x, x] = B[x]
    ov = OperatorValuedSpec.from_scalar(spec_scalar, 2, extra=[(0, 1, T)])
    ov.source.update(kind="two_level", B=B)
    return ov


def y_laplacian(n: int, hy: float) -> np.ndarray:
    """Periodic second difference on ``n`` points (zero for a single point)."""
    lap = np.zeros((n, n))
    if n == 1:
        return lap
    for a in range(n):
        lap[a, a] -= 2
        lap[a, (a + 1) % n] += 1
        lap[a, (a - 1) % n] += 1
    return lap / hy**2


def build_extra_particle(spec_scalar: HamiltonianSpec, U_y, V_xy, Mass: float, y_sites: int,
                         hy: float = 1.0) -> OperatorValuedSpec:
    """``N`` bosons coupled to one extra particle on a ``y_sites``-point grid.

    The internal space is the extra particle's position.  Its kinetic and
    potential energy enter with weight ``N`` (a zero-body kernel), the
    coupling ``sum_i V(x_i, y)`` as a one-body kernel diagonal in ``y``:

        H_0(phi) = H_0^0 + (1/hbar)(-hbar^2/(2 Mass) Lap_y + U(y) + sum_x h V(x, y) |phi(x)|^2).

    Raises
    ------
    ValueError
        If sizes do not match or ``y_sites > 8``.
    """
    if not 1 <= y_sites <= 8:
        raise ValueError("y grid limited to 1..8 points")
    hbar = spec_scalar.hbar
    M = spec_scalar.lattice.M
    U_y = np.asarray(U_y, dtype=float)
    V_xy = np.asarray(V_xy, dtype=float)
    if U_y.shape != (y_sites,) or V_xy.shape != (M, y_sites):
        raise ValueError("U_y must have shape (y_sites,) and V_xy shape (M, y_sites)")
    k0 = (-(hbar**2) / (2 * Mass) * y_laplacian(y_sites, hy) + np.diag(U_y)) / hbar
    T1 = np.zeros((y_sites, y_sites, M, M), dtype=np.complex128)
    for x in range(M):
        T1[:, :, x, x] = np.diag(V_xy[x]) / hbar
    ov = OperatorValuedSpec.from_scalar(spec_scalar, y_sites, extra=[(0, 0, k0.astype(np.complex128)), (0, 1, T1)])
    ov.source.update(kind="extra_particle", U_y=U_y, V_xy=V_xy, Mass=Mass, hy=hy)
    return ov


# ---------------------------------------------------------------------------
# exact dynamics with an internal index


def assemble_ov_hamiltonian(spec: OperatorValuedSpec, N: int, cap: int = 40000) -> sp.csr_matrix:
    """Exact ``H_N`` on ``C^d (x) Sym_N`` (internal index major)."""
    M, d = spec.M, spec.d
    D = sector_dim(M, N)
    if d * D > cap:
        raise ValueError(f"dimension {d * D} above cap {cap}")
    H = sp.csr_matrix((d * D, d * D), dtype=np.complex128)
    for l in range(spec.k + 1):
        for p, T in spec.op_tensors(l):
            w = float(N) ** (1 - l) / (float(N) ** p * factorial(p))
            if p == 0:
                H = H + w * sp.kron(sp.csr_matrix(T), sp.identity(D), format="csr")
                continue
            if p > N:
                continue
            E = annihilation_strings(M, N, p)
            Dl = sector_dim(M, N - p)
            n = M**p
            for I in range(d):
                for J in range(d):
                    blk = T[I, J].reshape(n, n)
                    if not np.any(blk):
                        continue
                    K = sp.kron(sp.csr_matrix(blk), sp.identity(Dl), format="csr")
                    unit = sp.csr_matrix(([1.0], ([I], [J])), shape=(d, d))
                    H = H + w * sp.kron(unit, (E.T @ K @ E), format="csr")
    return (0.5 * (H + H.getH())).tocsr()


def evolve_ov_exact(H: sp.csr_matrix, psi0: InternalState, t: float) -> InternalState:
    """``exp(-i H t) psi0``, dense for small systems and by Krylov action otherwise."""
    v = psi0.flat()
    if H.shape[0] <= 2000:
        out = expm(-1j * t * H.toarray()) @ v
    else:
        out = expm_multiply(-1j * t * H, v)
    return InternalState.from_flat(out, psi0.d, psi0.N, psi0.lattice)


def branch_correlator(psi: InternalState, k: int = 1) -> CorrelatorTensor:
    """Correlator summed over the internal index (unit trace for unit states)."""
    total = None
    for I in range(psi.d):
        blk = psi.block(I)
        if blk.norm() == 0:
            continue
        c = correlator_k(blk, k)
        total = c.tensor if total is None else total + c.tensor
    return CorrelatorTensor(k, total, psi.lattice.h)


def write_branch_csv(rows, path) -> None:
    """Rows ``(t, branch, lambda, gap, phi_split, second_eigenvalue, distances...)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "branch", "lambda", "gap", "phi_split", "correlator_second_eigenvalue", "exact_distance"])
        for r in rows:
            w.writerow(r)
