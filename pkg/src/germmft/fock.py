"""Fock vectors over the lattice, germ vacuum, germ creation operators and the canonical embedding.

A :class:`FockVector` stores the components ``g_n`` of an element of the
truncated Fock space as occupation amplitudes,

    <m|g> = h^{n/2} sqrt(n!/prod m_x!) g_n(x(m)),

which makes the Fock norm ``sum_n ||g_n||^2`` the Euclidean norm of the
amplitude array.  Lattice creation operators ``b+_x = sqrt(h) a+(x)`` act on
that array as sparse matrices.  The same occupation basis, restricted to one
sector, carries the exact ``N``-particle states (:class:`SymmetricState`).
"""

from __future__ import annotations

from math import lgamma, log

import numpy as np

from .fockspace import FockBasis, _creation_block, fock_basis, occupation_to_tensor, sector_states, tensor_to_occupation
from .lattice import LatticeSpec, OneParticleState

HARD_CAP = 48


class FockVector:
    """Element of the truncated Fock space based at a condensate ``phi``.

    Parameters
    ----------
    data : ndarray
        Occupation amplitudes over ``fock_basis(M, n_max)``.
    n_max : int
        Truncation order.
    phi : OneParticleState
        Base condensate; members of ``F_phi`` are orthogonal to it in every slot.
    """

    def __init__(self, data, n_max: int, phi: OneParticleState):
        self.phi = phi
        self.basis: FockBasis = fock_basis(phi.lattice.M, int(n_max))
        data = np.asarray(data, dtype=np.complex128)
        if data.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} amplitudes, got {data.shape}")
        self.data = data

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, phi: OneParticleState, n_max: int) -> "FockVector":
        return cls(np.zeros(fock_basis(phi.lattice.M, n_max).dim), n_max, phi)

    @classmethod
    def vacuum(cls, phi: OneParticleState, n_max: int = 0) -> "FockVector":
        out = cls.zeros(phi, n_max)
        out.data[0] = 1.0
        return out

    @classmethod
    def from_components(cls, comps, phi: OneParticleState) -> "FockVector":
        """Build from symmetric continuum tensors ``comps[n]`` of rank ``n``."""
        lat = phi.lattice
        n_max = len(comps) - 1
        basis = fock_basis(lat.M, n_max)
        data = np.zeros(basis.dim, dtype=np.complex128)
        for n, g in enumerate(comps):
            data[basis.sector_slice(n)] = tensor_to_occupation(np.asarray(g, dtype=np.complex128), n, lat.M, lat.h)
        return cls(data, n_max, phi)

    # accessors ----------------------------------------------------------
    @property
    def M(self) -> int:
        return self.basis.M

    @property
    def n_max(self) -> int:
        return self.basis.n_max

    @property
    def h(self) -> float:
        return self.phi.lattice.h

    def sector(self, n: int) -> np.ndarray:
        if n > self.n_max:
            return np.zeros(self.basis.sector_dim(n) if n >= 0 else 0, dtype=np.complex128)
        return self.data[self.basis.sector_slice(n)]

    def component(self, n: int) -> np.ndarray:
        """Component ``g_n`` as a full symmetric continuum tensor of rank ``n``."""
        return occupation_to_tensor(self.sector(n), n, self.M, self.h)

    @property
    def comps(self) -> "_Components":
        """Lazy sequence of components; ``comps[n]`` builds the rank-``n`` tensor on access."""
        return _Components(self)

    def sector_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(self.sector(n)) for n in range(self.n_max + 1)])

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def inner(self, other: "FockVector") -> complex:
        top = max(self.n_max, other.n_max)
        return complex(np.vdot(self.padded(top).data, other.padded(top).data))

    def padded(self, n_max: int) -> "FockVector":
        """Same vector in another truncation (components above ``n_max`` dropped)."""
        if n_max == self.n_max:
            return self
        other = fock_basis(self.M, n_max)
        return FockVector(self.basis.embed(self.data, other), n_max, self.phi)

    def copy(self) -> "FockVector":
        return FockVector(self.data.copy(), self.n_max, self.phi)

    def orthogonality_residual(self) -> float:
        """Largest amplitude of ``a[phi]`` applied to the vector (zero on ``F_phi``)."""
        B = annihilator_of(self.phi.unit, self.basis)
        return float(np.max(np.abs(B @ self.data), initial=0.0))

    # arithmetic ---------------------------------------------------------
    def _binary(self, other, sign):
        top = max(self.n_max, other.n_max)
        return FockVector(self.padded(top).data + sign * other.padded(top).data, top, self.phi)

    def __add__(self, other):
        return self._binary(other, 1.0)

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __mul__(self, z):
        return FockVector(self.data * z, self.n_max, self.phi)

    __rmul__ = __mul__

    def __repr__(self):
        return f"FockVector(M={self.M}, n_max={self.n_max}, norm={self.norm():.6g})"

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "h": float(self.h),
            "n_max": self.n_max,
            "phi": {"re": self.phi.amp.real.tolist(), "im": self.phi.amp.imag.tolist()},
            "amplitudes": _amps_to_dict(self.basis.occupations, self.data),
        }

    @classmethod
    def from_dict(cls, doc: dict, lattice: LatticeSpec | None = None) -> "FockVector":
        lat = lattice or LatticeSpec(int(doc["M"]), float(doc["h"]))
        phi = OneParticleState(np.asarray(doc["phi"]["re"]) + 1j * np.asarray(doc["phi"]["im"]), lat)
        basis = fock_basis(lat.M, int(doc["n_max"]))
        return cls(_amps_from_dict(doc["amplitudes"], basis.index, basis.dim), basis.n_max, phi)


class _Components:
    def __init__(self, g: FockVector):
        self._g = g

    def __len__(self):
        return self._g.n_max + 1

    def __getitem__(self, n):
        if not 0 <= n <= self._g.n_max:
            raise IndexError(n)
        return self._g.component(n)


class SymmetricState:
    """Exact bosonic ``N``-particle state over the sector-``N`` occupation basis.

    ``amp[i] = h^{N/2} sqrt(N!/prod n_x!) Psi(x(n_i))`` for the symmetric wave
    function ``Psi``; the basis is lexicographically ordered.
    """

    def __init__(self, amp, N: int, lattice: LatticeSpec):
        self.N = int(N)
        self.lattice = lattice
        amp = np.asarray(amp, dtype=np.complex128)
        self.basis = sector_states(lattice.M, self.N)
        if amp.shape != (len(self.basis),):
            raise ValueError(f"expected {len(self.basis)} amplitudes")
        self.amp = amp

    @property
    def M(self) -> int:
        return self.lattice.M

    @property
    def dim(self) -> int:
        return len(self.amp)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amp))

    def inner(self, other: "SymmetricState") -> complex:
        return complex(np.vdot(self.amp, other.amp))

    def normalized(self) -> "SymmetricState":
        return SymmetricState(self.amp / self.norm(), self.N, self.lattice)

    def __add__(self, other):
        return SymmetricState(self.amp + other.amp, self.N, self.lattice)

    def __sub__(self, other):
        return SymmetricState(self.amp - other.amp, self.N, self.lattice)

    def __mul__(self, z):
        return SymmetricState(self.amp * z, self.N, self.lattice)

    __rmul__ = __mul__

    def distance(self, other: "SymmetricState") -> float:
        return float(np.linalg.norm(self.amp - other.amp))

    @classmethod
    def product(cls, phi: OneParticleState, N: int) -> "SymmetricState":
        """``phi^{(x)N}`` in occupation form."""
        u = phi.unit
        occs = np.array(sector_states(phi.lattice.M, N))
        logw = 0.5 * (lgamma(N + 1) - np.sum([[lgamma(k + 1) for k in row] for row in occs], axis=1))
        amp = np.exp(logw) * np.prod(u[None, :] ** occs, axis=1)
        return cls(amp, N, phi.lattice)

    def to_tensor(self) -> np.ndarray:
        """Full first-quantized tensor ``Psi(x1..xN)`` (small ``N`` only)."""
        return occupation_to_tensor(self.amp, self.N, self.M, self.lattice.h)

    @classmethod
    def from_tensor(cls, psi: np.ndarray, lattice: LatticeSpec) -> "SymmetricState":
        N = psi.ndim
        return cls(tensor_to_occupation(psi, N, lattice.M, lattice.h), N, lattice)

    def to_dict(self) -> dict:
        occs = np.array(self.basis).reshape(len(self.basis), self.M)
        return {"N": self.N, "M": self.M, "h": float(self.lattice.h), "amplitudes": _amps_to_dict(occs, self.amp)}

    @classmethod
    def from_dict(cls, doc: dict, lattice: LatticeSpec | None = None) -> "SymmetricState":
        lat = lattice or LatticeSpec(int(doc["M"]), float(doc["h"]))
        N = int(doc["N"])
        lookup = {occ: i for i, occ in enumerate(sector_states(lat.M, N))}
        return cls(_amps_from_dict(doc["amplitudes"], lambda o: lookup[tuple(o)], len(lookup)), N, lat)

    def __repr__(self):
        return f"SymmetricState(N={self.N}, M={self.M}, norm={self.norm():.6g})"


def _amps_to_dict(occs, amps) -> dict:
    return {",".join(str(int(k)) for k in occ): [float(a.real), float(a.imag)] for occ, a in zip(occs, amps)}


def _amps_from_dict(doc, index, dim) -> np.ndarray:
    out = np.zeros(dim, dtype=np.complex128)
    for key, (re, im) in doc.items():
        out[index(tuple(int(k) for k in str(key).split(",")))] = re + 1j * im
    return out


# ---------------------------------------------------------------------------
# operators on the amplitude arrays


def creator_of(lam: np.ndarray, basis: FockBasis):
    """``b+[lam] = sum_x lam_x b+_x`` as a sparse matrix."""
    return sum(complex(l) * op for l, op in zip(lam, basis.creation) if l != 0) if np.any(lam) else 0 * basis.creation[0]


def annihilator_of(lam: np.ndarray, basis: FockBasis):
    """``b[lam] = sum_x conj(lam_x) b_x``, the adjoint of :func:`creator_of`."""
    return sum(complex(np.conj(l)) * op for l, op in zip(lam, basis.annihilation) if l != 0) if np.any(lam) else 0 * basis.annihilation[0]


def pair_creator_apply(m: np.ndarray, basis: FockBasis, vec: np.ndarray) -> np.ndarray:
    """``(1/2) sum_xy m_xy b+_x b+_y`` applied to ``vec``."""
    out = np.zeros_like(vec, dtype=np.complex128)
    ups = [op @ vec for op in basis.creation]
    for x, opx in enumerate(basis.creation):
        w = sum(m[x, y] * ups[y] for y in range(basis.M))
        out += opx @ w
    return 0.5 * out


def project_occupations(data: np.ndarray, basis: FockBasis, u: np.ndarray) -> np.ndarray:
    """Apply ``(1 - u u^dagger)`` to every slot: ``sum_k (-1)^k/k! (b+[u])^k (b[u])^k``."""
    Bp = creator_of(u, basis)
    Bm = annihilator_of(u, basis)
    out = data.astype(np.complex128, copy=True)
    low = data.astype(np.complex128, copy=True)
    for k in range(1, basis.n_max + 1):
        low = Bm @ low
        if not np.any(low):
            break
        up = low
        for _ in range(k):
            up = Bp @ up
        out += ((-1) ** k / np.exp(lgamma(k + 1))) * up
    return out


def germ_norm_squared(M_op: np.ndarray) -> float:
    """Exact ``||Phi_R||^2 = det(1 - M^dagger M)^{-1/2}``."""
    sv = np.linalg.svd(M_op, compute_uv=False)
    return float(np.prod((1.0 - sv**2) ** -0.5))


def germ_vacuum(R: np.ndarray, phi: OneParticleState, tol: float = 1e-12, n_max: int | None = None,
                normalize: bool = False) -> FockVector:
    """Germ vacuum ``Phi_R = exp((1/2) int a+ M a+)|0>`` with ``M = R + phi (x) phi``.

    Parameters
    ----------
    R : ndarray
        Continuum pairing kernel satisfying the constraint at ``phi``.
    phi : OneParticleState
    tol : float
        Relative squared-norm tail allowed beyond the truncation; the tail is
        measured against the exact norm ``det(1 - M^dagger M)^{-1/2}``.
    n_max : int, optional
        Fixed truncation (even); disables the automatic choice.
    normalize : bool
        Return the unit vector instead of the unnormalized series.

    Raises
    ------
    ValueError
        If ``||M|| >= 1``.
    """
    h = phi.lattice.h
    u = phi.unit
    m = h * np.asarray(R, dtype=np.complex128) + np.outer(u, u)
    nrm = np.linalg.norm(m, 2)
    if nrm >= 1.0:
        raise ValueError(f"pairing operator norm {nrm:.6f} >= 1; germ vacuum diverges")
    exact = germ_norm_squared(m)
    top = 8 if n_max is None else int(n_max)
    while True:
        vec = _germ_series(m, fock_basis(phi.lattice.M, top))
        tail = exact - float(np.vdot(vec, vec).real)
        if n_max is not None or tail <= tol * exact or top >= HARD_CAP:
            break
        top += 2
    if n_max is None and tail > tol * exact:
        raise ValueError(f"germ vacuum tail {tail:.2e} above tolerance at hard cap {HARD_CAP}")
    g = FockVector(vec, top, phi)
    if normalize:
        g = g * (1.0 / g.norm())
    return g


def _germ_series(m: np.ndarray, basis: FockBasis) -> np.ndarray:
    vec = np.zeros(basis.dim, dtype=np.complex128)
    vec[0] = 1.0
    term = vec.copy()
    for k in range(1, basis.n_max // 2 + 1):
        term = pair_creator_apply(m, basis, term) / k
        vec += term
    return vec


def germ_mode_coefficients(phi: OneParticleState, u: np.ndarray, v: np.ndarray):
    """Mode vectors ``(lam_plus, lam_minus)`` with ``Lambda+ = b+[lam_plus] - b[lam_minus]``.

    ``lam_plus = P sqrt(h) conj(v)`` and ``lam_minus = P sqrt(h) u`` with the
    projector ``P = 1 - phi_u phi_u^dagger``.
    """
    h = phi.lattice.h
    w = phi.unit
    P = np.eye(len(w)) - np.outer(w, w.conj())
    return P @ (np.sqrt(h) * np.conj(v)), P @ (np.sqrt(h) * np.asarray(u))


def apply_creation(u, v, g: FockVector, hard_cap: int = HARD_CAP) -> FockVector:
    """Germ creation operator ``int [a+_phi conj(v) - a-_phi conj(u)]`` applied to ``g``.

    The projected operators ``a+_phi(x) = a+(x) - conj(phi)(x) a+[phi]`` and
    ``a-_phi(x) = a-(x) - phi(x) a-[phi]`` keep the result in ``F_phi``.
    The truncation grows by one so no amplitude is lost.
    """
    u = np.asarray(u.amp if isinstance(u, OneParticleState) else u, dtype=np.complex128)
    v = np.asarray(v.amp if isinstance(v, OneParticleState) else v, dtype=np.complex128)
    top = g.n_max + 1
    if top > hard_cap:
        raise OverflowError(f"truncation {top} beyond hard cap {hard_cap}")
    gp = g.padded(top)
    lp, lm = germ_mode_coefficients(g.phi, u, v)
    basis = gp.basis
    out = creator_of(lp, basis) @ gp.data - annihilator_of(lm, basis) @ gp.data
    return FockVector(out, top, g.phi)


def apply_pair_annihilation_check(u, v, g: FockVector) -> FockVector:
    """``int [a+_phi(x) u(x) - a-_phi(x) v(x)] g`` (vanishes on ``Phi_R`` when ``u = R v``)."""
    h = g.phi.lattice.h
    w = g.phi.unit
    P = np.eye(len(w)) - np.outer(w, w.conj())
    lp = P @ (np.sqrt(h) * np.asarray(u))
    lm = P @ (np.sqrt(h) * np.conj(v))
    top = g.n_max + 1
    gp = g.padded(top)
    out = creator_of(lp, gp.basis) @ gp.data - annihilator_of(lm, gp.basis) @ gp.data
    return FockVector(out, top, g.phi)


def project_Fphi(g: FockVector, phi: OneParticleState | None = None) -> FockVector:
    """Project every component orthogonally to ``phi`` in each slot (idempotent)."""
    phi = phi or g.phi
    return FockVector(project_occupations(g.data, g.basis, phi.unit), g.n_max, phi)


def embedding_coefficients(N: int, n_max: int) -> np.ndarray:
    """``sqrt(N!/N^p)/(N-p)!`` for ``p = 0..n_max``."""
    p = np.arange(n_max + 1)
    return np.exp(0.5 * (lgamma(N + 1) - p * log(N)) - np.array([lgamma(N - k + 1) for k in p]))


def canonical_embed(g: FockVector, phi: OneParticleState | None = None, N: int = 1,
                    truncate: bool = False) -> SymmetricState:
    """Multiparticle canonical operator ``K^N_phi g``.

    The symmetric function ``sum_p sqrt(p!/N^p) sum_{i1<..<ip} g_p(x_i..) prod phi(x_j)``
    equals ``sum_p sqrt(N!/N^p)/(N-p)! (a+[phi])^{N-p} |g_p>`` in Fock language,
    evaluated here by a Horner sweep through the sectors.  Components with
    ``p > N`` have no place among ``N`` particles; ``truncate=True`` drops them.

    Raises
    ------
    ValueError
        If ``N < n_max`` with nonzero components above ``N`` and ``truncate`` unset.
    """
    phi = phi or g.phi
    if N < g.n_max:
        if not truncate and np.any(np.abs(g.data[g.basis.offsets[N + 1]:]) > 0):
            raise ValueError("canonical embedding needs N >= n_max")
        g = g.padded(N)
    M = phi.lattice.M
    u = phi.unit
    coef = embedding_coefficients(N, g.n_max)
    w = np.zeros(1, dtype=np.complex128)
    w[0] = coef[0] * g.sector(0)[0]
    for n in range(1, N + 1):
        up = np.zeros(len(sector_states(M, n)), dtype=np.complex128)
        for x in range(M):
            if u[x] != 0:
                up += u[x] * (_creation_block(M, x, n - 1) @ w)
        if n <= g.n_max:
            up += coef[n] * g.sector(n)
        w = up
    return SymmetricState(w, N, phi.lattice)


def norm_formula(g: FockVector, N: int) -> float:
    """``sum_p N!/(N^p (N-p)!) ||g_p||^2`` for ``g`` in ``F_phi``."""
    tot = 0.0
    for p in range(min(g.n_max, N) + 1):
        w = np.exp(lgamma(N + 1) - p * log(N) - lgamma(N - p + 1))
        tot += w * float(np.vdot(g.sector(p), g.sector(p)).real)
    return tot
