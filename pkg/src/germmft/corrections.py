"""Leading asymptotic state, the ``N^{-1/2}`` expansion of the fluctuation generator, and the first correction.

Conjugating ``i d/dt - H_N`` through ``exp(iNS) K^N_phi`` gives a generator on
``F_phi`` that expands as ``N H'_0 + N^{1/2} H'_1 + H'_2 + N^{-1/2} H'_3 + ...``.
Every term is a monomial

    coef * C_ms[x; y] P_q(n) a+_phi(x1)..a+_phi(xm) a-_phi(y1)..a-_phi(ys)

where ``C_ms`` is a kernel with its trailing slots contracted against the
condensate and ``P_q`` is the degree-``q`` elementary symmetric polynomial in
``n, n+1, .., n+p-m-1``.  Here ``n`` is the fluctuation number of the
outgoing state, so ``P_q`` acts to the left of the creators; written between
creators and annihilators it would read ``P_q(n + m)``.  Its order is
``j = 2l + m + s + 2q`` for a level-``l`` kernel.  The table of monomials is
built once per Hamiltonian and bound to the condensate at each time.

Projected operators act on the lattice Fock space in the site basis:
``a-_phi(y) = b_y - phi_y B`` and ``a+_phi(x) = b+_x - conj(phi_x) B+`` with
``B = sum conj(phi_x) b_x``.  Both preserve ``F_phi`` (no condensate quanta).
"""

from __future__ import annotations

import csv
import weakref
from dataclasses import dataclass
from functools import cached_property
from math import factorial, sqrt

import numpy as np

from .exact import residual_norm
from .fock import (
    FockVector,
    SymmetricState,
    annihilator_of,
    apply_creation,
    canonical_embed,
    creator_of,
    germ_vacuum,
    pair_creator_apply,
)
from .fockspace import FockBasis, fock_basis
from .lattice import HamiltonianSpec, contract, functional_op, grad_op, hessian_op
from .meanfield import GermState, GermTrajectory


# ---------------------------------------------------------------------------
# the monomial table


@dataclass(frozen=True)
class Monomial:
    """One ``P_q(n) a+^m a-^s`` term of order ``j`` coming from kernel ``kernel`` of level ``level``."""

    j: int
    level: int
    kernel: int
    p: int
    m: int
    s: int
    q: int
    coef: float


def _elementary(vals: np.ndarray, q: int) -> np.ndarray:
    """``e_q`` of the columns of ``vals`` (shape ``(k, n)``)."""
    e = [np.ones(vals.shape[1])] + [np.zeros(vals.shape[1]) for _ in range(q)]
    for row in vals:
        for d in range(q, 0, -1):
            e[d] = e[d] + row * e[d - 1]
    return e[q]


def number_polynomial(n: np.ndarray, k: int, q: int) -> np.ndarray:
    """``e_q(n, n+1, .., n+k-1)`` evaluated elementwise."""
    if q == 0:
        return np.ones_like(n, dtype=float)
    if q > k:
        return np.zeros_like(n, dtype=float)
    vals = np.asarray(n, dtype=float)[None, :] + np.arange(k, dtype=float)[:, None]
    return _elementary(vals, q)


class HPrimeExpansion:
    """Monomial table of the fluctuation generator for one Hamiltonian.

    Parameters
    ----------
    spec : HamiltonianSpec

    Attributes
    ----------
    K : int
        Highest order present (including the kinematic terms, which reach 3).
    """

    def __init__(self, spec: HamiltonianSpec):
        self.spec = spec
        self.kernels = [(l, p, T) for l in range(spec.k + 1) for p, T in spec.op_tensors(l)]
        terms = []
        for idx, (l, p, _T) in enumerate(self.kernels):
            for m in range(p + 1):
                for s in range(p + 1):
                    base = factorial(p) / (factorial(m) * factorial(p - m) * factorial(s) * factorial(p - s))
                    for q in range(p - m + 1):
                        terms.append(Monomial(2 * l + m + s + 2 * q, l, idx, p, m, s, q, base * (-1) ** q))
        self.terms = tuple(terms)
        self.K = max([3] + [t.j for t in terms])

    def order(self, j: int) -> tuple[Monomial, ...]:
        if not 0 <= j <= self.K:
            raise ValueError(f"order {j} outside 0..{self.K}")
        return tuple(t for t in self.terms if t.j == j)

    def max_raise(self, j: int) -> int:
        r = [t.m - t.s for t in self.order(j)]
        if j in (1,):
            r.append(1)
        return max([0] + r)

    def bind(self, germ: GermState, basis: FockBasis) -> "BoundGenerator":
        return BoundGenerator(self, germ, basis)


_EXPANSIONS: dict = {}


def expansion_for(spec: HamiltonianSpec) -> HPrimeExpansion:
    """Cached :class:`HPrimeExpansion`, keyed on the identity of the Hamiltonian object."""
    hit = _EXPANSIONS.get(id(spec))
    if hit is not None and hit[0]() is spec:
        return hit[1]
    ex = HPrimeExpansion(spec)
    if len(_EXPANSIONS) >= 16:
        _EXPANSIONS.pop(next(iter(_EXPANSIONS)))
    _EXPANSIONS[id(spec)] = (weakref.ref(spec), ex)
    return ex


def _unit_derivative(spec: HamiltonianSpec, germ: GermState) -> np.ndarray:
    if germ.dphi is not None:
        return np.sqrt(germ.h) * np.asarray(germ.dphi)
    return -1j * grad_op(spec, 0, germ.phi.unit)


class BoundGenerator:
    """Expansion terms evaluated at one condensate, acting on one truncated basis."""

    def __init__(self, expansion: HPrimeExpansion, germ: GermState, basis: FockBasis, dS: float | None = None):
        spec = expansion.spec
        self.expansion = expansion
        self.germ = germ
        self.basis = basis
        u = germ.phi.unit
        self.u = u
        self.du = _unit_derivative(spec, germ)
        if dS is None:
            dS = float(np.real(np.vdot(u, grad_op(spec, 0, u))) - np.real(functional_op(spec, 0, u)))
        self.dS = dS
        self.tensors = {}
        for t in expansion.terms:
            key = (t.kernel, t.m, t.s)
            if key not in self.tensors:
                _l, p, T = expansion.kernels[t.kernel]
                self.tensors[key] = contract(T, p, t.m, t.s, u)

    @cached_property
    def _Bm(self):
        return annihilator_of(self.u, self.basis)

    @cached_property
    def _Bp(self):
        return creator_of(self.u, self.basis)

    @cached_property
    def ann(self) -> list:
        """Projected annihilators ``a-_phi(y)``."""
        return [(b - complex(uy) * self._Bm).tocsr() for b, uy in zip(self.basis.annihilation, self.u)]

    @cached_property
    def cre(self) -> list:
        """Projected creators ``a+_phi(x)``."""
        return [(b - complex(np.conj(ux)) * self._Bp).tocsr() for b, ux in zip(self.basis.creation, self.u)]

    def cre_of(self, f):
        return sum(complex(fx) * c for fx, c in zip(f, self.cre))

    def ann_of(self, f):
        return sum(complex(np.conj(fx)) * a for fx, a in zip(f, self.ann))

    def _monomial(self, C: np.ndarray, m: int, s: int, diag, vec: np.ndarray) -> np.ndarray:
        M = self.basis.M
        cols = vec[:, None]
        for _ in range(s):
            cols = np.concatenate([a @ cols for a in self.ann], axis=1)
            # column index runs (y_new, y_old..) so reorder to (y_old.., y_new)
            K = cols.shape[1] // M
            cols = cols.reshape(-1, M, K).transpose(0, 2, 1).reshape(-1, K * M)
        cols = cols @ C.reshape(M**m, M**s).T if (m or s) else cols * complex(C)
        for _ in range(m):
            K = cols.shape[1] // M
            blocks = cols.reshape(-1, K, M)
            cols = sum(self.cre[x] @ blocks[:, :, x] for x in range(M))
        out = cols[:, 0]
        return out if diag is None else diag * out

    def apply(self, j: int, vec: np.ndarray, kinematic: bool = True, kernels: bool = True) -> np.ndarray:
        """Order-``j`` coefficient operator on an amplitude array over ``self.basis``."""
        out = np.zeros(self.basis.dim, dtype=np.complex128)
        n = self.basis.number
        if kernels:
            for t in self.expansion.order(j):
                C = self.tensors[(t.kernel, t.m, t.s)]
                diag = None
                if t.q:
                    diag = number_polynomial(n, t.p - t.m, t.q)
                out += t.coef * self._monomial(C, t.m, t.s, diag, vec)
        if kinematic:
            out += self._kinematic(j, vec)
        return out

    def _kinematic(self, j: int, vec: np.ndarray) -> np.ndarray:
        u, du = self.u, self.du
        ov = complex(np.vdot(u, du))
        if j == 0:
            return (self.dS - 1j * ov) * vec
        if j == 1:
            return -1j * (self.cre_of(du) @ vec) + 1j * (self.ann_of(du) @ vec)
        if j == 2:
            return 1j * ov * self.basis.number * vec
        if j == 3:
            return -1j * self.basis.number * (self.ann_of(du) @ vec)
        return np.zeros_like(vec)

    def covariant_shift(self, vec: np.ndarray) -> np.ndarray:
        """``a+[phi] a-[dphi/dt]`` that turns ``d/dt`` into the ``F_phi``-preserving derivative."""
        return self._Bp @ (annihilator_of(self.du, self.basis) @ vec)


# ---------------------------------------------------------------------------
# public operator interface


def hprime_apply(spec: HamiltonianSpec, germ: GermState, j: int, g: FockVector,
                 kinematic: bool = True, dS: float | None = None) -> FockVector:
    """Apply the order-``j`` coefficient ``H'_j`` of the fluctuation generator.

    The truncation of the result is grown by the largest net number of
    creations in the order so no amplitude is lost.

    Parameters
    ----------
    spec : HamiltonianSpec
    germ : GermState
        Supplies the condensate and its time derivative.
    j : int
        Order, ``0 <= j <= K``.
    g : FockVector
    kinematic : bool
        Include the terms generated by the time dependence of the condensate
        and the action; without them only the kernel part remains.
    dS : float, optional
        Action rate; defaults to the Hartree value ``Re<phi, grad> - H_0``.

    Raises
    ------
    ValueError
        If ``j`` is out of range.
    """
    ex = expansion_for(spec)
    ex.order(j)
    top = g.n_max + ex.max_raise(j)
    gp = g.padded(top)
    bound = BoundGenerator(ex, germ, gp.basis, dS)
    return FockVector(bound.apply(j, gp.data, kinematic=kinematic), top, germ.phi)


def hprime_closed(spec: HamiltonianSpec, germ: GermState, j: int, g: FockVector) -> FockVector:
    """Closed forms of ``H'_0``, ``H'_1``, ``H'_2`` in terms of the Hessian blocks.

    ``H'_0 = H_0 + dS/dt - i<phi, dphi/dt>``;
    ``H'_1 = a+_phi[grad - i dphi/dt] + a-_phi[grad - i dphi/dt]^dagger``;
    ``H'_2 = n <phi, i dphi/dt - grad> + H_1 - (1/2) phi.kmm.phi
    + (1/2) a+ kpp a+ + a+ kpm a- + (1/2) a- kmm a-``.
    """
    if j not in (0, 1, 2):
        raise ValueError("closed forms exist for orders 0, 1, 2 only")
    top = g.n_max + (2 if j == 2 else 1 if j == 1 else 0)
    gp = g.padded(top)
    b = BoundGenerator(expansion_for(spec), germ, gp.basis)
    u, du, vec = b.u, b.du, gp.data
    grad = grad_op(spec, 0, u)
    if j == 0:
        val = np.real(functional_op(spec, 0, u)) + b.dS - 1j * np.vdot(u, du)
        return FockVector(val * vec, top, germ.phi)
    if j == 1:
        f = grad - 1j * du
        # a-_phi paired with the conjugate functional derivative conj(grad) + i conj(dphi)
        out = b.cre_of(f) @ vec + b.ann_of(f) @ vec
        return FockVector(out, top, germ.phi)
    kpm, kpp, kmm = hessian_op(spec, 0, u)
    h1 = functional_op(spec, 1, u) if spec.k >= 1 else 0.0
    scal = h1 - 0.5 * (u @ kmm @ u)
    out = (scal + np.vdot(u, 1j * du - grad) * b.basis.number) * vec
    M = len(u)
    anns = [a @ vec for a in b.ann]
    for x in range(M):
        out += b.cre[x] @ sum(kpm[x, y] * anns[y] for y in range(M))
        out += 0.5 * (b.ann[x] @ sum(kmm[x, y] * anns[y] for y in range(M)))
    cres = [c @ vec for c in b.cre]
    for x in range(M):
        out += 0.5 * (b.cre[x] @ sum(kpp[x, y] * cres[y] for y in range(M)))
    return FockVector(out, top, germ.phi)


# ---------------------------------------------------------------------------
# leading asymptotics


def germ_state_vector(germ: GermState, creations=(), n_max: int | None = None, tol: float = 1e-12) -> FockVector:
    """``c * Lambda+..Lambda+ Phi_R`` as a Fock vector (creations applied right to left)."""
    g = germ_vacuum(germ.R, germ.phi, tol=tol, n_max=n_max)
    for u, v in reversed(list(creations)):
        g = apply_creation(u, v, g)
    return g * germ.c


def assemble_leading(germ: GermState, creations=(), N: int = 1, n_max: int | None = None,
                     tol: float = 1e-12) -> SymmetricState:
    """Leading asymptotic ``N``-particle state ``c e^{iNS} K^N(Lambda+..Phi_R)``.

    Parameters
    ----------
    germ : GermState
    creations : sequence of (u, v)
        Germ vectors of the creation operators, outermost first.
    N : int
    n_max : int, optional
        Fixed truncation of the germ vacuum (needed for smooth time derivatives).
    """
    g = germ_state_vector(germ, creations, n_max=n_max, tol=tol)
    psi = canonical_embed(g, germ.phi, N, truncate=True)
    return psi * np.exp(1j * N * germ.S)


def covariant_derivative(bound: BoundGenerator, g_dot: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``dg/dt + a+[phi] a-[dphi/dt] g``; stays in ``F_phi`` when ``g`` does."""
    return g_dot + bound.covariant_shift(g)


def _fd_derivative(f, t: float, d: float) -> np.ndarray:
    return (f(t - 2 * d) - 8 * f(t - d) + 8 * f(t + d) - f(t + 2 * d)) / (12 * d)


def germ_flow_residual(spec: HamiltonianSpec, traj: GermTrajectory, t: float, n_max: int = 16,
                       delta: float = 2e-3, rtol: float = 0.05, max_halvings: int = 6) -> float:
    """``||(i D_t - H'_2) c Phi_R||`` at ``t`` by Richardson-checked finite differences.

    Only sectors below ``n_max - 1`` are compared, since the pair annihilation
    in ``H'_2`` reads components that the truncation removed.

    Raises
    ------
    ArithmeticError
        If successive step halvings disagree by more than ``rtol`` while the
        residual is above ``1e-12``.
    """
    basis = fock_basis(traj.lattice.M, n_max)

    def g_at(s):
        return germ_state_vector(traj.at(s), n_max=n_max).data

    g = germ_state_vector(traj.at(t), n_max=n_max)
    bound = BoundGenerator(expansion_for(spec), traj.at(t), basis)
    H2g = bound.apply(2, g.data)
    keep = slice(0, int(basis.offsets[n_max - 1]))

    def est(d):
        Dg = covariant_derivative(bound, _fd_derivative(g_at, t, d), g.data)
        return float(np.linalg.norm((1j * Dg - H2g)[keep]))

    prev = est(delta)
    d = delta
    for _ in range(max_halvings):
        d /= 2
        cur = est(d)
        if abs(cur - prev) <= rtol * cur or cur < 1e-12:
            return cur
        prev = cur
    if prev < 1e-9:
        return prev
    raise ArithmeticError("finite-difference refinement of the germ residual did not settle")


# ---------------------------------------------------------------------------
# first correction


def dress(f: np.ndarray, m_op: np.ndarray, basis: FockBasis, sign: float = 1.0) -> np.ndarray:
    """``exp(sign/2 * b+ m b+) f`` on a truncated basis (exact sector by sector)."""
    out = f.astype(np.complex128, copy=True)
    term = out.copy()
    for k in range(1, basis.n_max // 2 + 1):
        term = sign * pair_creator_apply(m_op, basis, term) / k
        if not np.any(term):
            break
        out += term
    return out


def coefficient_generator(bound: BoundGenerator, f: np.ndarray, kmm: np.ndarray, kpm: np.ndarray,
                          m_op: np.ndarray, w_rate: complex) -> np.ndarray:
    """Dressed quadratic generator on the coefficient polynomial ``f`` of ``f(a+) Phi_R``.

    Conjugating ``H'_2`` by ``exp(b+ m b+ / 2)`` leaves the scalar ``w_rate``
    (the rate of the scalar phase), the number-conserving part
    ``a+ (kpm + m kmm) a-`` and the pair annihilation ``(1/2) a- kmm a-``;
    the pair creation cancels against the germ flow.
    """
    M = len(bound.u)
    A = kpm + m_op @ kmm
    anns = [a @ f for a in bound.ann]
    out = w_rate * f
    for x in range(M):
        out = out + bound.cre[x] @ sum(A[x, y] * anns[y] for y in range(M))
        out = out + 0.5 * (bound.ann[x] @ sum(kmm[x, y] * anns[y] for y in range(M)))
    return out


def coefficient_rhs_tensor(comps: dict, kpm: np.ndarray, kmm: np.ndarray, r_op: np.ndarray, w_rate: complex,
                           pair_factor=None) -> dict:
    """Right side of the coefficient transport written on symmetric tensors.

    ``comps[n]`` are coefficient functions in unit normalization.  Returns
    ``sum_k (kpm + r kmm)_k g_n + pair_factor(n) * kmm : g_{n+2} + w_rate g_n``;
    the default ``pair_factor`` is ``sqrt((n+1)(n+2))/2``, which is what the
    normalization ``1/sqrt(n!)`` of the a+-monomials requires.
    """
    if pair_factor is None:
        pair_factor = lambda n: 0.5 * sqrt((n + 1) * (n + 2))
    A = kpm + r_op @ kmm
    out = {}
    for n, g in comps.items():
        acc = w_rate * g
        for k in range(n):
            acc = acc + np.moveaxis(np.tensordot(A, g, axes=([1], [k])), 0, k)
        up = comps.get(n + 2)
        if up is not None:
            acc = acc + pair_factor(n) * np.tensordot(kmm, up, axes=([0, 1], [0, 1]))
        out[n] = acc
    return out


@dataclass
class _Stage:
    germ: GermState
    bound: BoundGenerator
    kpm: np.ndarray
    kmm: np.ndarray
    m_op: np.ndarray
    w_rate: complex
    chi: np.ndarray


class CorrectionTransport:
    """First-correction transport along a germ trajectory.

    The correction is ``g_1 = f(a+) Phi_R`` with a coefficient polynomial
    ``f`` of degree at most ``degree``.  Its source ``chi`` is read off
    ``H'_3 g_0`` by stripping the germ dressing, after which

        i (df/dt + a+[phi] a-[dphi/dt] f) = dressed H'_2 f + chi

    closes on the sectors ``<= degree``.

    Parameters
    ----------
    spec : HamiltonianSpec
    traj : GermTrajectory
    degree : int
        Highest coefficient sector kept; must cover the source.
    work_n_max : int, optional
        Truncation used while extracting the source (default ``degree + 6``).
    match_tol : float
        Largest norm allowed for source sectors above ``degree``.
    """

    def __init__(self, spec: HamiltonianSpec, traj: GermTrajectory, degree: int = 3,
                 work_n_max: int | None = None, match_tol: float = 1e-9):
        self.spec = spec
        self.traj = traj
        self.degree = int(degree)
        self.work_n_max = int(work_n_max or self.degree + 6)
        if self.work_n_max < self.degree + 3 + 1:
            raise ValueError("work truncation must exceed the degree by at least 4")
        self.match_tol = match_tol
        self.expansion = expansion_for(spec)
        self.basis = fock_basis(traj.lattice.M, self.work_n_max)
        self.low = int(self.basis.offsets[self.degree + 1])

    def stage(self, germ: GermState) -> _Stage:
        basis = self.basis
        bound = BoundGenerator(self.expansion, germ, basis)
        u = germ.phi.unit
        kpm, _kpp, kmm = hessian_op(self.spec, 0, u)
        m_op = germ.M_op
        h1 = functional_op(self.spec, 1, u) if self.spec.k >= 1 else 0.0
        w_rate = 0.5 * np.sum(kmm * germ.R_op) + h1
        g0 = germ_state_vector(germ, n_max=basis.n_max)
        src = dress(bound.apply(3, g0.data), m_op, basis, sign=-1.0)
        reliable = slice(self.low, int(basis.offsets[basis.n_max - 3 + 1]))
        leftover = float(np.linalg.norm(src[reliable]))
        if leftover > self.match_tol * max(1.0, float(np.linalg.norm(src[: self.low]))):
            raise ValueError(f"source not expressible within degree {self.degree} (leftover {leftover:.2e})")
        chi = np.zeros(basis.dim, dtype=np.complex128)
        chi[: self.low] = src[: self.low]
        return _Stage(germ, bound, kpm, kmm, m_op, complex(w_rate), chi)

    def rhs(self, st: _Stage, f: np.ndarray) -> np.ndarray:
        gen = coefficient_generator(st.bound, f, st.kmm, st.kpm, st.m_op, st.w_rate)
        out = -st.bound.covariant_shift(f) - 1j * (gen + st.chi)
        out[self.low:] = 0.0
        return out

    def step(self, t: float, f: np.ndarray, dt: float) -> np.ndarray:
        s1 = self.stage(self.traj.at(t))
        s2 = self.stage(self.traj.at(t + dt / 2))
        s3 = self.stage(self.traj.at(t + dt))
        k1 = self.rhs(s1, f)
        k2 = self.rhs(s2, f + 0.5 * dt * k1)
        k3 = self.rhs(s2, f + 0.5 * dt * k2)
        k4 = self.rhs(s3, f + dt * k3)
        return f + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def run(self, f0: np.ndarray | None = None, stride: int = 1) -> "CorrectionTrajectory":
        """Integrate on every ``stride``-th node of the germ grid."""
        tr = self.traj
        idx = np.arange(0, tr.n + 1, stride)
        if idx[-1] != tr.n:
            raise ValueError("stride must divide the number of germ steps")
        f = np.zeros(self.basis.dim, dtype=np.complex128) if f0 is None else np.asarray(f0, dtype=np.complex128).copy()
        out = np.empty((len(idx), self.basis.dim), dtype=np.complex128)
        out[0] = f
        for k in range(1, len(idx)):
            t0, t1 = tr.t[idx[k - 1]], tr.t[idx[k]]
            f = self.step(t0, f, t1 - t0)
            out[k] = f
        return CorrectionTrajectory(self, tr.t[idx], out)


@dataclass
class CorrectionTrajectory:
    """Coefficient polynomial of the first correction on a time grid."""

    transport: CorrectionTransport
    t: np.ndarray
    f: np.ndarray

    def f_at(self, t: float) -> np.ndarray:
        """Coefficients at any ``t`` by one partial RK4 step from the node below."""
        i = int(np.clip(np.searchsorted(self.t, t + 1e-12) - 1, 0, len(self.t) - 1))
        tau = t - self.t[i]
        if abs(tau) < 1e-14:
            return self.f[i]
        return self.transport.step(float(self.t[i]), self.f[i], tau)

    def g1(self, t: float, n_max: int) -> FockVector:
        """``g_1 = f(a+) Phi_R`` at time ``t`` truncated at ``n_max``."""
        germ = self.transport.traj.at(t)
        basis = fock_basis(germ.phi.lattice.M, n_max)
        f = FockVector(self.f_at(t), self.transport.work_n_max, germ.phi).padded(n_max)
        return FockVector(dress(f.data, germ.M_op, basis), n_max, germ.phi)

    def layers(self, t: float, n_max: int) -> "AsymptoticState":
        germ = self.transport.traj.at(t)
        g0 = germ_state_vector(germ, n_max=n_max)
        return AsymptoticState(germ, [g0, self.g1(t, n_max)])


@dataclass
class AsymptoticState:
    """Germ data with the layers ``g_0, g_1, ..`` of the expansion in ``N^{-1/2}``."""

    germ: GermState
    g_layers: list
    N: int | None = None

    def embed(self, N: int | None = None, order: int | None = None) -> SymmetricState:
        """``e^{iNS} K^N (g_0 + N^{-1/2} g_1 + ..)`` keeping ``order`` layers (default all)."""
        N = N or self.N
        if N is None:
            raise ValueError("particle number not bound")
        L = len(self.g_layers) if order is None else order
        total = self.g_layers[0]
        for l in range(1, L):
            total = total + self.g_layers[l] * N ** (-0.5 * l)
        psi = canonical_embed(total, self.germ.phi, N, truncate=True)
        return psi * np.exp(1j * N * self.germ.S)

    def orthogonality_residual(self) -> float:
        return max(g.orthogonality_residual() for g in self.g_layers)


def transport_first_correction(spec: HamiltonianSpec, germ_traj: GermTrajectory, g0_1=None, degree: int = 3,
                               stride: int = 1) -> CorrectionTrajectory:
    """Transport the first correction ``g_1`` in the coefficient representation.

    Parameters
    ----------
    g0_1 : ndarray or FockVector, optional
        Initial coefficient polynomial (sectors ``<= degree``); zero by default.
    """
    tr = CorrectionTransport(spec, germ_traj, degree=degree)
    f0 = None
    if g0_1 is not None:
        vec = g0_1 if isinstance(g0_1, FockVector) else FockVector(g0_1, tr.work_n_max, germ_traj.state(0).phi)
        f0 = vec.padded(tr.work_n_max).data
        if np.linalg.norm(f0[tr.low:]) > 0:
            raise ValueError("initial coefficients exceed the transport degree")
    return tr.run(f0, stride=stride)


def transport_first_correction_fock(spec: HamiltonianSpec, germ_traj: GermTrajectory, n_max: int = 14,
                                    stride: int = 1):
    """Cross-check: transport ``g_1`` directly on the truncated Fock space.

    Solves ``i D_t g_1 = H'_2 g_1 + H'_3 g_0`` with ``g_1(0) = 0``; returns
    the times and the amplitude arrays.
    """
    ex = expansion_for(spec)
    basis = fock_basis(germ_traj.lattice.M, n_max)
    idx = np.arange(0, germ_traj.n + 1, stride)

    def rhs(germ, g):
        b = BoundGenerator(ex, germ, basis)
        g0 = germ_state_vector(germ, n_max=n_max).data
        return -b.covariant_shift(g) - 1j * (b.apply(2, g) + b.apply(3, g0))

    g = np.zeros(basis.dim, dtype=np.complex128)
    out = [g]
    for k in range(1, len(idx)):
        t0, t1 = germ_traj.t[idx[k - 1]], germ_traj.t[idx[k]]
        dt = t1 - t0
        a, m, e = germ_traj.at(t0), germ_traj.at(t0 + dt / 2), germ_traj.at(t1)
        k1 = rhs(a, g)
        k2 = rhs(m, g + 0.5 * dt * k1)
        k3 = rhs(m, g + 0.5 * dt * k2)
        k4 = rhs(e, g + dt * k3)
        g = g + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(g)
    return germ_traj.t[idx], np.array(out)


# ---------------------------------------------------------------------------
# convergence sweeps


def asymptotic_residuals(spec: HamiltonianSpec, corr: CorrectionTrajectory, N_list, t: float,
                         n_max: int | None = None, delta: float = 1e-2):
    """``||(i d/dt - H_N) Phi_{N,L}||`` for ``L = 1, 2`` at time ``t``.

    Returns a list of ``(N, residual_L1, residual_L2)``.
    """
    rows = []
    for N in N_list:
        nm = n_max or N

        def lead(s, N=N, nm=nm):
            return corr.layers(s, nm).embed(N, order=1)

        def full(s, N=N, nm=nm):
            return corr.layers(s, nm).embed(N, order=2)

        rows.append((N, residual_norm(spec, lead, t, delta=delta), residual_norm(spec, full, t, delta=delta)))
    return rows


def write_convergence_csv(rows, path, slopes=None) -> None:
    """Rows ``(N, residual_L1, residual_L2, exact_distance_L1, exact_distance_L2)`` plus a slope row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "residual_L1", "residual_L2", "exact_distance_L1", "exact_distance_L2"])
        for r in rows:
            w.writerow([r[0]] + [f"{x:.12e}" for x in r[1:]])
        if slopes is not None:
            w.writerow(["slope"] + [f"{x:.6f}" for x in slopes])
