"""Lattice measure space, one-particle states and leveled p-body kernels.

Conventions
-----------
Sites carry a uniform weight ``h``; the inner product of two one-particle
states is ``h * sum(conj(a) * b)``.  A continuum kernel ``K(x1..xp; y1..yp)``
acts by ``h**p``-weighted sums, so its *operator tensor* is ``h**p * K``.
Internally most routines work with the unit vector ``phi_u = sqrt(h) * phi``
and operator tensors, where every formula is a plain finite-dimensional one.
The public functions below convert back to continuum kernels.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from math import factorial
from pathlib import Path

import numpy as np
import yaml

TOPOLOGIES = ("periodic-1D", "abstract")


@dataclass(frozen=True)
class LatticeSpec:
    """Finite measure space of ``M`` sites with weight ``h`` each.

    Parameters
    ----------
    M : int
        Number of sites, at least 2.
    h : float
        Site weight (quadrature measure).
    topology : {"periodic-1D", "abstract"}
        ``periodic-1D`` provides a nearest-neighbour Laplacian; ``abstract``
        has no geometry.
    """

    M: int
    h: float = 1.0
    topology: str = "periodic-1D"

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise ValueError("lattice needs M >= 2 sites")
        if not self.h > 0:
            raise ValueError("site weight h must be positive")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")

    def inner(self, a, b) -> complex:
        return self.h * np.vdot(np.asarray(a), np.asarray(b))

    def laplacian(self) -> np.ndarray:
        """Periodic second-difference stencil divided by ``h**2``."""
        if self.topology != "periodic-1D":
            raise ValueError("an abstract lattice has no Laplacian")
        M = self.M
        lap = -2.0 * np.eye(M)
        for x in range(M):
            lap[x, (x + 1) % M] += 1.0
            lap[x, (x - 1) % M] += 1.0
        return lap / self.h**2


@dataclass(frozen=True)
class OneParticleState:
    """Complex amplitude over the lattice sites.

    ``amp`` is in continuum normalization: ``h * sum |amp|**2`` is the
    squared norm.
    """

    amp: np.ndarray
    lattice: LatticeSpec

    def __post_init__(self):
        a = np.asarray(self.amp, dtype=np.complex128)
        if a.shape != (self.lattice.M,):
            raise ValueError(f"amplitude must have shape ({self.lattice.M},)")
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitude must be finite")
        object.__setattr__(self, "amp", a)

    @classmethod
    def from_unit(cls, u, lattice: LatticeSpec) -> "OneParticleState":
        """Build from an amplitude normalized in the plain Euclidean sense."""
        return cls(np.asarray(u) / np.sqrt(lattice.h), lattice)

    @property
    def unit(self) -> np.ndarray:
        """``sqrt(h) * amp``; Euclidean norm equals the lattice norm."""
        return np.sqrt(self.lattice.h) * self.amp

    def norm(self) -> float:
        return float(np.linalg.norm(self.unit))

    def inner(self, other: "OneParticleState") -> complex:
        return self.lattice.inner(self.amp, other.amp)

    def normalized(self) -> "OneParticleState":
        return OneParticleState(self.amp / self.norm(), self.lattice)

    def conj(self) -> "OneParticleState":
        return OneParticleState(self.amp.conj(), self.lattice)


def _symmetrize_blocks(T: np.ndarray, p: int) -> np.ndarray:
    """Average over permutations of the x-block and of the y-block."""
    if p == 1:
        return T
    acc = np.zeros_like(T)
    perms = list(itertools.permutations(range(p)))
    for sx in perms:
        for sy in perms:
            acc += np.transpose(T, sx + tuple(p + k for k in sy))
    return acc / len(perms) ** 2


class PBodyKernel:
    """Hermitian ``p``-body kernel ``K(x1..xp; y1..yp)``.

    Parameters
    ----------
    p : int
        Body order.
    tensor : array_like
        Continuum kernel of shape ``(M,)*2p``, or, when ``local`` is set, a
        weight ``w`` of shape ``(M,)*p`` meaning ``w(x) prod delta(x_i - y_i)``.
    local : bool
        Multiplicative (diagonal) storage.
    enforce : bool
        Symmetrize to restore Hermiticity and block symmetry, warning when the
        correction exceeds ``1e-10``.
    """

    def __init__(self, p: int, tensor, local: bool = False, enforce: bool = True):
        if int(p) != p or p < 1:
            raise ValueError("body order must be >= 1")
        self.p = int(p)
        self.local = bool(local)
        T = np.array(tensor, dtype=np.complex128)
        rank = self.p if self.local else 2 * self.p
        if T.ndim != rank or len(set(T.shape)) != 1:
            raise ValueError(f"kernel tensor must have {rank} equal axes")
        self.M = T.shape[0]
        if enforce:
            T = self._enforce(T)
        self.tensor = T
        self.tensor.setflags(write=False)
        self._op_cache: dict[float, np.ndarray] = {}

    def _enforce(self, T):
        p = self.p
        if self.local:
            S = T
            if p > 1:
                S = sum(np.transpose(T, s) for s in itertools.permutations(range(p))) / factorial(p)
            S = S.real.astype(np.complex128)
        else:
            S = _symmetrize_blocks(T, p)
            n = self.M**p
            mat = S.reshape(n, n)
            S = (0.5 * (mat + mat.conj().T)).reshape(T.shape)
        corr = float(np.max(np.abs(S - T))) if T.size else 0.0
        if corr > 1e-10:
            warnings.warn(f"kernel symmetrized, max correction {corr:.3e}", stacklevel=3)
        return S

    def operator_tensor(self, h: float) -> np.ndarray:
        """Dense operator tensor ``h**p K`` with shape ``(M,)*2p``."""
        key = float(h)
        if key not in self._op_cache:
            if self.local:
                p, M = self.p, self.M
                T = np.zeros((M,) * (2 * p), dtype=np.complex128)
                for idx in itertools.product(range(M), repeat=p):
                    T[idx + idx] = self.tensor[idx]
                # separate block symmetry is what the derivative formulas rely on
                T = _symmetrize_blocks(T, p)
            else:
                T = self.tensor * h**self.p
            T.setflags(write=False)
            self._op_cache[key] = T
        return self._op_cache[key]

    def operator_matrix(self, h: float) -> np.ndarray:
        n = self.M**self.p
        return self.operator_tensor(h).reshape(n, n)

    def __repr__(self):
        kind = "local" if self.local else "dense"
        return f"PBodyKernel(p={self.p}, M={self.M}, {kind})"


@dataclass(frozen=True)
class HamiltonianSpec:
    """Leveled family of kernels; level ``l`` carries the weight ``N**(1-l)``.

    ``source`` records the Schrödinger-type parameters the Hamiltonian was built
    from, so it can be serialized; ``extras`` lists the kernels that were
    added on top as ``(level, kernel)`` pairs.
    """

    lattice: LatticeSpec
    levels: tuple
    source: dict = field(default_factory=dict)
    extras: tuple = ()

    def __post_init__(self):
        levels = tuple(tuple(lv) for lv in self.levels)
        if not levels:
            levels = ((),)
        for lv in levels:
            for ker in lv:
                if ker.M != self.lattice.M:
                    raise ValueError("kernel size does not match lattice")
        object.__setattr__(self, "levels", levels)

    @property
    def k(self) -> int:
        """Highest level index."""
        return len(self.levels) - 1

    @property
    def P0(self) -> int:
        return max((ker.p for lv in self.levels for ker in lv), default=0)

    @property
    def h(self) -> float:
        return self.lattice.h

    @property
    def hbar(self) -> float:
        return float(self.source.get("hbar", 1.0))

    def level(self, l: int) -> tuple:
        return self.levels[l] if 0 <= l < len(self.levels) else ()

    def op_tensors(self, l: int) -> list[tuple[int, np.ndarray]]:
        """``(p, operator tensor)`` pairs at level ``l``."""
        return [(ker.p, ker.operator_tensor(self.h)) for ker in self.level(l)]


def build_schrodinger_spec(
    U,
    V,
    hbar: float = 1.0,
    m: float = 1.0,
    lattice: LatticeSpec | None = None,
    kinetic: bool = True,
    extra_kernels=(),
) -> HamiltonianSpec:
    """Kernels of the bosonic Schrödinger Hamiltonian with pair potential.

    Level 0 holds the one-body kernel ``(T + U)/hbar`` with
    ``T = -hbar**2/(2m) * laplacian`` and the local two-body kernel
    ``V(x, y)/hbar``.  With the level weight ``N`` this reproduces
    ``(1/hbar)[sum_i (T + U)_i + (1/N) sum_{i<j} V(x_i, x_j)]``.

    Parameters
    ----------
    U : array_like
        Real site potential.
    V : array_like
        Real symmetric pair potential.
    hbar, m : float
        Units.
    lattice : LatticeSpec
        Defaults to a periodic lattice of ``len(U)`` sites with ``h = 1``.
    kinetic : bool
        Include the Laplacian term (requires ``periodic-1D``).
    extra_kernels : iterable of (level, PBodyKernel)
        Additional kernels appended to the given levels.
    """
    U_in = np.asarray(U)
    V_in = np.asarray(V)
    if np.iscomplexobj(U_in) and np.any(U_in.imag != 0):
        raise ValueError("site potential U must be real")
    if np.iscomplexobj(V_in) and np.any(V_in.imag != 0):
        raise ValueError("pair potential V must be real")
    U_r = np.asarray(U_in.real, dtype=float)
    V_r = np.asarray(V_in.real, dtype=float)
    if lattice is None:
        lattice = LatticeSpec(len(U_r))
    M = lattice.M
    if U_r.shape != (M,) or V_r.shape != (M, M):
        raise ValueError("U must have shape (M,) and V shape (M, M)")
    if not np.array_equal(V_r, V_r.T):
        raise ValueError("pair potential V must be symmetric")
    if hbar <= 0 or m <= 0:
        raise ValueError("hbar and m must be positive")
    one = np.diag(U_r).astype(np.complex128)
    if kinetic:
        one = one - (hbar**2 / (2.0 * m)) * lattice.laplacian()
    level0 = [PBodyKernel(1, one / (hbar * lattice.h)), PBodyKernel(2, V_r / hbar, local=True)]
    levels: list[list[PBodyKernel]] = [level0]
    extras = []
    for l, ker in extra_kernels:
        while len(levels) <= l:
            levels.append([])
        levels[l].append(ker)
        extras.append((int(l), ker))
    source = dict(hbar=float(hbar), mass=float(m), U=U_r.copy(), V=V_r.copy(), kinetic=bool(kinetic))
    return HamiltonianSpec(lattice, tuple(tuple(lv) for lv in levels), source, tuple(extras))


def random_kernel(M: int, p: int, rng: np.random.Generator, scale: float = 1.0) -> PBodyKernel:
    """Random Hermitian block-symmetric dense kernel (continuum normalization)."""
    shape = (M,) * (2 * p)
    T = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return PBodyKernel(p, T)


def random_spec(
    lattice: LatticeSpec,
    rng: np.random.Generator,
    orders: tuple = (1, 2),
    n_levels: int = 1,
    scale: float = 0.3,
) -> HamiltonianSpec:
    """Hamiltonian with random dense kernels of the given body orders on each level."""
    levels = []
    for l in range(n_levels):
        lv = [random_kernel(lattice.M, p, rng, scale / (1 + l)) for p in orders]
        levels.append(lv)
    src = dict(hbar=1.0, mass=1.0, U=np.zeros(lattice.M), V=np.zeros((lattice.M, lattice.M)), kinetic=False)
    extras = tuple((l, ker) for l, lv in enumerate(levels) for ker in lv)
    return HamiltonianSpec(lattice, tuple(tuple(lv) for lv in levels), src, extras)


# ---------------------------------------------------------------------------
# contractions in operator form


def contract(T: np.ndarray, p: int, m: int, s: int, phi_u: np.ndarray) -> np.ndarray:
    """Contract the trailing ``p-m`` x-slots with ``conj(phi_u)`` and ``p-s`` y-slots with ``phi_u``.

    Returns a tensor with axes ``(x1..xm, y1..ys)``.
    """
    out = T
    for _ in range(p - s):
        out = out @ phi_u
    cb = phi_u.conj()
    for k in range(p - m):
        out = np.tensordot(cb, out, axes=([0], [p - 1 - k]))
    return out


def _level_terms(spec: HamiltonianSpec, l: int):
    return spec.op_tensors(l)


def functional_op(spec: HamiltonianSpec, l: int, phi_u: np.ndarray) -> complex:
    """``sum_p (1/p!) <phi^p, k_p phi^p>`` with operator tensors."""
    return sum(contract(T, p, 0, 0, phi_u) / factorial(p) for p, T in _level_terms(spec, l)) + 0j


def grad_op(spec: HamiltonianSpec, l: int, phi_u: np.ndarray) -> np.ndarray:
    """Derivative of :func:`functional_op` with respect to ``conj(phi_u)``."""
    out = np.zeros(spec.lattice.M, dtype=np.complex128)
    for p, T in _level_terms(spec, l):
        out += contract(T, p, 1, 0, phi_u) / factorial(p - 1)
    return out


def hessian_op(spec: HamiltonianSpec, l: int, phi_u: np.ndarray):
    """Second derivatives ``(d2/dconj dphi, d2/dconj dconj, d2/dphi dphi)`` in operator form."""
    M = spec.lattice.M
    kpm = np.zeros((M, M), dtype=np.complex128)
    kpp = np.zeros((M, M), dtype=np.complex128)
    kmm = np.zeros((M, M), dtype=np.complex128)
    for p, T in _level_terms(spec, l):
        kpm += p * contract(T, p, 1, 1, phi_u) / factorial(p - 1)
        if p >= 2:
            w = p * (p - 1) / factorial(p)
            kpp += w * contract(T, p, 2, 0, phi_u)
            kmm += w * contract(T, p, 0, 2, phi_u)
    return kpm, kpp, kmm


def _unit(phi, spec: HamiltonianSpec) -> np.ndarray:
    if isinstance(phi, OneParticleState):
        return phi.unit
    return np.sqrt(spec.h) * np.asarray(phi, dtype=np.complex128)


def classical_functional(spec: HamiltonianSpec, l: int, phi) -> float:
    """Classical symbol ``H_l(conj(phi), phi)`` of level ``l``.

    Raises
    ------
    ValueError
        If the imaginary part exceeds ``1e-12 * (1 + |value|)``.
    """
    val = functional_op(spec, l, _unit(phi, spec))
    if abs(val.imag) > 1e-12 * (1.0 + abs(val)):
        raise ValueError(f"classical functional not real (imag {val.imag:.3e}); kernel not Hermitian")
    return float(val.real)


def grad_phi_star(spec: HamiltonianSpec, l: int, phi) -> OneParticleState:
    """Functional derivative ``dH_l/dconj(phi)(x)`` as a one-particle state.

    With this normalization ``d/de H_l(phi + e*d) = 2 Re <grad, d>`` using
    the lattice inner product.
    """
    g = grad_op(spec, l, _unit(phi, spec)) / np.sqrt(spec.h)
    return OneParticleState(g, spec.lattice)


def hessian_blocks(spec: HamiltonianSpec, l: int, phi):
    """Continuum kernels ``(K_pm, K_pp, K_mm)`` of the second derivatives.

    ``K_pm = d2H/dconj dphi`` is Hermitian, ``K_pp = d2H/dconj dconj`` is
    symmetric and ``K_mm`` its entrywise conjugate.
    """
    kpm, kpp, kmm = hessian_op(spec, l, _unit(phi, spec))
    h = spec.h
    return kpm / h, kpp / h, kmm / h


# ---------------------------------------------------------------------------
# serialization


def _cplx_to_list(a: np.ndarray):
    a = np.asarray(a)
    if np.iscomplexobj(a) and np.any(a.imag != 0):
        return {"re": a.real.tolist(), "im": a.imag.tolist()}
    return np.asarray(a.real, dtype=float).tolist()


def _list_to_cplx(obj) -> np.ndarray:
    if isinstance(obj, dict):
        return np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)
    return np.asarray(obj, dtype=float)


def spec_to_dict(spec: HamiltonianSpec) -> dict:
    """Key-value tree ``{M, h, topology, hbar, mass, U, V, kinetic, extra_kernels}``."""
    src = spec.source
    if "U" not in src:
        raise ValueError("Hamiltonian has no serializable source data")
    return {
        "M": spec.lattice.M,
        "h": float(spec.lattice.h),
        "topology": spec.lattice.topology,
        "hbar": float(src["hbar"]),
        "mass": float(src["mass"]),
        "kinetic": bool(src.get("kinetic", True)),
        "U": np.asarray(src["U"], dtype=float).tolist(),
        "V": np.asarray(src["V"], dtype=float).tolist(),
        "extra_kernels": [
            {"level": int(l), "p": ker.p, "local": ker.local, "tensor": _cplx_to_list(ker.tensor)}
            for l, ker in spec.extras
        ],
    }


def spec_from_dict(doc: dict) -> HamiltonianSpec:
    lattice = LatticeSpec(int(doc["M"]), float(doc.get("h", 1.0)), doc.get("topology", "periodic-1D"))
    extras = []
    for item in doc.get("extra_kernels", []) or []:
        ker = PBodyKernel(int(item["p"]), _list_to_cplx(item["tensor"]), local=bool(item.get("local", False)), enforce=False)
        extras.append((int(item["level"]), ker))
    M = lattice.M
    U = doc.get("U", [0.0] * M)
    V = doc.get("V", [[0.0] * M for _ in range(M)])
    return build_schrodinger_spec(
        U, V, float(doc.get("hbar", 1.0)), float(doc.get("mass", 1.0)), lattice,
        kinetic=bool(doc.get("kinetic", True)), extra_kernels=extras,
    )


def dump_spec(spec: HamiltonianSpec, path) -> None:
    """Write the Hamiltonian as YAML; floats use shortest round-trip repr."""
    Path(path).write_text(yaml.safe_dump(spec_to_dict(spec), sort_keys=False))


def load_spec(path) -> HamiltonianSpec:
    return spec_from_dict(yaml.safe_load(Path(path).read_text()))
