"""Hartree flow, propagator pair, Riccati transport and phases.

All trajectories are produced by one fixed-step RK4 engine acting on the
joint state ``(phi, A, B, S, w)`` in operator form, where ``phi`` is the unit
vector ``sqrt(h) * phi``, ``(A, B)`` solve the variation system around the
Hartree solution, ``S`` is the action and ``w`` the accumulated exponent of
the scalar phase ``c = exp(-i w)``.  The pairing matrix is obtained from the
pair by the Moebius formula at every stage, so it never needs its own ODE; the
direct Riccati equation is kept as an independent cross-check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .lattice import (
    HamiltonianSpec,
    OneParticleState,
    functional_op,
    grad_op,
    hessian_op,
)


@dataclass(frozen=True)
class FlowConfig:
    """Step control for the fixed-step integrators.

    ``T / dt`` is rounded to an integer step count and the step is adjusted
    so that the grid ends exactly at ``T``.
    """

    dt: float = 1e-3
    T: float = 1.0
    norm_tol: float = 1e-8
    constraint_tol: float = 1e-7
    reproject_every: int = 0
    verify: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and self.T >= 0):
            raise ValueError("need dt > 0 and T >= 0")
        if not (self.norm_tol > 0 and self.constraint_tol > 0):
            raise ValueError("tolerances must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt))) if self.T > 0 else 0

    @property
    def step(self) -> float:
        n = self.n_steps
        return self.T / n if n else self.dt


@dataclass(frozen=True)
class PropagatorPair:
    """Solution ``(A, B)`` of the variation system with ``A(0) = I``, ``B(0) = 0``."""

    A: np.ndarray
    B: np.ndarray
    t: float = 0.0

    @classmethod
    def identity(cls, M: int) -> "PropagatorPair":
        return cls(np.eye(M, dtype=np.complex128), np.zeros((M, M), dtype=np.complex128), 0.0)

    def canonical_residual(self) -> float:
        """Largest of the two canonical-transformation identity defects (spectral norm)."""
        A, B = self.A, self.B
        I = np.eye(A.shape[0])
        r1 = A.conj().T @ A - B.T @ B.conj() - I
        r2 = A.conj().T @ B - B.T @ A.conj()
        return float(max(np.linalg.norm(r1, 2), np.linalg.norm(r2, 2)))

    def compose(self, later: "PropagatorPair") -> "PropagatorPair":
        """Pair of the flow ``self`` followed by ``later``."""
        A1, B1, A2, B2 = self.A, self.B, later.A, later.B
        A = A2 @ A1 + B2 @ B1.conj()
        B = A2 @ B1 + B2 @ A1.conj()
        return PropagatorPair(A, B, self.t + later.t)


@dataclass(frozen=True)
class GermState:
    """Mean-field plus germ data at one time.

    ``R`` is the continuum pairing kernel; ``R_op = h * R`` acts on
    amplitude vectors.  ``c`` is the scalar phase, unit modulus when its
    exponent is real.
    """

    t: float
    phi: OneParticleState
    pair: PropagatorPair
    R: np.ndarray
    S: float
    c: complex
    germ_vecs: tuple = ()
    dphi: np.ndarray | None = None

    @property
    def h(self) -> float:
        return self.phi.lattice.h

    @property
    def R_op(self) -> np.ndarray:
        return self.h * self.R

    @property
    def M_op(self) -> np.ndarray:
        u = self.phi.unit
        return self.R_op + np.outer(u, u)

    def constraint_residual(self) -> float:
        """``max |h * sum_y R(x,y) conj(phi)(y) + phi(x)|`` in unit normalization."""
        u = self.phi.unit
        return float(np.max(np.abs(self.R_op @ u.conj() + u)))

    def M_norm(self) -> float:
        return float(np.linalg.norm(self.M_op, 2))

    def check(self, norm_tol: float = 1e-8, constraint_tol: float = 1e-7) -> None:
        """Raise ``ValueError`` when an invariant is violated."""
        if abs(self.phi.norm() - 1.0) > norm_tol:
            raise ValueError(f"phi norm drift {abs(self.phi.norm() - 1):.2e}")
        if np.max(np.abs(self.R - self.R.T)) > 1e-9 * (1 + np.max(np.abs(self.R))):
            raise ValueError("pairing kernel not symmetric")
        if self.constraint_residual() > constraint_tol:
            raise ValueError(f"pairing constraint violated by {self.constraint_residual():.2e}")
        if self.M_norm() >= 1.0:
            raise ValueError("pairing operator has norm >= 1")


# ---------------------------------------------------------------------------
# symbols: energy, gradient, Hessian and phase density at a given phi


class Symbol(NamedTuple):
    energy: float
    grad: np.ndarray
    kpm: np.ndarray
    kpp: np.ndarray
    kmm: np.ndarray
    phase_density: Callable[[np.ndarray], complex]


def scalar_symbol(spec: HamiltonianSpec) -> Callable[[np.ndarray], Symbol]:
    """Symbol of the level-0 functional; the phase density is ``sum kmm*r/2 + H_1``."""

    def sym(u: np.ndarray) -> Symbol:
        e = functional_op(spec, 0, u)
        g = grad_op(spec, 0, u)
        kpm, kpp, kmm = hessian_op(spec, 0, u)
        h1 = functional_op(spec, 1, u) if spec.k >= 1 else 0.0

        def density(r, kmm=kmm, h1=h1):
            return 0.5 * np.sum(kmm * r) + h1

        return Symbol(float(np.real(e)), g, kpm, kpp, kmm, density)

    return sym


def moebius_op(A: np.ndarray, B: np.ndarray, r0: np.ndarray) -> np.ndarray:
    """``(B + A r0)(conj(A) + conj(B) r0)^{-1}`` in operator form."""
    num = B + A @ r0
    den = A.conj() + B.conj() @ r0
    cond = np.linalg.cond(den)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(f"Moebius denominator singular (cond {cond:.2e})")
    r = np.linalg.solve(den.T, num.T).T
    return 0.5 * (r + r.T)


def _rhs(sym_fn, y, r0):
    u, A, B, _S, _w = y
    sy = sym_fn(u)
    du = -1j * sy.grad
    dA = -1j * (sy.kpm @ A + sy.kpp @ B.conj())
    dB = -1j * (sy.kpm @ B + sy.kpp @ A.conj())
    dS = np.real(np.vdot(u, sy.grad)) - sy.energy
    r = moebius_op(A, B, r0)
    dw = sy.phase_density(r)
    return (du, dA, dB, dS, dw)


def _axpy(y, k, a):
    return tuple(yi + a * ki for yi, ki in zip(y, k))


def _rk4(sym_fn, y, r0, dt):
    k1 = _rhs(sym_fn, y, r0)
    k2 = _rhs(sym_fn, _axpy(y, k1, dt / 2), r0)
    k3 = _rhs(sym_fn, _axpy(y, k2, dt / 2), r0)
    k4 = _rhs(sym_fn, _axpy(y, k3, dt), r0)
    return tuple(yi + dt / 6 * (a + 2 * b + 2 * c + d) for yi, a, b, c, d in zip(y, k1, k2, k3, k4))


def run_flow(sym_fn, u0: np.ndarray, r0: np.ndarray, n: int, dt: float):
    """Integrate the joint system; returns stacked arrays over ``n + 1`` nodes."""
    M = len(u0)
    y = (np.asarray(u0, dtype=np.complex128), np.eye(M, dtype=np.complex128),
         np.zeros((M, M), dtype=np.complex128), 0.0, 0j)
    us = np.empty((n + 1, M), dtype=np.complex128)
    As = np.empty((n + 1, M, M), dtype=np.complex128)
    Bs = np.empty_like(As)
    S = np.empty(n + 1)
    w = np.empty(n + 1, dtype=np.complex128)
    for i in range(n + 1):
        us[i], As[i], Bs[i], S[i], w[i] = y
        if i < n:
            y = _rk4(sym_fn, y, r0, dt)
    return us, As, Bs, S, w


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class HartreeTrajectory:
    """Hartree solution on a uniform grid (continuum amplitudes)."""

    t: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    lattice: object
    verification: float | None = None

    def state(self, i: int) -> OneParticleState:
        return OneParticleState(self.phi[i], self.lattice)


@dataclass
class PairTrajectory:
    t: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def pair(self, i: int) -> PropagatorPair:
        return PropagatorPair(self.A[i], self.B[i], float(self.t[i]))

    def max_canonical_residual(self) -> float:
        return max(self.pair(i).canonical_residual() for i in range(len(self.t)))


@dataclass
class GermTrajectory:
    """Full germ trajectory: Hartree, pair, pairing kernel, action and scalar phase."""

    spec: HamiltonianSpec
    cfg: FlowConfig
    t: np.ndarray
    phi_u: np.ndarray
    A: np.ndarray
    B: np.ndarray
    r: np.ndarray
    S: np.ndarray
    w: np.ndarray
    r0: np.ndarray
    sym_fn: Callable = field(repr=False, default=None)
    germ_vecs0: tuple = ()
    verification: float | None = None

    @property
    def lattice(self):
        return self.spec.lattice

    @property
    def n(self) -> int:
        return len(self.t) - 1

    @property
    def dt(self) -> float:
        return self.cfg.step

    @property
    def c(self) -> np.ndarray:
        return np.exp(-1j * self.w)

    def dphi_u(self, i: int) -> np.ndarray:
        return -1j * self.sym_fn(self.phi_u[i]).grad

    def _make_state(self, t, u, A, B, S, w) -> GermState:
        h = self.lattice.h
        pair = PropagatorPair(A, B, t)
        r = moebius_op(A, B, self.r0)
        vecs = tuple(
            tuple(OneParticleState(x, self.lattice) for x in transport_germ_vectors(pair, (a.amp, b.amp)))
            for a, b in self.germ_vecs0
        )
        du = -1j * self.sym_fn(u).grad
        return GermState(float(t), OneParticleState(u / np.sqrt(h), self.lattice), pair,
                         r / h, float(S), complex(np.exp(-1j * w)), vecs, du / np.sqrt(h))

    def state(self, i: int) -> GermState:
        return self._make_state(self.t[i], self.phi_u[i], self.A[i], self.B[i], self.S[i], self.w[i])

    def at(self, t: float) -> GermState:
        """State at an arbitrary time, by one partial RK4 step from the nearest node below."""
        if t < self.t[0] - 1e-14 or t > self.t[-1] + 1e-12:
            raise ValueError("time outside the integrated window")
        i = int(np.clip(np.floor((t - self.t[0]) / self.dt + 1e-9), 0, self.n))
        tau = t - self.t[i]
        if abs(tau) < 1e-14:
            return self.state(i)
        y = (self.phi_u[i], self.A[i], self.B[i], self.S[i], self.w[i])
        y = _rk4(self.sym_fn, y, self.r0, tau)
        return self._make_state(t, *y)

    def max_canonical_residual(self) -> float:
        return max(PropagatorPair(a, b).canonical_residual() for a, b in zip(self.A, self.B))

    def max_M_norm(self) -> float:
        return max(float(np.linalg.norm(r + np.outer(u, u), 2)) for r, u in zip(self.r, self.phi_u))

    def max_constraint_residual(self) -> float:
        return max(float(np.max(np.abs(r @ u.conj() + u))) for r, u in zip(self.r, self.phi_u))


def _check_norm(us: np.ndarray, tol: float):
    drift = float(np.max(np.abs(np.linalg.norm(us, axis=1) - 1.0)))
    if drift > tol:
        raise FloatingPointError(f"norm drift {drift:.2e} exceeds tolerance; decrease dt")
    return drift


def _unit_of(phi0, spec) -> np.ndarray:
    if isinstance(phi0, OneParticleState):
        return phi0.unit
    return np.sqrt(spec.h) * np.asarray(phi0, dtype=np.complex128)


def germ_trajectory(
    spec: HamiltonianSpec,
    phi0,
    cfg: FlowConfig = FlowConfig(),
    R0: np.ndarray | None = None,
    germ_vecs=(),
    sym_fn=None,
) -> GermTrajectory:
    """Integrate the full mean-field and germ system.

    Parameters
    ----------
    spec : HamiltonianSpec
    phi0 : OneParticleState
        Unit-norm initial condensate.
    cfg : FlowConfig
    R0 : ndarray, optional
        Initial continuum pairing kernel; default ``-phi0 (x) phi0`` (no pairs).
    germ_vecs : sequence of (u0, v0) OneParticleState pairs
        Germ vectors transported alongside.
    sym_fn : callable, optional
        Replacement symbol (used for operator-valued branches).
    """
    u0 = _unit_of(phi0, spec)
    if abs(np.linalg.norm(u0) - 1.0) > cfg.norm_tol:
        raise ValueError("initial state must have unit norm")
    h = spec.h
    r0 = -np.outer(u0, u0) if R0 is None else h * np.asarray(R0, dtype=np.complex128)
    sym_fn = sym_fn or scalar_symbol(spec)
    n, dt = cfg.n_steps, cfg.step
    us, As, Bs, S, w = run_flow(sym_fn, u0, r0, n, dt)
    _check_norm(us, cfg.norm_tol)
    rs = np.array([moebius_op(a, b, r0) for a, b in zip(As, Bs)])
    t = np.linspace(0.0, cfg.T, n + 1)
    traj = GermTrajectory(spec, cfg, t, us, As, Bs, rs, S, w, r0, sym_fn, tuple(germ_vecs))
    if cfg.verify and n >= 2:
        fine = run_flow(sym_fn, u0, r0, 2 * n, dt / 2)[0][-1]
        traj.verification = float(np.linalg.norm(fine - us[-1]))
    return traj


def integrate_hartree(spec: HamiltonianSpec, phi0, cfg: FlowConfig = FlowConfig()) -> HartreeTrajectory:
    """RK4 solution of ``i dphi/dt = dH_0/dconj(phi)``.

    The half-step verification run (``cfg.verify``) stores the distance
    between the final states at ``dt`` and ``dt/2`` in ``verification``.

    Raises
    ------
    FloatingPointError
        If the norm drifts by more than ``cfg.norm_tol``.
    """
    u0 = _unit_of(phi0, spec)
    if abs(np.linalg.norm(u0) - 1.0) > cfg.norm_tol:
        raise ValueError("initial state must have unit norm")
    n, dt = cfg.n_steps, cfg.step
    us = _hartree_only(spec, u0, n, dt)
    _check_norm(us, cfg.norm_tol)
    h = spec.h
    du = np.array([-1j * grad_op(spec, 0, u) for u in us])
    traj = HartreeTrajectory(np.linspace(0.0, cfg.T, n + 1), us / np.sqrt(h), du / np.sqrt(h), spec.lattice)
    if cfg.verify and n >= 2:
        fine = _hartree_only(spec, u0, 2 * n, dt / 2)[-1]
        traj.verification = float(np.linalg.norm(fine - us[-1]))
    return traj


def _hartree_only(spec, u0, n, dt):
    def f(u):
        return -1j * grad_op(spec, 0, u)

    us = np.empty((n + 1, len(u0)), dtype=np.complex128)
    u = np.asarray(u0, dtype=np.complex128)
    for i in range(n + 1):
        us[i] = u
        if i < n:
            k1 = f(u)
            k2 = f(u + dt / 2 * k1)
            k3 = f(u + dt / 2 * k2)
            k4 = f(u + dt * k3)
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return us


def evolve_variation(spec: HamiltonianSpec, hartree_traj: HartreeTrajectory, cfg: FlowConfig = FlowConfig()) -> PairTrajectory:
    """Propagator pair along a Hartree trajectory.

    The pair is integrated jointly with ``phi`` so RK4 stages see the
    Hartree solution at intermediate times; the recomputed ``phi`` must
    coincide with ``hartree_traj``.

    Raises
    ------
    FloatingPointError
        If a canonical identity fails by more than ``1e-5``.
    """
    u0 = np.sqrt(spec.h) * hartree_traj.phi[0]
    n, dt = cfg.n_steps, cfg.step
    if n != len(hartree_traj.t) - 1:
        raise ValueError("flow config does not match the Hartree grid")
    us, As, Bs, _, _ = run_flow(scalar_symbol(spec), u0, -np.outer(u0, u0), n, dt)
    if np.max(np.abs(us / np.sqrt(spec.h) - hartree_traj.phi)) > 1e-10:
        raise ValueError("Hartree trajectory is not the RK4 solution on this grid")
    pt = PairTrajectory(hartree_traj.t.copy(), As, Bs)
    res = pt.max_canonical_residual()
    if res > 1e-5:
        raise FloatingPointError(f"canonical identity violated by {res:.2e}")
    return pt


def riccati_moebius(pair: PropagatorPair, R0: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Pairing kernel ``R^t = (B + A R0)(conj A + conj B R0)^{-1}`` (continuum kernels).

    Raises
    ------
    numpy.linalg.LinAlgError
        If the denominator has condition number above ``1e12``.
    """
    return moebius_op(pair.A, pair.B, h * np.asarray(R0, dtype=np.complex128)) / h


def _riccati_rhs(spec, u, r):
    kpm, kpp, kmm = hessian_op(spec, 0, u)
    return -1j * (kpp + kpm @ r + r @ kpm.T + r @ kmm @ r)


def riccati_joint_step(spec: HamiltonianSpec, u: np.ndarray, r: np.ndarray, dt: float):
    """One RK4 step of the Hartree equation together with the direct Riccati equation (operator form)."""

    def f(y):
        uu, rr = y
        return (-1j * grad_op(spec, 0, uu), _riccati_rhs(spec, uu, rr))

    def ax(y, k, a):
        return (y[0] + a * k[0], y[1] + a * k[1])

    y = (u, r)
    k1 = f(y)
    k2 = f(ax(y, k1, dt / 2))
    k3 = f(ax(y, k2, dt / 2))
    k4 = f(ax(y, k3, dt))
    return tuple(y[j] + dt / 6 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]) for j in range(2))


def riccati_ode_step(spec: HamiltonianSpec, phi, R: np.ndarray, dt: float) -> np.ndarray:
    """One RK4 step of ``i dR/dt = K_pp + K_pm R + R K_pm^T + R K_mm R``.

    The Hessian blocks are evaluated along the Hartree flow started at
    ``phi`` (advanced internally for the RK4 stages).  Returns the continuum
    kernel after the step.
    """
    h = spec.h
    _, r = riccati_joint_step(spec, _unit_of(phi, spec), h * np.asarray(R, dtype=np.complex128), dt)
    return r / h


def riccati_ode(spec: HamiltonianSpec, phi0, R0: np.ndarray, cfg: FlowConfig = FlowConfig()):
    """Direct Riccati integration over ``cfg``; returns ``(t, R)`` with continuum kernels.

    Applies the re-projection of :func:`reproject` every ``cfg.reproject_every``
    steps when that is positive.
    """
    h = spec.h
    u = _unit_of(phi0, spec)
    r = h * np.asarray(R0, dtype=np.complex128)
    n, dt = cfg.n_steps, cfg.step
    out = np.empty((n + 1,) + r.shape, dtype=np.complex128)
    for i in range(n + 1):
        out[i] = r / h
        if i < n:
            u, r = riccati_joint_step(spec, u, r, dt)
            if cfg.reproject_every and (i + 1) % cfg.reproject_every == 0:
                u, r = reproject_op(u, r)
    return np.linspace(0.0, cfg.T, n + 1), out


def reproject_op(u: np.ndarray, r: np.ndarray):
    """Renormalize ``u`` and restore symmetry and ``r conj(u) = -u`` of ``r``."""
    u = u / np.linalg.norm(u)
    m = 0.5 * (r + r.T) + np.outer(u, u)
    q = np.eye(len(u)) - np.outer(u.conj(), u)
    m = q.T @ m @ q
    return u, m - np.outer(u, u)


def reproject(phi: OneParticleState, R: np.ndarray):
    """Continuum-kernel version of :func:`reproject_op`."""
    h = phi.lattice.h
    u, r = reproject_op(phi.unit, h * np.asarray(R))
    return OneParticleState.from_unit(u, phi.lattice), r / h


def action_phase(spec: HamiltonianSpec, hartree_traj: HartreeTrajectory) -> np.ndarray:
    """Action ``S^t = int [i(phi, dphi/dt) - H_0]`` by the composite trapezoid rule.

    Raises
    ------
    ValueError
        If the integrand has an imaginary part above ``1e-10``.
    """
    h = spec.h
    vals = np.empty(len(hartree_traj.t), dtype=np.complex128)
    for i, (a, da) in enumerate(zip(hartree_traj.phi, hartree_traj.dphi)):
        vals[i] = 1j * h * np.vdot(a, da) - functional_op(spec, 0, np.sqrt(h) * a)
    if np.max(np.abs(vals.imag)) > 1e-10:
        raise ValueError("action integrand is not real")
    return _cumtrapz(vals.real, hartree_traj.t)


def scalar_phase(spec: HamiltonianSpec, hartree_traj: HartreeTrajectory, riccati_traj) -> np.ndarray:
    """Scalar phase ``c^t = exp(-i int [sum h^2 K_mm R / 2 + H_1])`` by the trapezoid rule.

    ``riccati_traj`` is an array of continuum pairing kernels on the same grid.
    """
    h = spec.h
    vals = np.empty(len(hartree_traj.t), dtype=np.complex128)
    for i, (a, R) in enumerate(zip(hartree_traj.phi, riccati_traj)):
        u = np.sqrt(h) * a
        _, _, kmm = hessian_op(spec, 0, u)
        h1 = functional_op(spec, 1, u) if spec.k >= 1 else 0.0
        vals[i] = 0.5 * np.sum(kmm * (h * R)) + h1
    return np.exp(-1j * _cumtrapz(vals, hartree_traj.t))


def _cumtrapz(y, t):
    out = np.zeros(len(t), dtype=np.result_type(y, float))
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def transport_germ_vectors(pair: PropagatorPair, uv):
    """``u^t = A u0 + B v0`` and ``v^t = conj(B) u0 + conj(A) v0`` on amplitude arrays."""
    u0, v0 = (np.asarray(x.amp if isinstance(x, OneParticleState) else x, dtype=np.complex128) for x in uv)
    A, B = pair.A, pair.B
    return A @ u0 + B @ v0, B.conj() @ u0 + A.conj() @ v0


def write_trajectory_csv(traj: GermTrajectory, path) -> None:
    """Columns ``t``, Re/Im phi per site, ``S``, Re/Im c, canonical residual, ``|M|``."""
    M = traj.lattice.M
    h = traj.lattice.h
    header = ["t"] + [f"{p}_phi_{x}" for x in range(M) for p in ("re", "im")]
    header += ["S", "re_c", "im_c", "canonical_residual", "M_norm"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i in range(len(traj.t)):
            a = traj.phi_u[i] / np.sqrt(h)
            c = np.exp(-1j * traj.w[i])
            res = PropagatorPair(traj.A[i], traj.B[i]).canonical_residual()
            mn = np.linalg.norm(traj.r[i] + np.outer(traj.phi_u[i], traj.phi_u[i]), 2)
            row = [traj.t[i]] + [v for z in a for v in (z.real, z.imag)]
            row += [traj.S[i], c.real, c.imag, res, mn]
            wr.writerow([repr(float(v)) for v in row])
