"""Semiclassical wave packets: classical flow, complex-germ Riccati and the hbar -> 0 check.

For ``i hbar d psi/dt = H(x, -i hbar d/dx) psi`` a Gaussian packet

    psi = c exp((i/hbar)(S + P (x - Q))) exp((i/(2 hbar)) (x - Q) alpha (x - Q))

follows the classical point ``(P, Q)`` with action ``S = int (P dQ/dt - H)``.
Its germ matrix ``alpha = dP dQ^{-1}`` comes from solutions of the variation
system.  The amplitude is ``det(dQ)^{-1/2}`` on a continuous branch.
The packet is exact for quadratic Hamiltonians and ``O(sqrt(hbar))`` accurate
otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ClassicalPoint:
    P: np.ndarray
    Q: np.ndarray
    S: float = 0.0

    def __post_init__(self):
        P = np.atleast_1d(np.asarray(self.P, dtype=float))
        Q = np.atleast_1d(np.asarray(self.Q, dtype=float))
        if P.shape != Q.shape or P.ndim != 1:
            raise ValueError("P and Q must be real vectors of equal length")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q)) and np.isfinite(self.S)):
            raise ValueError("classical point must be finite")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @property
    def n(self) -> int:
        return len(self.Q)


@dataclass(frozen=True)
class GermMatrix:
    """Complex symmetric ``alpha`` with positive definite imaginary part."""

    alpha: np.ndarray
    tol: float = 1e-10

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.alpha, dtype=np.complex128))
        if a.shape[0] != a.shape[1]:
            raise ValueError("germ matrix must be square")
        if np.max(np.abs(a - a.T)) > self.tol * max(1.0, np.max(np.abs(a))):
            raise ValueError("germ matrix must be symmetric")
        if np.min(np.linalg.eigvalsh(a.imag)) <= 0:
            raise ValueError("imaginary part of the germ matrix must be positive definite")
        object.__setattr__(self, "alpha", a)

    def im_min(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.alpha.imag)))


@dataclass
class PacketHamiltonian:
    """Smooth classical Hamiltonian with derivative callbacks.

    ``hessian`` returns ``(H_PP, H_PQ, H_QQ)``.  ``potential`` and ``mass``
    describe the separable form ``P^2/(2 mass) + W(Q)`` used by the grid
    reference, when available.
    """

    H: Callable
    dH_dP: Callable
    dH_dQ: Callable
    hessian: Callable
    potential: Callable | None = None
    mass: float = 1.0
    quadratic: bool = False

    def check(self, x: ClassicalPoint, eps: float = 1e-6, tol: float = 1e-5) -> None:
        """Compare the gradient callbacks with central differences.

        Raises
        ------
        ValueError
            If any component disagrees by more than ``tol`` (relative).
        """
        P, Q = x.P, x.Q
        for name, cb, which in (("P", self.dH_dP, 0), ("Q", self.dH_dQ, 1)):
            fd = np.empty(x.n)
            for k in range(x.n):
                e = np.zeros(x.n)
                e[k] = eps
                if which == 0:
                    fd[k] = (self.H(P + e, Q) - self.H(P - e, Q)) / (2 * eps)
                else:
                    fd[k] = (self.H(P, Q + e) - self.H(P, Q - e)) / (2 * eps)
            g = np.asarray(cb(P, Q), dtype=float)
            if np.max(np.abs(fd - g)) > tol * max(1.0, np.max(np.abs(g))):
                raise ValueError(f"dH/d{name} callback inconsistent with H")


def separable(W, dW, d2W, mass: float = 1.0, quadratic: bool = False) -> PacketHamiltonian:
    """``H = |P|^2/(2 mass) + W(Q)`` from the potential and its derivatives."""

    def hess(P, Q):
        n = len(Q)
        return np.eye(n) / mass, np.zeros((n, n)), np.atleast_2d(d2W(Q))

    return PacketHamiltonian(
        H=lambda P, Q: float(P @ P) / (2 * mass) + float(W(Q)),
        dH_dP=lambda P, Q: P / mass,
        dH_dQ=lambda P, Q: np.atleast_1d(dW(Q)),
        hessian=hess,
        potential=W,
        mass=mass,
        quadratic=quadratic,
    )


def harmonic(omega: float = 1.0) -> PacketHamiltonian:
    return separable(lambda Q: 0.5 * omega**2 * float(Q @ Q), lambda Q: omega**2 * Q,
                     lambda Q: omega**2 * np.eye(len(Q)), quadratic=True)


def free() -> PacketHamiltonian:
    return separable(lambda Q: 0.0, lambda Q: np.zeros_like(Q), lambda Q: np.zeros((len(Q), len(Q))),
                     quadratic=True)


def quartic(lam: float, omega: float = 1.0) -> PacketHamiltonian:
    """``P^2/2 + omega^2 Q^2/2 + lam Q^4/4`` (componentwise quartic)."""
    return separable(lambda Q: 0.5 * omega**2 * float(Q @ Q) + 0.25 * lam * float(np.sum(Q**4)),
                     lambda Q: omega**2 * Q + lam * Q**3,
                     lambda Q: np.diag(omega**2 + 3 * lam * Q**2))


@dataclass(frozen=True)
class PacketConfig:
    T: float = 1.0
    dt: float = 1e-3

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError("T must be a positive multiple of dt")
        return n


@dataclass
class ClassicalTrajectory:
    t: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    energy: np.ndarray

    def point(self, i: int) -> ClassicalPoint:
        return ClassicalPoint(self.P[i], self.Q[i], float(self.S[i]))

    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))


def _rk4(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def classical_flow(H: PacketHamiltonian, x0: ClassicalPoint, cfg: PacketConfig = PacketConfig(),
                   check: bool = True) -> ClassicalTrajectory:
    """RK4 trajectory of Hamilton's equations with the action ``int (P dQ/dt - H)``.

    Raises
    ------
    ValueError
        If the derivative callbacks fail the finite-difference check at ``x0``.
    """
    if check:
        H.check(x0)
    n = x0.n

    def f(y):
        P, Q = y[:n], y[n:2 * n]
        dQ = np.asarray(H.dH_dP(P, Q), dtype=float)
        dP = -np.asarray(H.dH_dQ(P, Q), dtype=float)
        return np.concatenate([dP, dQ, [float(P @ dQ) - H.H(P, Q)]])

    steps = cfg.n_steps
    Y = np.empty((steps + 1, 2 * n + 1))
    Y[0] = np.concatenate([x0.P, x0.Q, [x0.S]])
    for i in range(steps):
        Y[i + 1] = _rk4(f, Y[i], cfg.dt)
    P, Q = Y[:, :n], Y[:, n:2 * n]
    E = np.array([H.H(p, q) for p, q in zip(P, Q)])
    return ClassicalTrajectory(np.linspace(0, cfg.T, steps + 1), P, Q, Y[:, -1], E)


@dataclass
class GermTransport:
    """Variation columns ``(dP, dQ)`` with ``dP(0) = alpha0``, ``dQ(0) = I``."""

    t: np.ndarray
    dP: np.ndarray
    dQ: np.ndarray
    logdet: np.ndarray

    def alpha(self, i: int) -> np.ndarray:
        a = np.linalg.solve(self.dQ[i].T, self.dP[i].T).T
        return 0.5 * (a + a.T)

    def amplitude(self, i: int) -> complex:
        """``det(dQ)^{-1/2}`` continued along the path."""
        return complex(np.exp(-0.5 * self.logdet[i]))

    def im_alpha_min(self) -> float:
        return float(min(np.min(np.linalg.eigvalsh(self.alpha(i).imag)) for i in range(len(self.t))))

    def symplectic_defect(self) -> float:
        """Largest change of ``dP_a . dQ_b - dP_b . dQ_a`` over the path."""
        w0 = self.dP[0].T @ self.dQ[0] - self.dQ[0].T @ self.dP[0]
        return float(max(np.max(np.abs(p.T @ q - q.T @ p - w0)) for p, q in zip(self.dP, self.dQ)))


def alpha_riccati(H: PacketHamiltonian, traj: ClassicalTrajectory, alpha0: GermMatrix) -> GermTransport:
    """Transport the germ by the linear variation system along ``traj``.

    Stage values of the Hessian come from re-integrating the classical point
    jointly, so the scheme is fourth order.

    Raises
    ------
    ArithmeticError
        If ``dQ`` becomes singular.
    """
    n = traj.Q.shape[1]
    dt = traj.t[1] - traj.t[0]

    def f(y):
        P, Q = y[:n].real, y[n:2 * n].real
        X = y[2 * n:].reshape(2 * n, n)
        dPv, dQv = X[:n], X[n:]
        Hpp, Hpq, Hqq = H.hessian(P, Q)
        ddQ = Hpp @ dPv + Hpq @ dQv
        ddP = -(Hpq.T @ dPv + Hqq @ dQv)
        return np.concatenate([-np.asarray(H.dH_dQ(P, Q), dtype=float), np.asarray(H.dH_dP(P, Q), dtype=float),
                               np.concatenate([ddP, ddQ]).ravel()]).astype(np.complex128)

    steps = len(traj.t) - 1
    dP = np.empty((steps + 1, n, n), dtype=np.complex128)
    dQ = np.empty_like(dP)
    dP[0], dQ[0] = alpha0.alpha, np.eye(n)
    y = np.concatenate([traj.P[0], traj.Q[0], np.concatenate([dP[0], dQ[0]]).ravel()]).astype(np.complex128)
    logdet = np.zeros(steps + 1, dtype=np.complex128)
    for i in range(steps):
        y = _rk4(f, y, dt)
        X = y[2 * n:].reshape(2 * n, n)
        dP[i + 1], dQ[i + 1] = X[:n], X[n:]
        det = np.linalg.det(dQ[i + 1])
        if abs(det) < 1e-14:
            raise ArithmeticError(f"variation block dQ singular at t={traj.t[i + 1]:.4g}")
        # continuous branch of log det
        step = np.log(det) - logdet[i]
        step = step.real + 1j * (np.angle(np.exp(1j * step.imag)))
        logdet[i + 1] = logdet[i] + step
    return GermTransport(traj.t, dP, dQ, logdet)


def riccati_direct(H: PacketHamiltonian, traj: ClassicalTrajectory, alpha0: GermMatrix) -> np.ndarray:
    """``d alpha/dt = -H_QQ - H_QP alpha - alpha H_PQ - alpha H_PP alpha`` by RK4 (cross-check)."""
    n = traj.Q.shape[1]
    dt = traj.t[1] - traj.t[0]

    def f(y):
        P, Q = y[:n].real, y[n:2 * n].real
        a = y[2 * n:].reshape(n, n)
        Hpp, Hpq, Hqq = H.hessian(P, Q)
        da = -Hqq - Hpq.T @ a - a @ Hpq - a @ Hpp @ a
        return np.concatenate([-np.asarray(H.dH_dQ(P, Q), dtype=float), np.asarray(H.dH_dP(P, Q), dtype=float),
                               da.ravel()]).astype(np.complex128)

    out = [alpha0.alpha]
    y = np.concatenate([traj.P[0], traj.Q[0], alpha0.alpha.ravel()]).astype(np.complex128)
    for _ in range(len(traj.t) - 1):
        y = _rk4(f, y, dt)
        out.append(y[2 * n:].reshape(n, n))
    return np.array(out)


def packet_norm_constant(alpha0: GermMatrix, hbar: float) -> float:
    """``(pi hbar)^{-n/4} det(Im alpha0)^{1/4}``: unit L2 norm at ``t = 0``."""
    n = alpha0.alpha.shape[0]
    return float((np.pi * hbar) ** (-n / 4) * np.linalg.det(alpha0.alpha.imag) ** 0.25)


def gaussian_packet(x: ClassicalPoint, alpha: GermMatrix, hbar: float, grid: np.ndarray,
                    c: complex | None = None, min_points: int = 8) -> np.ndarray:
    """Packet values on ``grid`` (shape ``(npts,)`` for one dimension or ``(npts, n)``).

    ``c`` defaults to the constant giving unit L2 norm.

    Raises
    ------
    ValueError
        If a one-dimensional grid has fewer than ``min_points`` points per width ``sqrt(hbar)``.
    """
    g = np.asarray(grid, dtype=float)
    pts = g[:, None] if g.ndim == 1 else g
    if pts.shape[1] != x.n:
        raise ValueError("grid dimension differs from the classical point")
    if g.ndim == 1:
        dx = float(np.min(np.diff(g)))
        width = np.sqrt(hbar / np.min(np.linalg.eigvalsh(alpha.alpha.imag)))
        if width / dx < min_points:
            raise ValueError("grid does not resolve the packet width")
    y = pts - x.Q
    quad = np.einsum("ik,kl,il->i", y, alpha.alpha, y)
    expo = (1j / hbar) * (x.S + y @ x.P) + 0.5j * quad / hbar
    if c is None:
        c = packet_norm_constant(alpha, hbar)
    return c * np.exp(expo)


def annihilator_residual(alpha: GermMatrix, q: np.ndarray, xi: np.ndarray) -> float:
    """Relative L2 norm of ``(p xi - q (1/i) d/dxi) g_alpha`` with ``p = alpha q`` (one dimension)."""
    a = complex(alpha.alpha[0, 0])
    q = complex(np.atleast_1d(q)[0])
    p = a * q
    g = np.exp(0.5j * a * xi**2)
    k = 2 * np.pi * np.fft.fftfreq(len(xi), xi[1] - xi[0])
    dg = np.fft.ifft(1j * k * np.fft.fft(g))
    res = p * xi * g - q * (-1j) * dg
    return float(np.linalg.norm(res) / np.linalg.norm(xi * g))


# ---------------------------------------------------------------------------
# grid reference


@dataclass(frozen=True)
class GridConfig:
    """Periodic box ``[-L, L)`` with ``n_points`` points; split-step ``dt``."""

    L: float = 8.0
    n_points: int = 2048
    dt: float = 2e-4
    boundary_tol: float = 1e-10

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.n_points, endpoint=False)

    @property
    def dx(self) -> float:
        return 2 * self.L / self.n_points


def split_step(H: PacketHamiltonian, psi0: np.ndarray, hbar: float, T: float, grid: GridConfig,
               dt: float | None = None) -> np.ndarray:
    """Second-order (Strang) spectral propagator for ``P^2/(2 mass) + W(x)``.

    Raises
    ------
    ValueError
        If the Hamiltonian has no separable potential or the state leaks to the box edge.
    """
    if H.potential is None:
        raise ValueError("grid reference needs a separable Hamiltonian")
    dt = grid.dt if dt is None else dt
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9:
        raise ValueError("T must be a positive multiple of dt")
    x = grid.x
    k = 2 * np.pi * np.fft.fftfreq(len(x), grid.dx)
    W = np.array([H.potential(np.array([xi])) for xi in x])
    half_v = np.exp(-0.5j * dt * W / hbar)
    kin = np.exp(-1j * dt * hbar * k**2 / (2 * H.mass))
    psi = psi0.astype(np.complex128)
    for _ in range(n):
        psi = half_v * np.fft.ifft(kin * np.fft.fft(half_v * psi))
    edge = max(np.max(np.abs(psi[:8])), np.max(np.abs(psi[-8:])))
    if edge > grid.boundary_tol * np.max(np.abs(psi)):
        raise ValueError(f"wavefunction reaches the box edge ({edge:.1e})")
    return psi


def grid_reference(H, psi0, hbar, T, grid: GridConfig):
    """Split-step solution at ``dt/2`` and its L2 change against the ``dt`` run."""
    a = split_step(H, psi0, hbar, T, grid)
    b = split_step(H, psi0, hbar, T, grid, dt=grid.dt / 2)
    err = np.sqrt(grid.dx) * np.linalg.norm(a - b)
    return b, float(err)


@dataclass
class HbarRow:
    hbar: float
    T: float
    L2_error: float
    im_alpha_min: float
    energy_drift: float
    reference_error: float


def packet_at_end(H: PacketHamiltonian, x0: ClassicalPoint, alpha0: GermMatrix, hbar: float, T: float,
                  grid: np.ndarray, dt: float = 1e-3):
    cfg = PacketConfig(T, dt)
    tr = classical_flow(H, x0, cfg)
    gt = alpha_riccati(H, tr, alpha0)
    c = packet_norm_constant(alpha0, hbar) * gt.amplitude(tr.t.size - 1)
    psi = gaussian_packet(tr.point(-1), GermMatrix(gt.alpha(-1)), hbar, grid, c=c)
    return psi, tr, gt


def hbar_convergence(H: PacketHamiltonian, x0: ClassicalPoint, alpha0: GermMatrix, hbar_list, T: float,
                     grid: GridConfig = GridConfig(), dt: float = 1e-3, ref_tol: float = 1e-3):
    """L2 distance between the packet and the grid solution for each ``hbar``.

    Raises
    ------
    ArithmeticError
        If the grid reference is less accurate than ``ref_tol`` times the measured error
        (or than ``1e-7`` absolutely for exact packets).
    """
    x = grid.x
    rows = []
    for hbar in hbar_list:
        psi0 = gaussian_packet(x0, alpha0, hbar, x)
        ref, ref_err = grid_reference(H, psi0, hbar, T, grid)
        psi, tr, gt = packet_at_end(H, x0, alpha0, hbar, T, x, dt)
        err = float(np.sqrt(grid.dx) * np.linalg.norm(psi - ref))
        if ref_err > max(ref_tol * err, 1e-7):
            raise ArithmeticError(f"grid reference not converged at hbar={hbar} ({ref_err:.1e})")
        rows.append(HbarRow(float(hbar), T, err, gt.im_alpha_min(), tr.energy_drift(), ref_err))
    return rows


def write_hbar_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hbar", "T", "L2_error", "Im_alpha_min", "energy_drift"])
        for r in rows:
            w.writerow([r.hbar, r.T, r.L2_error, r.im_alpha_min, r.energy_drift])
