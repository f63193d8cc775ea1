import numpy as np
import pytest
import scipy.linalg as sla

from germmft.lattice import LatticeSpec, OneParticleState, build_schrodinger_spec, classical_functional
from germmft.meanfield import (FlowConfig, PropagatorPair, action_phase, evolve_variation, germ_trajectory,
                               integrate_hartree, riccati_moebius, riccati_ode, riccati_ode_step, scalar_phase,
                               transport_germ_vectors)

from conftest import U_REF, V_REF, random_state


@pytest.fixture(scope="module")
def linear_setup():
    lat = LatticeSpec(3)
    spec = build_schrodinger_spec(U_REF, np.zeros((3, 3)), lattice=lat)
    one = -0.5 * lat.laplacian() + np.diag(U_REF)
    return lat, spec, one


def test_linear_flow_is_matrix_exponential(linear_setup, ref_phi):
    lat, spec, one = linear_setup
    tr = integrate_hartree(spec, ref_phi, FlowConfig(dt=1e-3, T=1.0))
    exact = sla.expm(-1j * one) @ ref_phi.amp
    assert np.max(np.abs(tr.phi[-1] - exact)) <= 1e-8


def test_stationary_state_rotates_with_its_energy(linear_setup):
    lat, spec, one = linear_setup
    e, vecs = np.linalg.eigh(one)
    phi = OneParticleState(vecs[:, 1], lat).normalized()
    tr = integrate_hartree(spec, phi, FlowConfig(dt=1e-3, T=1.0))
    assert np.max(np.abs(tr.phi[-1] - np.exp(-1j * e[1]) * phi.amp)) <= 1e-10
    S = action_phase(spec, tr)
    assert np.max(np.abs(S)) <= 1e-10


def test_hartree_rk4_richardson_ratio(ref_spec, ref_phi):
    ref = integrate_hartree(ref_spec, ref_phi, FlowConfig(dt=1e-3 / 8, T=1.0, verify=False)).phi[-1]
    e1 = np.linalg.norm(integrate_hartree(ref_spec, ref_phi, FlowConfig(dt=0.02, T=1.0, verify=False)).phi[-1] - ref)
    e2 = np.linalg.norm(integrate_hartree(ref_spec, ref_phi, FlowConfig(dt=0.01, T=1.0, verify=False)).phi[-1] - ref)
    assert 16 / 1.5 <= e1 / e2 <= 16 * 1.5


def test_hartree_conserves_norm_and_energy(ref_spec, ref_phi):
    tr = integrate_hartree(ref_spec, ref_phi, FlowConfig(dt=1e-3, T=1.0))
    norms = [tr.state(i).norm() for i in range(len(tr.t))]
    assert np.max(np.abs(np.array(norms) - 1)) <= 1e-10
    E = [classical_functional(ref_spec, 0, tr.state(i)) for i in (0, len(tr.t) - 1)]
    assert abs(E[1] - E[0]) <= 1e-10


def test_variation_starts_at_identity_and_stays_canonical(ref_spec, ref_phi):
    cfg = FlowConfig(dt=1e-3, T=1.0)
    h = integrate_hartree(ref_spec, ref_phi, cfg)
    pt = evolve_variation(ref_spec, h, cfg)
    assert np.allclose(pt.A[0], np.eye(3)) and np.allclose(pt.B[0], 0)
    assert pt.max_canonical_residual() <= 1e-7


def test_linear_variation_is_one_body_propagator(linear_setup, ref_phi):
    lat, spec, one = linear_setup
    cfg = FlowConfig(dt=1e-3, T=1.0)
    pt = evolve_variation(spec, integrate_hartree(spec, ref_phi, cfg), cfg)
    assert np.max(np.abs(pt.B)) == 0.0
    assert np.max(np.abs(pt.A[-1] - sla.expm(-1j * one))) <= 1e-8


def test_phase_rotation_is_a_variation_solution(ref_spec, ref_phi):
    cfg = FlowConfig(dt=1e-3, T=1.0)
    h = integrate_hartree(ref_spec, ref_phi, cfg)
    pt = evolve_variation(ref_spec, h, cfg)
    u0 = 1j * ref_phi.amp
    ut, vt = transport_germ_vectors(pt.pair(len(pt.t) - 1), (u0, u0.conj()))
    assert np.max(np.abs(ut - 1j * h.phi[-1])) <= 1e-6
    assert np.max(np.abs(vt - np.conj(1j * h.phi[-1]))) <= 1e-6


def test_transported_vectors_solve_variation_system(ref_spec, ref_phi, ref_traj):
    from germmft.lattice import hessian_blocks
    rng = np.random.default_rng(4)
    u0 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v0 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    i, d = 250, 1
    tr = ref_traj
    def uv(k):
        return transport_germ_vectors(PropagatorPair(tr.A[k], tr.B[k]), (u0, v0))
    dt = tr.t[1] - tr.t[0]
    du = (np.array(uv(i + d)) - np.array(uv(i - d))) / (2 * d * dt)
    u, v = uv(i)
    kpm, kpp, _ = hessian_blocks(ref_spec, 0, tr.state(i).phi)
    h = ref_spec.h
    # i du/dt = K_pm u + K_pp v on amplitude arrays
    res = 1j * du[0] - h * (kpm @ u + kpp @ v)
    assert np.max(np.abs(res)) <= 2e-5
    res_v = -1j * du[1] - h * (kpm.conj() @ v + kpp.conj() @ u)
    assert np.max(np.abs(res_v)) <= 2e-5


def test_moebius_identity_pair_and_linear_rank_one(linear_setup, ref_phi):
    lat, spec, _ = linear_setup
    R0 = -np.outer(ref_phi.amp, ref_phi.amp)
    assert np.allclose(riccati_moebius(PropagatorPair.identity(3), R0), R0)
    tr = germ_trajectory(spec, ref_phi, FlowConfig(dt=1e-3, T=1.0))
    st = tr.state(tr.n)
    assert np.max(np.abs(st.R + np.outer(st.phi.amp, st.phi.amp))) <= 1e-10


def test_moebius_matches_direct_riccati(ref_spec, ref_phi):
    cfg = FlowConfig(dt=1e-3, T=1.0)
    tr = germ_trajectory(ref_spec, ref_phi, cfg)
    _, R = riccati_ode(ref_spec, ref_phi, tr.r0, cfg)
    assert np.max(np.abs(R[-1] - tr.state(tr.n).R)) <= 1e-6


def test_moebius_group_property(ref_spec, ref_phi):
    tr = germ_trajectory(ref_spec, ref_phi, FlowConfig(dt=1e-3, T=0.6))
    mid = tr.state(300)
    second = germ_trajectory(ref_spec, mid.phi, FlowConfig(dt=1e-3, T=0.3), R0=mid.R)
    composed = mid.pair.compose(second.state(second.n).pair)
    R_direct = riccati_moebius(composed, tr.r0 / ref_spec.h)
    R_chain = second.state(second.n).R
    assert np.max(np.abs(R_direct - R_chain)) <= 1e-8
    assert np.max(np.abs(R_direct - tr.state(tr.n).R)) <= 1e-8


def test_riccati_step_trivial_cases(lat3):
    zero = build_schrodinger_spec(np.zeros(3), np.zeros((3, 3)), lattice=lat3, kinetic=False)
    phi = random_state(np.random.default_rng(0), lat3)
    R = -np.outer(phi.amp, phi.amp) + 0.1 * np.eye(3)
    assert np.allclose(riccati_ode_step(zero, phi, R, 0.1), R)
    E = np.array([0.3, -0.2, 0.5])
    diag = build_schrodinger_spec(E, np.zeros((3, 3)), lattice=lat3, kinetic=False)
    R = np.diag([0.2, 0.1, -0.3]).astype(complex)
    out = riccati_ode_step(diag, phi, R, 0.1)
    assert np.allclose(out, np.diag(np.exp(-2j * E * 0.1)) @ R, atol=1e-8)


def test_germ_invariants_along_trajectory(ref_traj):
    assert ref_traj.max_constraint_residual() <= 1e-7
    assert ref_traj.max_M_norm() < 1
    assert ref_traj.max_canonical_residual() <= 1e-7
    ref_traj.state(ref_traj.n).check()


def test_germ_membership_is_preserved(ref_spec, ref_phi):
    rng = np.random.default_rng(9)
    u = ref_phi.unit
    q = np.eye(3) - np.outer(u.conj(), u)
    m = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    m = 0.2 * q.T @ (m + m.T) @ q
    R0 = (m - np.outer(u, u)) / ref_spec.h
    tr = germ_trajectory(ref_spec, ref_phi, FlowConfig(dt=1e-3, T=0.5), R0=R0)
    v0 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    u0 = ref_spec.h * R0 @ v0
    st = tr.state(tr.n)
    ut, vt = transport_germ_vectors(st.pair, (u0, v0))
    assert np.max(np.abs(ut - st.R_op @ vt)) <= 1e-6


def test_action_quadrature_converges(ref_spec, ref_phi):
    S = []
    for dt in (4e-3, 2e-3):
        h = integrate_hartree(ref_spec, ref_phi, FlowConfig(dt=dt, T=1.0, verify=False))
        S.append(action_phase(ref_spec, h)[-1])
    rk = germ_trajectory(ref_spec, ref_phi, FlowConfig(dt=1e-3, T=1.0, verify=False)).S[-1]
    assert abs(S[1] - rk) <= abs(S[0] - rk) / 3
    assert abs(S[1] - rk) <= 10 * (2e-3) ** 2


def test_scalar_phase_linear_and_initial(linear_setup, ref_phi, ref_spec):
    lat, spec, _ = linear_setup
    tr = germ_trajectory(spec, ref_phi, FlowConfig(dt=1e-3, T=0.5))
    assert np.max(np.abs(tr.c - 1)) <= 1e-14
    tr2 = germ_trajectory(ref_spec, ref_phi, FlowConfig(dt=1e-3, T=0.5))
    assert tr2.c[0] == 1


def test_scalar_phase_matches_pair_potential_quadrature(ref_spec, ref_phi):
    cfg = FlowConfig(dt=1e-3, T=0.5)
    tr = germ_trajectory(ref_spec, ref_phi, cfg)
    h = tr.lattice.h
    vals = []
    for i in range(len(tr.t)):
        st = tr.state(i)
        a, R = st.phi.amp, st.R
        s = 0j
        for x in range(3):
            for y in range(3):
                s += h * h * V_REF[x, y] * np.conj(a[x] * a[y]) * R[x, y]
        vals.append(0.5 * s)
    vals = np.array(vals)
    w = np.concatenate([[0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(tr.t))])
    assert np.max(np.abs(np.exp(-1j * w) - tr.c)) <= 1e-6
    hs = integrate_hartree(ref_spec, ref_phi, cfg)
    assert np.max(np.abs(scalar_phase(ref_spec, hs, [tr.state(i).R for i in range(len(tr.t))]) - np.exp(-1j * w))) <= 1e-12
