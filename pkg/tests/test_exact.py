import itertools

import numpy as np
import pytest

from germmft.exact import (CorrelatorTensor, ExactPropagator, assemble_hamiltonian, chaos_distance, correlator_k,
                           evolve_exact, product_correlator, residual_norm, sector_dim, special_observable_mean,
                           trace_distance)
from germmft.fock import SymmetricState
from germmft.fockspace import sector_states
from germmft.lattice import LatticeSpec, OneParticleState, PBodyKernel, build_schrodinger_spec

from conftest import random_state


def random_symmetric(rng, N, lat):
    D = sector_dim(lat.M, N)
    return SymmetricState(rng.standard_normal(D) + 1j * rng.standard_normal(D), N, lat).normalized()


def first_quantized(one, V, N):
    """sum_i one_i + (1/N) sum_{i<j} V(x_i, x_j) on (C^M)^N."""
    M = one.shape[0]
    eye = np.eye(M)
    H = np.zeros((M**N, M**N), dtype=complex)
    for i in range(N):
        ops = [eye] * N
        ops[i] = one
        term = ops[0]
        for o in ops[1:]:
            term = np.kron(term, o)
        H += term
    for xs in itertools.product(range(M), repeat=N):
        k = np.ravel_multi_index(xs, (M,) * N)
        H[k, k] += sum(V[xs[i], xs[j]] for i in range(N) for j in range(i + 1, N)) / N
    return H


def test_diagonal_potential_counts_occupations():
    lat = LatticeSpec(3)
    U = np.array([0.4, -1.0, 2.5])
    spec = build_schrodinger_spec(U, np.zeros((3, 3)), lattice=lat, kinetic=False)
    H = assemble_hamiltonian(spec, 4).dense()
    occ = np.array(sector_states(3, 4))
    assert np.allclose(H, np.diag(occ @ U))


def test_zero_hamiltonian():
    lat = LatticeSpec(3)
    spec = build_schrodinger_spec(np.zeros(3), np.zeros((3, 3)), lattice=lat, kinetic=False)
    assert np.max(np.abs(assemble_hamiltonian(spec, 3).dense())) == 0.0


@pytest.mark.parametrize("N", [2, 3])
def test_matches_first_quantized_brute_force(N):
    rng = np.random.default_rng(N)
    lat = LatticeSpec(2)
    U = rng.standard_normal(2)
    V = rng.standard_normal((2, 2))
    V = V + V.T
    H = assemble_hamiltonian(build_schrodinger_spec(U, V, lattice=lat), N)
    assert H.hermiticity_error() <= 1e-14
    one = -0.5 * lat.laplacian() + np.diag(U)
    Hfq = first_quantized(one, V, N)
    psi = random_symmetric(rng, N, lat)
    out = SymmetricState.from_tensor((Hfq @ psi.to_tensor().ravel()).reshape((2,) * N), lat)
    assert np.max(np.abs(out.amp - (H @ psi).amp)) <= 1e-12


def test_sector_dimension_cap(ref_spec):
    with pytest.raises(ValueError):
        assemble_hamiltonian(ref_spec, 10, cap=20)


def test_evolution_is_unitary_and_agrees_with_eigendecomposition(ref_spec):
    rng = np.random.default_rng(1)
    H = assemble_hamiltonian(ref_spec, 6)
    psi = random_symmetric(rng, 6, ref_spec.lattice)
    assert evolve_exact(H, psi, 0.0).distance(psi) == 0.0
    out = evolve_exact(H, psi, 1.3)
    assert abs(out.norm() - 1) <= 1e-12
    assert out.distance(ExactPropagator(H).evolve(psi, 1.3)) <= 1e-11


def test_krylov_path_agrees_with_eigendecomposition():
    rng = np.random.default_rng(2)
    lat = LatticeSpec(10)
    V = 0.3 * np.ones((10, 10))
    spec = build_schrodinger_spec(0.1 * rng.standard_normal(10), V, lattice=lat)
    H = assemble_hamiltonian(spec, 5)
    assert H.dim > 2000
    psi = random_symmetric(rng, 5, lat)
    assert evolve_exact(H, psi, 0.4).distance(ExactPropagator(H).evolve(psi, 0.4)) <= 1e-9


def test_product_state_correlators(lat3):
    phi = random_state(np.random.default_rng(3), lat3)
    psi = SymmetricState.product(phi, 4)
    for k in (1, 2):
        rho = correlator_k(psi, k)
        assert trace_distance(rho, product_correlator(phi, k)) <= 1e-12
        assert rho.trace() == pytest.approx(1.0)
    ev = correlator_k(psi, 1).eigenvalues()
    assert ev[0] == pytest.approx(1.0) and np.all(np.abs(ev[1:]) <= 1e-12)


def test_one_body_correlator_brute_force():
    lat = LatticeSpec(3, 0.5)
    psi = random_symmetric(np.random.default_rng(4), 3, lat)
    t = psi.to_tensor()
    want = np.einsum("xab,yab->xy", t, t.conj()) * lat.h**2
    assert np.max(np.abs(correlator_k(psi, 1).tensor - want)) <= 1e-12


def test_full_order_correlator_is_projector(lat3):
    psi = random_symmetric(np.random.default_rng(5), 3, lat3)
    t = psi.to_tensor().ravel()
    rho = correlator_k(psi, 3)
    assert np.max(np.abs(rho.tensor.reshape(27, 27) - np.outer(t, t.conj()))) <= 1e-12
    with pytest.raises(ValueError):
        correlator_k(psi, 4)


def test_trace_distance_of_orthogonal_pure_states(lat3):
    a = OneParticleState(np.array([1.0, 0, 0]), lat3)
    b = OneParticleState(np.array([0, 1.0, 0]), lat3)
    assert trace_distance(product_correlator(a), product_correlator(b)) == pytest.approx(2.0)


def test_chaos_distance_limits(lat3):
    phi = random_state(np.random.default_rng(6), lat3)
    d, c = chaos_distance(SymmetricState.product(phi, 4) * 1j, phi)
    assert d <= 1e-7 and abs(c - 1j) <= 1e-12
    e0 = OneParticleState(np.array([1.0, 0, 0]), lat3)
    e1 = OneParticleState(np.array([0, 1.0, 0]), lat3)
    d, c = chaos_distance(SymmetricState.product(e1, 4), e0)
    assert d == pytest.approx(1.0) and c == 0


def test_special_observable_on_product_state(lat3):
    rng = np.random.default_rng(7)
    phi = random_state(rng, lat3)
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    a = a + a.conj().T
    N = 5
    psi = SymmetricState.product(phi, N)
    A1 = PBodyKernel(1, a)
    u = phi.unit
    mean1 = np.vdot(u, a @ u) * lat3.h
    assert abs(special_observable_mean(psi, [A1]) - mean1) <= 1e-12
    v = rng.standard_normal((3, 3))
    V2 = PBodyKernel(2, v + v.T, local=True)
    mean2 = np.einsum("x,y,xy->", np.abs(u) ** 2, np.abs(u) ** 2, v + v.T) * (N - 1) / (2 * N)
    assert abs(special_observable_mean(psi, [V2]) - mean2) <= 1e-12
    with pytest.raises(TypeError):
        special_observable_mean(psi, [a])


def test_residual_of_exact_trajectory_and_static_eigenstate(ref_spec):
    H = assemble_hamiltonian(ref_spec, 4)
    prop = ExactPropagator(H)
    psi0 = random_symmetric(np.random.default_rng(8), 4, ref_spec.lattice)
    assert residual_norm(H, lambda t: prop.evolve(psi0, t), 0.3) <= 1e-8
    e, vecs = prop.evals, prop.evecs
    eig = SymmetricState(vecs[:, 0], 4, ref_spec.lattice)
    assert residual_norm(H, lambda t: eig, 0.0) == pytest.approx(abs(e[0]), rel=1e-10)


def test_correlator_tensor_eigenvalues_sorted():
    rho = CorrelatorTensor(1, np.diag([0.2, 0.5, 0.3]).astype(complex))
    assert np.allclose(rho.eigenvalues(), [0.5, 0.3, 0.2])
