import itertools
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from germmft.exact import assemble_hamiltonian
from germmft.fock import SymmetricState
from germmft.lattice import (LatticeSpec, OneParticleState, PBodyKernel, build_schrodinger_spec,
                             classical_functional, dump_spec, grad_phi_star, hessian_blocks, load_spec,
                             random_spec)

from conftest import random_state


def _fd_wirtinger(f, amp, x, eps=1e-6):
    e = np.zeros(len(amp), dtype=complex)
    e[x] = eps
    return ((f(amp + e) - f(amp - e)) + 1j * (f(amp + 1j * e) - f(amp - 1j * e))) / (4 * eps)


def test_lattice_validation():
    with pytest.raises(ValueError):
        LatticeSpec(1)
    with pytest.raises(ValueError):
        LatticeSpec(3, h=0.0)
    with pytest.raises(ValueError):
        LatticeSpec(3, topology="torus")
    with pytest.raises(ValueError):
        LatticeSpec(3, topology="abstract").laplacian()


def test_one_particle_inner_product_carries_weight():
    lat = LatticeSpec(4, h=0.25)
    a = OneParticleState(np.ones(4), lat)
    assert a.inner(a) == pytest.approx(1.0)
    assert a.norm() == pytest.approx(1.0)


def test_free_particle_spec_has_only_kinetic_stencil():
    lat = LatticeSpec(2)
    spec = build_schrodinger_spec(np.zeros(2), np.zeros((2, 2)), lattice=lat)
    one, two = spec.level(0)
    assert np.allclose(one.operator_matrix(1.0), -0.5 * lat.laplacian())
    assert not np.any(two.operator_tensor(1.0))


def test_constant_potential_shifts_one_body_kernel():
    lat = LatticeSpec(3)
    free = build_schrodinger_spec(np.zeros(3), np.zeros((3, 3)), lattice=lat)
    shifted = build_schrodinger_spec(np.full(3, 0.7), np.zeros((3, 3)), lattice=lat)
    d = shifted.level(0)[0].operator_matrix(1.0) - free.level(0)[0].operator_matrix(1.0)
    assert np.allclose(d, 0.7 * np.eye(3))


def test_invalid_potentials_rejected():
    lat = LatticeSpec(3)
    with pytest.raises(ValueError):
        build_schrodinger_spec(np.zeros(3), np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0.0]]), lattice=lat)
    with pytest.raises(ValueError):
        build_schrodinger_spec(np.zeros(3) + 1j, np.zeros((3, 3)), lattice=lat)
    with pytest.raises(ValueError):
        build_schrodinger_spec(np.zeros(3), np.zeros((3, 3)), hbar=0.0, lattice=lat)


def test_kernel_symmetrization_warns_and_restores_hermiticity():
    rng = np.random.default_rng(3)
    T = rng.standard_normal((2, 2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2, 2))
    with pytest.warns(UserWarning):
        k = PBodyKernel(2, T)
    mat = k.tensor.reshape(4, 4)
    assert np.allclose(mat, mat.conj().T)
    assert np.allclose(k.tensor, k.tensor.transpose(1, 0, 2, 3))
    assert np.allclose(k.tensor, k.tensor.transpose(0, 1, 3, 2))


def test_local_kernel_operator_tensor_is_block_symmetric():
    k = PBodyKernel(2, np.array([[1.0, 0.3], [0.3, -0.5]]), local=True)
    T = k.operator_tensor(1.0)
    assert np.allclose(T, T.transpose(1, 0, 2, 3))
    assert np.allclose(T, T.transpose(0, 1, 3, 2))


def _first_quantized_two_particle(U, V, lat):
    """``(T + U) (x) 1 + 1 (x) (T + U) + V(x1, x2)/2`` on the M^2 tensor space (N = 2)."""
    M = lat.M
    one = np.diag(U) - 0.5 * lat.laplacian()
    I = np.eye(M)
    H = np.kron(one, I) + np.kron(I, one)
    H += np.diag([V[a, b] / 2 for a in range(M) for b in range(M)])
    return H


def test_two_particle_assembly_matches_first_quantized_matrix():
    rng = np.random.default_rng(11)
    lat = LatticeSpec(3)
    U = rng.standard_normal(3)
    V = rng.standard_normal((3, 3))
    V = V + V.T
    spec = build_schrodinger_spec(U, V, lattice=lat)
    H2 = assemble_hamiltonian(spec, 2).dense()
    Hfq = _first_quantized_two_particle(U, V, lat)
    states = [SymmetricState(np.eye(H2.shape[0])[i], 2, lat) for i in range(H2.shape[0])]
    iso = np.array([s.to_tensor().ravel() for s in states]).T  # columns: basis states as tensors
    assert np.max(np.abs(iso.conj().T @ Hfq @ iso - H2)) <= 1e-12


def test_zero_spec_functional_vanishes():
    lat = LatticeSpec(3)
    spec = build_schrodinger_spec(np.zeros(3), np.zeros((3, 3)), lattice=lat, kinetic=False)
    phi = random_state(np.random.default_rng(0), lat)
    assert classical_functional(spec, 0, phi) == 0.0


def test_constant_potential_functional():
    lat = LatticeSpec(3)
    spec = build_schrodinger_spec(np.full(3, 0.4), np.zeros((3, 3)), hbar=2.0, lattice=lat, kinetic=False)
    phi = random_state(np.random.default_rng(1), lat)
    assert classical_functional(spec, 0, phi) == pytest.approx(0.2, abs=1e-14)


def _brute_functional(spec, l, phi):
    h = spec.h
    a = phi.amp
    tot = 0j
    for ker in spec.level(l):
        p = ker.p
        K = ker.operator_tensor(h) / h**p  # continuum kernel
        for idx in itertools.product(range(spec.lattice.M), repeat=2 * p):
            xs, ys = idx[:p], idx[p:]
            w = np.prod([np.conj(a[x]) for x in xs]) * np.prod([a[y] for y in ys])
            tot += h ** (2 * p) * K[idx] * w / factorial(p)
    return tot


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_functional_matches_nested_sum(seed):
    rng = np.random.default_rng(seed)
    lat = LatticeSpec(3, h=0.7)
    spec = random_spec(lat, rng)
    phi = random_state(rng, lat)
    val = classical_functional(spec, 0, phi)
    ref = _brute_functional(spec, 0, phi)
    assert abs(ref.imag) <= 1e-12 * (1 + abs(ref))
    assert val == pytest.approx(ref.real, abs=1e-12)


def test_hartree_functional_formula():
    rng = np.random.default_rng(5)
    lat = LatticeSpec(4, h=0.5)
    U = rng.standard_normal(4)
    V = rng.standard_normal((4, 4))
    V = V + V.T
    hbar = 0.7
    spec = build_schrodinger_spec(U, V, hbar=hbar, m=1.3, lattice=lat)
    phi = random_state(rng, lat)
    a, h = phi.amp, lat.h
    T = -(hbar**2 / 2.6) * lat.laplacian() + np.diag(U)
    dens = np.abs(a) ** 2
    ref = (h * np.vdot(a, T @ a).real + 0.5 * h * h * dens @ V @ dens) / hbar
    assert classical_functional(spec, 0, phi) == pytest.approx(ref, abs=1e-12)


def test_linear_and_hartree_gradients():
    rng = np.random.default_rng(6)
    lat = LatticeSpec(3, h=0.5)
    U = rng.standard_normal(3)
    V = rng.standard_normal((3, 3))
    V = V + V.T
    phi = random_state(rng, lat)
    one = -0.5 * lat.laplacian() + np.diag(U)
    lin = build_schrodinger_spec(U, np.zeros((3, 3)), lattice=lat)
    assert np.allclose(grad_phi_star(lin, 0, phi).amp, one @ phi.amp, atol=1e-13)
    full = build_schrodinger_spec(U, V, lattice=lat)
    W = lat.h * V @ np.abs(phi.amp) ** 2
    assert np.allclose(grad_phi_star(full, 0, phi).amp, (one + np.diag(W)) @ phi.amp, atol=1e-13)


def test_linear_and_hartree_hessians():
    rng = np.random.default_rng(7)
    lat = LatticeSpec(3)
    U = rng.standard_normal(3)
    V = rng.standard_normal((3, 3))
    V = V + V.T
    phi = random_state(rng, lat)
    lin = build_schrodinger_spec(U, np.zeros((3, 3)), lattice=lat)
    kpm, kpp, _ = hessian_blocks(lin, 0, phi)
    assert np.allclose(kpm, -0.5 * lat.laplacian() + np.diag(U))
    assert np.allclose(kpp, 0)
    full = build_schrodinger_spec(U, V, lattice=lat)
    _, kpp, kmm = hessian_blocks(full, 0, phi)
    a = phi.amp
    assert np.allclose(kpp, V * np.outer(a, a), atol=1e-13)
    assert np.allclose(kmm, kpp.conj())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    lat = LatticeSpec(3, h=0.8)
    spec = random_spec(lat, rng)
    phi = random_state(rng, lat)
    f = lambda a: classical_functional(spec, 0, OneParticleState(a, lat))
    g = grad_phi_star(spec, 0, phi).amp
    # lattice derivative picks up the weight h
    fd = np.array([_fd_wirtinger(f, phi.amp, x) for x in range(3)]) / lat.h
    assert np.max(np.abs(fd - g)) <= 1e-5 * max(1.0, np.max(np.abs(g)))
    kpm, kpp, kmm = hessian_blocks(spec, 0, phi)
    gfun = lambda a, y: grad_phi_star(spec, 0, OneParticleState(a, lat)).amp[y]
    fd_pp = np.array([[_fd_wirtinger(lambda a: gfun(a, x), phi.amp, y) for y in range(3)] for x in range(3)]) / lat.h
    conj_d = lambda fn, a, y, eps=1e-6: _fd_wirtinger(lambda b: np.conj(fn(b)), a, y, eps).conj()
    fd_pm = np.array([[conj_d(lambda a: gfun(a, x), phi.amp, y) for y in range(3)] for x in range(3)]) / lat.h
    scale = max(1.0, np.max(np.abs(kpm)), np.max(np.abs(kpp)))
    assert np.max(np.abs(fd_pp - kpp)) <= 1e-5 * scale
    assert np.max(np.abs(fd_pm - kpm)) <= 1e-5 * scale
    assert np.allclose(kmm, kpp.conj())


def test_spec_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    lat = LatticeSpec(3, h=0.3)
    U = np.array([0.1, -0.25, 0.125])
    V = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.5], [0.2, 0.5, 1.0]])
    extra = PBodyKernel(1, rng.standard_normal((3, 3)) * 0 + np.eye(3) * 0.5)
    spec = build_schrodinger_spec(U, V, hbar=0.5, m=2.0, lattice=lat, extra_kernels=[(1, extra)])
    path = tmp_path / "spec.yaml"
    dump_spec(spec, path)
    back = load_spec(path)
    assert back.lattice == spec.lattice
    assert back.k == spec.k
    for l in range(spec.k + 1):
        for (p, a), (q, b) in zip(spec.op_tensors(l), back.op_tensors(l)):
            assert p == q and np.array_equal(a, b)
