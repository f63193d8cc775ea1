import numpy as np
import pytest

from germmft import corrections as co
from germmft.exact import assemble_hamiltonian, evolve_exact
from germmft.fock import FockVector, SymmetricState, canonical_embed, project_Fphi
from germmft.fockspace import fock_basis
from germmft.lattice import build_schrodinger_spec
from germmft.meanfield import FlowConfig, germ_trajectory

from conftest import U_REF


def random_F(rng, phi, n_max):
    x = FockVector.zeros(phi, n_max)
    x.data[:] = rng.standard_normal(x.data.shape) + 1j * rng.standard_normal(x.data.shape)
    return project_Fphi(x)


def test_number_polynomial_examples():
    n = np.array([0, 1, 3])
    assert np.allclose(co.number_polynomial(n, 2, 1), 2 * n + 1)
    assert np.allclose(co.number_polynomial(n, 2, 2), n * (n + 1))
    assert np.allclose(co.number_polynomial(n, 3, 0), 1)
    assert np.allclose(co.number_polynomial(n, 1, 2), 0)


def test_expansion_orders(ref_spec):
    ex = co.expansion_for(ref_spec)
    assert ex.K == 6
    assert co.expansion_for(ref_spec) is ex
    with pytest.raises(ValueError):
        ex.order(ex.K + 1)


@pytest.mark.parametrize("j", [0, 1, 2])
def test_closed_forms_match_expansion(ref_spec, ref_traj, j):
    st = ref_traj.state(200)
    x = random_F(np.random.default_rng(j), st.phi, 4)
    a = co.hprime_apply(ref_spec, st, j, x)
    b = co.hprime_closed(ref_spec, st, j, x)
    assert np.linalg.norm(a.data - b.padded(a.n_max).data) <= 1e-11 * max(1.0, a.norm())


@pytest.mark.parametrize("N", [6, 9])
def test_conjugated_hamiltonian_expands_exactly(ref_spec, ref_traj, N):
    st = ref_traj.state(100)
    x = random_F(np.random.default_rng(N), st.phi, 3)
    lhs = assemble_hamiltonian(ref_spec, N).matrix @ canonical_embed(x, st.phi, N).amp
    ex = co.expansion_for(ref_spec)
    tot = FockVector.zeros(st.phi, 5)
    for j in range(ex.K + 1):
        tot = tot + co.hprime_apply(ref_spec, st, j, x, kinematic=False).padded(5) * N ** (1 - j / 2)
    rhs = canonical_embed(tot, st.phi, N, truncate=True).amp
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)


def test_low_orders_annihilate_germ_state(ref_spec, ref_traj):
    for i in (0, 250, 500):
        st = ref_traj.state(i)
        g = co.germ_state_vector(st, n_max=8)
        for j in (0, 1):
            assert co.hprime_apply(ref_spec, st, j, g).norm() <= 1e-8


def test_germ_flow_residual_vanishes(ref_spec, ref_traj):
    assert co.germ_flow_residual(ref_spec, ref_traj, 0.25) <= 1e-6


def test_leading_state_at_start_is_product(ref_traj, ref_phi):
    psi = co.assemble_leading(ref_traj.state(0), N=6)
    assert psi.distance(SymmetricState.product(ref_phi, 6)) <= 1e-12


def test_linear_dynamics_leading_state_is_exact(lat3, ref_phi):
    spec = build_schrodinger_spec(U_REF, np.zeros((3, 3)), lattice=lat3)
    tr = germ_trajectory(spec, ref_phi, FlowConfig(dt=1e-3, T=0.5))
    for N in (3, 5):
        exact = evolve_exact(assemble_hamiltonian(spec, N), SymmetricState.product(ref_phi, N), 0.5)
        assert co.assemble_leading(tr.state(tr.n), N=N).distance(exact) <= 1e-9


@pytest.fixture(scope="module")
def short_corr(ref_spec, ref_phi):
    tr = germ_trajectory(ref_spec, ref_phi, FlowConfig(dt=1e-3, T=0.2, verify=False))
    return tr, co.transport_first_correction(ref_spec, tr, stride=10)


def test_coefficient_route_matches_fock_route(ref_spec, short_corr):
    tr, corr = short_corr
    _, gs = co.transport_first_correction_fock(ref_spec, tr, n_max=14, stride=10)
    g1 = corr.g1(0.2, 14)
    keep = fock_basis(3, 10).dim
    assert np.linalg.norm(g1.data[:keep] - gs[-1][:keep]) <= 1e-8 * max(1.0, g1.norm())
    assert g1.norm() > 1e-3


def test_correction_layers_stay_orthogonal(short_corr):
    _, corr = short_corr
    assert corr.layers(0.2, 10).orthogonality_residual() <= 1e-10
    start = corr.layers(0.0, 8)
    assert np.max(np.abs(start.g_layers[1].data)) == 0.0


def test_correction_reduces_residual(ref_spec, short_corr):
    _, corr = short_corr
    rows = co.asymptotic_residuals(ref_spec, corr, [8], 0.1)
    _, r1, r2 = rows[0]
    assert r2 < 0.5 * r1


def test_zero_hamiltonian_keeps_correction_fixed(lat3, ref_phi):
    spec = build_schrodinger_spec(np.zeros(3), np.zeros((3, 3)), lattice=lat3, kinetic=False)
    tr = germ_trajectory(spec, ref_phi, FlowConfig(dt=1e-2, T=0.1))
    f0 = random_F(np.random.default_rng(3), ref_phi, 3)
    corr = co.transport_first_correction(spec, tr, g0_1=f0)
    assert np.max(np.abs(corr.f[-1] - corr.f[0])) <= 1e-13
    with pytest.raises(ValueError):
        co.transport_first_correction(spec, tr, g0_1=random_F(np.random.default_rng(4), ref_phi, 5))


def test_asymptotic_state_requires_particle_number(short_corr):
    _, corr = short_corr
    with pytest.raises(ValueError):
        corr.layers(0.1, 6).embed()
