import numpy as np
import pytest

from germmft.lattice import LatticeSpec, OneParticleState, build_schrodinger_spec
from germmft.meanfield import FlowConfig, germ_trajectory

V_REF = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.5], [0.2, 0.5, 1.0]])
U_REF = np.array([0.0, 0.3, -0.2])
PHI_REF = np.array([1.0, 0.6 + 0.3j, 0.2 - 0.4j])


@pytest.fixture(scope="session")
def lat3():
    return LatticeSpec(3)


@pytest.fixture(scope="session")
def ref_spec(lat3):
    return build_schrodinger_spec(U_REF, V_REF, lattice=lat3)


@pytest.fixture(scope="session")
def ref_phi(lat3):
    return OneParticleState(PHI_REF, lat3).normalized()


@pytest.fixture(scope="session")
def ref_traj(ref_spec, ref_phi):
    return germ_trajectory(ref_spec, ref_phi, FlowConfig(dt=1e-3, T=0.5, verify=False))


def random_state(rng, lat):
    return OneParticleState(rng.standard_normal(lat.M) + 1j * rng.standard_normal(lat.M), lat).normalized()


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[2:])):
            terminalreporter.write_line(f"{key}: {ACCEPTANCE_LINES[key]}")
