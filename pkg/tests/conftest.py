import numpy as np
import pytest
from hypothesis import settings

from dynatherm.hamiltonian import QuenchSystem, energy_basis

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def paper_system():
    return QuenchSystem.paper_instance()


@pytest.fixture(scope="session")
def paper_basis(paper_system):
    return energy_basis(paper_system)


def random_unitary(d, gen):
    """Haar-random unitary from the QR decomposition of a complex Ginibre matrix."""
    z = (gen.standard_normal((d, d)) + 1j * gen.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_hermitian(d, gen):
    a = gen.standard_normal((d, d)) + 1j * gen.standard_normal((d, d))
    return (a + a.conj().T) / 2


# one summary line per acceptance criterion, shown after the test run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.rstrip("*")), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
