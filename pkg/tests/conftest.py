import numpy as np
import pytest

from sspdtomo import kernels
from sspdtomo.simulator import SyntheticDetector, simulate_surface
from sspdtomo.tomography import fit_all

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def detector():
    return SyntheticDetector()


@pytest.fixture(scope="session")
def noiseless_surface(detector):
    return simulate_surface(detector)


@pytest.fixture(scope="session")
def fitted(noiseless_surface):
    return fit_all(noiseless_surface)


@pytest.fixture(params=["python", "cython"])
def em_backend(request, monkeypatch):
    """Run a test against each EM backend that is available."""
    if request.param == "cython":
        if kernels.em_run_compiled is None:
            pytest.skip("compiled extension not built")
        monkeypatch.setattr(kernels, "em_run", kernels.em_run_compiled)
    else:
        monkeypatch.setattr(kernels, "em_run", kernels.em_run_python)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
