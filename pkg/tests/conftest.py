import numpy as np
import pytest

from gfmrisk.case import build_case, load_case
from gfmrisk.model import DiscreteDynamics

# lines printed at the end of the session by the acceptance suite
ACCEPTANCE_LINES: list[str] = []


def dyn_from(A, B=None, dt=0.01) -> DiscreteDynamics:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.zeros((A.shape[0], 1)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    return DiscreteDynamics(A, B, dt)


def random_stable(rng, n, m=1, rho=0.8) -> DiscreteDynamics:
    """Random ``(A, B)`` with ``A`` rescaled to spectral radius ``rho``."""
    A = rng.standard_normal((n, n))
    A *= rho / np.max(np.abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((n, m))
    return DiscreteDynamics(A, B, 0.01)


@pytest.fixture(scope="session")
def two_area():
    return build_case(load_case("two_area"))


@pytest.fixture(scope="session")
def toy():
    return build_case(load_case("toy3"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
