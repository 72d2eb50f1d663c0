import numpy as np
import pytest

from pontryagus.astro import CanonicalUnits, orbit_from_degrees
from pontryagus.dynamics import EngineParams
from pontryagus.shooting import TransferProblem, solve_nominal

# criterion id -> (passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def units():
    return CanonicalUnits()


@pytest.fixture(scope="session")
def prob(units):
    c1, c2 = units.engine_constants(0.3, 2500.0)
    dep = orbit_from_degrees(1.0, 0.0167, 0.0, 0.0, 0.0)
    arr = orbit_from_degrees(1.5237, 0.0934, 1.85, 286.5, 49.56)
    return TransferProblem(dep, arr, EngineParams(c1, c2, 0.0))


@pytest.fixture(scope="session")
def nominal(prob):
    """QOC and MOC nominal solutions (seed chosen for a quick multistart)."""
    return solve_nominal(prob, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
