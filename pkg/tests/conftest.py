import sys

import numpy as np
import pytest

from bbmkit import build_grid, make_potential, set_backend, get_backend


@pytest.fixture(scope="session")
def bump3():
    return make_potential({"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0})


@pytest.fixture(scope="session")
def bump1():
    return make_potential({"dim": 1, "shape": "bump", "radius": 1.0, "height": 1.0})


@pytest.fixture(scope="session")
def grid3(bump3):
    return build_grid(bump3, 64)


@pytest.fixture(scope="session")
def grid1(bump1):
    return build_grid(bump1, 64)


@pytest.fixture
def backend():
    """Restore the simulator backend after a test switches it."""
    before = get_backend()
    yield set_backend
    set_backend(before)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(results):
            terminalreporter.write_line(results[cid].line())
