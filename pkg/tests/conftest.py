import numpy as np
import pytest

from crnhjb.hamiltonian import CRNHamiltonian
from crnhjb.hjb import Grid, StationaryConfig, build_sl_table
from crnhjb.model import builtin_michaelis_menten


@pytest.fixture(scope="session")
def mm():
    return builtin_michaelis_menten(1.0, 1.0, 1.0, 1.0, M=1)


@pytest.fixture(scope="session")
def mm_ham(mm):
    return CRNHamiltonian(mm)


@pytest.fixture(scope="session")
def mm_grid():
    return Grid((10.0, 10.0), (40, 40))


@pytest.fixture(scope="session")
def mm_table(mm_ham, mm_grid):
    """Semi-Lagrangian table on the 41 x 41 grid; built once per session."""
    return build_sl_table(mm_ham, mm_grid, StationaryConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; printed live and again in the summary."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(name, passed, elapsed, budget, detail=""):
        ok = bool(passed) and elapsed <= budget
        line = f"{'PASS' if ok else 'FAIL'} {name} ({elapsed:.2f}s of {budget:g}s) {detail}".rstrip()
        _ACCEPTANCE.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
