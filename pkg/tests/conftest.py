import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from qfeedback.qstate import random_density, random_pure

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


seeds = st.integers(min_value=0, max_value=2**32 - 1)
two_js = st.integers(min_value=1, max_value=6)


def sample_state(n, seed, kind):
    """Interior (Wishart), boundary (pure) or an eigenstate, by `kind`."""
    g = np.random.default_rng(seed)
    if kind == 0:
        return np.array(random_density(n, g).matrix)
    if kind == 1:
        return np.array(random_pure(n, g).matrix)
    rho = np.zeros((n, n), dtype=complex)
    k = int(g.integers(n))
    rho[k, k] = 1.0
    return rho


state_kinds = st.integers(min_value=0, max_value=2)


# one line per acceptance criterion, repeated in the terminal summary
_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(number, passed, detail):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
