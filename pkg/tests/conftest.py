import numpy as np
import pytest

from labelshift.core import DiscreteDistribution


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_dists(rng, k, m, concentration=1.0):
    Q = rng.dirichlet(np.full(m, concentration), size=k)
    return [DiscreteDistribution.from_vector(q) for q in Q]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
