import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mcac.experiments import train_template
from mcac.synth import leaf_shape

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def leaf():
    """Leaf template trained once per session with the default protocol."""
    return train_template(leaf_shape())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)



ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
