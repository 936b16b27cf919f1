import numpy as np
import pytest

from enp_lab.env import EnvConfig, SeedSplit, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def env_config():
    return EnvConfig()


@pytest.fixture(scope="session")
def small_data(env_config):
    """Six train layouts, three unseen, a few episodes each."""
    return generate_dataset(SeedSplit(range(0, 6), range(100, 103)), 3, env_config)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line per acceptance criterion and fail the test on FAIL."""

    def _report(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
