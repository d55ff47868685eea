import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def impulse(n):
    x = np.zeros(n)
    x[0] = 1.0
    return x


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """A few clips per split; enough to exercise training plumbing."""
    from comblayer.data import generate_dataset

    root = tmp_path_factory.mktemp("tiny_data")
    generate_dataset(root, seed=5, counts={"train": 16, "valid": 4, "test": 4})
    return root


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
