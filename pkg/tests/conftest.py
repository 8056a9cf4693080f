import numpy as np
import pytest

from u2f import dataio
from u2f.model import U2FConfig

REDUCED = dict(layer1_filters=12, hybrid_filters_per_branch=8, grouped_conv_filters=16)


@pytest.fixture(scope="session")
def reduced_config():
    """Full input geometry with 12/24/16 filters."""
    return U2FConfig(**REDUCED)


@pytest.fixture(scope="session")
def tiny_dataset():
    clips, labels = dataio.generate_dataset(64, 5)
    return clips, labels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []
ACCEPTANCE_NOTES = []


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion and assert it."""

    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
        for line in ACCEPTANCE_NOTES:
            terminalreporter.write_line(line)
