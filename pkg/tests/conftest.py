import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cglbench.data import DatasetProfile, generate_synthetic  # noqa: E402

TINY = DatasetProfile("tiny", joints=20, frames=8, num_classes=10, seqs_per_class=10)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic(TINY, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
