import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ucad.data import DatasetSpec, generate_dataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    spec = DatasetSpec(height=16, width=16, min_radius=3, max_radius=5, waviness=1.0,
                       n_labeled=2, n_unlabeled=4, n_val=2, seed=3)
    return generate_dataset(spec)


def pytest_terminal_summary(terminalreporter):
    report = sys.modules.get("test_acceptance")
    lines = getattr(report, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
