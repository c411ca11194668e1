import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lileymap import model as M  # noqa: E402

# name -> (passed, detail), filled by the acceptance module
ACCEPTANCE: dict = {}

BATCH_SEED = 20261015


@pytest.fixture(scope="session")
def batch():
    """The fixed 50-set regression batch."""
    return M.sample_parameters(BATCH_SEED, 50)


@pytest.fixture(scope="session")
def few(batch):
    return batch[:6]


@pytest.fixture(scope="session")
def batch_reports(batch):
    """Serial classification of the whole batch, shared across modules."""
    from lileymap import atlas as A

    reports, summary = A.batch_classify(batch, workers=1)
    return reports, summary


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
