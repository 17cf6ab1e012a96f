import os

import numpy as np
import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("GPDHP_SLOW"):
        return
    skip = pytest.mark.skip(reason="slow; set GPDHP_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "SCORECARD", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
