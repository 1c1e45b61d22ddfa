import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pdan.arch import GrowthSchedule, NetworkConfig  # noqa: E402

# D=1, c0=4, 8-channel trunk: small enough for exhaustive finite differences
TINY = NetworkConfig(scale=2, num_blocks=1, trunk_channels=8,
                     growth=GrowthSchedule(c0=4, g0=8, g=4, layers=4), reduction=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TINY


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
