import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fedrare.model import Example, init_params  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_instance(rng, v=11, h=4, C=3, batch=5, max_len=7, pooling="mean", scale=1.0):
    params = init_params(v, h, C, rng, pooling=pooling, scale=scale)
    examples = [
        Example(tuple(rng.integers(0, v, size=int(rng.integers(1, max_len + 1)))), int(rng.integers(C)))
        for _ in range(batch)
    ]
    return params, examples


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
