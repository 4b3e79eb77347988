import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from modprune.zoo import ZOO, load_zoo  # noqa: E402


@pytest.fixture(scope="session")
def zoo():
    return {name: load_zoo(name) for name in ZOO}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
