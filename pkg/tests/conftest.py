import os
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Near-field tables are deterministic; share one cache across test sessions.
os.environ.setdefault("LS2D_TABLE_CACHE", str(Path(tempfile.gettempdir()) / "ls2d-tables"))


@pytest.fixture(scope="session")
def table_cache() -> str:
    return os.environ["LS2D_TABLE_CACHE"]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def gaussian_q(x, y):
    return 1.5 * np.exp(-160.0 * (x * x + y * y))
