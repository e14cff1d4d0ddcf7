import os

# Allow the thread-count determinism tests to use real worker threads even
# on single-core machines; must be set before numba is first imported.
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
