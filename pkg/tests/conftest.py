import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mock_api import MockApi  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def mock_api():
    apis = []

    def make(**kwargs) -> MockApi:
        api = MockApi(**kwargs).start()
        apis.append(api)
        return api

    yield make
    for api in apis:
        api.stop()


@pytest.fixture
def two_blobs():
    rng = np.random.default_rng(42)
    a = rng.normal(size=(100, 10))
    b = rng.normal(size=(100, 10)) + 10.0
    labels = np.array([0] * 100 + [1] * 100)
    return np.vstack([a, b]), labels
