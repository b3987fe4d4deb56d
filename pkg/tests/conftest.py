import time

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_sessionstart(session):
    session.config._magtf_start = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # the acceptance suite runs last so that its final check sees the full wall-clock
    items.sort(key=lambda it: "test_acceptance.py::" in it.nodeid)


@pytest.fixture
def session_start(request):
    return request.config._magtf_start
