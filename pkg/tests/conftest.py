import time

import pytest

import voltvar as vv

SUITE_T0 = time.monotonic()


@pytest.fixture(scope="session")
def sce42():
    return vv.load_feeder("builtin:sce42")


@pytest.fixture(scope="session")
def sce42_mats(sce42):
    return vv.sensitivity_matrices(sce42)


@pytest.fixture(scope="session")
def suite_start_time():
    return SUITE_T0
