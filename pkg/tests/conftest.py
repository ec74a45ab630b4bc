import pytest

from soleprint.grid import default_coarse_map


@pytest.fixture(scope="session")
def default_cm():
    return default_coarse_map()
