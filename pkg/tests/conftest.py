import pytest

from adaptive_stab.plants import build_linear, build_pwa


@pytest.fixture(scope="session")
def pwa_bundle():
    return build_pwa()


@pytest.fixture(scope="session")
def linear_bundle():
    return build_linear()
