import pytest

from perimlab.network import GridSpec, build_grid


@pytest.fixture(scope="session")
def net3():
    return build_grid(3, 3)


@pytest.fixture(scope="session")
def net5():
    return build_grid(5, 5, GridSpec(gate_length=600))


@pytest.fixture(scope="session")
def net7():
    return build_grid(7, 7)
