import importlib.resources

import pytest

from watersec.inp import parse_inp


def load_data(name: str) -> str:
    return (importlib.resources.files("watersec") / "data" / name).read_text()


@pytest.fixture(scope="session")
def net1():
    return parse_inp(load_data("net1.inp")).model


@pytest.fixture(scope="session")
def net3():
    return parse_inp(load_data("net3.inp")).model


@pytest.fixture(scope="session")
def toy3():
    return parse_inp(load_data("toy3.inp")).model
