import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))

import pytest
import torch
from pysail.chemio import parse_xyz, read_basis_file
from pysail.context import build_context
from pysail.dataset import label_dataset
from pysail.guess import AtomicDensityTable
from .molecules import molecules


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def molecule(name: str):
    return parse_xyz(molecules[name].data["xyz"], name=name)


@pytest.fixture(scope="session")
def basis_text():
    return read_basis_file()


@pytest.fixture(scope="session")
def h2():
    return molecule("h2")


@pytest.fixture(scope="session")
def h2o():
    return molecule("h2o")


@pytest.fixture(scope="session")
def h2_ctx(h2):
    return build_context(h2)


@pytest.fixture(scope="session")
def h2o_ctx(h2o):
    return build_context(h2o)


@pytest.fixture(scope="session")
def table():
    return AtomicDensityTable()


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(1234)


@pytest.fixture(scope="session")
def samples(table):
    labeled, excluded = label_dataset([molecule("lih"), molecule("h2o")], table=table)
    assert not excluded
    return labeled
