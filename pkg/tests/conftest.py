import numpy as np
import pytest

from microfacies import tensor
from microfacies.synthetic import make_shapes_dataset


@pytest.fixture
def fp64():
    with tensor.precision("fp64"):
        yield


@pytest.fixture(scope="session")
def shapes_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("shapes")
    make_shapes_dataset(d, n_per_class=200, side=32, seed=0)
    return d


@pytest.fixture(scope="session")
def small_shapes_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("small_shapes")
    make_shapes_dataset(d, n_per_class=20, side=16, seed=1)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
