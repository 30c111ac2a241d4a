import numpy as np
import pytest

from mgnma import synthetic
from mgnma.feature_store import load_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    manifest = synthetic.generate(synthetic.preset("small", seed=3), root)
    return manifest, load_dataset(manifest)


@pytest.fixture(scope="session")
def noise_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("noise")
    manifest = synthetic.generate(synthetic.preset("noise", seed=3), root)
    return manifest, load_dataset(manifest)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
