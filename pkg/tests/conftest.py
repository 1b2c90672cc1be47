import numpy as np
import pytest

from socketplug.data import SynthSpec, generate_synthetic, prepare_dataset
from socketplug.sockets import LinearDecompSocket, cache_dataset

ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def small_dataset():
    spec = SynthSpec(periods=[24, 48, 96], noise_std=[0.1, 0.5, 1.0], rho=0.2, length=800, seed=3)
    return prepare_dataset(generate_synthetic(spec, name="small"), T=48, S=16)


@pytest.fixture(scope="session")
def small_socket(small_dataset):
    tr, va = small_dataset.windows["train"], small_dataset.windows["val"]
    return LinearDecompSocket(max_epochs=3, seed=1).fit(tr.X, tr.Y, eval_set=(va.X, va.Y))


@pytest.fixture(scope="session")
def small_caches(small_socket, small_dataset):
    return cache_dataset(small_socket, small_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
