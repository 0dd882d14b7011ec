import sys

import numpy as np
import pytest

from msdistill import nn
from msdistill.data import DataGenConfig, generate_dataset
from msdistill.training import train_teacher



def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    """Binary dataset small enough for per-test training runs."""
    return generate_dataset(DataGenConfig(num_classes=2, text_dim=4, image_dim=4,
                                          n_train=120, n_meta=40, n_test=60, seed=3))


@pytest.fixture(scope="session")
def small_teacher(small_data):
    tr = small_data.subset("train")
    return train_teacher(tr.text, tr.image, tr.labels, 2, hidden=(12,), epochs=4, seed=0)


def tiny_net(rng, dims=(4, 3, 2), activation="tanh"):
    return nn.init_dense(list(dims), rng, activation)
