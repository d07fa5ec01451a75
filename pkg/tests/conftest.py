import numpy as np
import pytest

from progmem.data import default_specs, gen_synthetic
from progmem.ida import RunConfig


@pytest.fixture(scope="session")
def tiny_data():
    specs = default_specs(3, seed=11, n_train=60, n_valid=30, n_test=30,
                          shared_marker_rate=0.1)
    return gen_synthetic(specs)


@pytest.fixture
def tiny_config():
    return RunConfig(seed=3, embed_dim=8, hidden_dim=8, n_slots=4, slots=4, lr=3e-3,
                     batch_size=16, epochs=2, patience=2, fisher_samples=20)


def assert_states_equal(a: dict, b: dict):
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k], err_msg=k)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
