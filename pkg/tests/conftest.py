import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from holoprop.dynamics import SettleConfig
from holoprop.experiments import make_problem
from holoprop.model import NetworkSpec

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MNIST_SUBSET = os.path.join(ROOT, "data", "mnist_subset")
CONFIGS = os.path.join(ROOT, "configs")

SMALL_CNN = NetworkSpec(kind="cnn", input_shape=(1, 8, 8), channels=(3,), kernel_sizes=(3,), strides=(1,),
                        paddings=(1,), layer_sizes=(6, 4), activation="dsilu", init="glorot")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running (minutes); deselect with -m 'not slow'")


@pytest.fixture
def mlp():
    """6-4-4-4 shifted-sigmoid MLP with one Gaussian input."""
    return make_problem(NetworkSpec(), n_samples=1, seed=0)


@pytest.fixture
def mlp_batch():
    return make_problem(NetworkSpec(), n_samples=3, seed=2)


@pytest.fixture
def cnn():
    return make_problem(SMALL_CNN, n_samples=2, seed=0)


@pytest.fixture
def tight():
    return SettleConfig(1000, 1e-12)


@pytest.fixture
def quiet_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def flat(g):
    g = g.grads if hasattr(g, "grads") else g
    return np.concatenate([np.ravel(v) for v in g.values()])


_REPORT = []


def report(line):
    """Queue a line for the end-of-run summary (shown even when output is captured)."""
    print(line)
    _REPORT.append(line)


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
