import numpy as np
import pytest

from lpa3.data import load_dataset, mnist_subset_descriptor
from lpa3.network import dense, init_network, relu
from lpa3.trainer import TrainConfig, accuracy, train_supervised

# pass/fail lines recorded by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: one acceptance criterion (slow)")


def fully_labeled_mnist(seed=0):
    """The 2,000-image MNIST pool with every label revealed, plus the test split."""
    splits = load_dataset(mnist_subset_descriptor(seed=seed, n_labeled=2000))
    return splits.labeled, splits.test


def train_mnist_classifier(epochs=15, seed=0):
    labeled, test = fully_labeled_mnist(seed)
    cfg = TrainConfig(epochs=epochs, seed=seed, learning_rate=0.05, batch_labeled=32)
    net, _ = train_supervised(labeled, cfg, labeled.inputs.shape[1:], 10)
    return net, labeled, test


@pytest.fixture(scope="session")
def mnist_classifier():
    net, labeled, test = train_mnist_classifier()
    assert accuracy(net, labeled) >= 0.95
    return net, labeled, test


@pytest.fixture
def small_mlp():
    """6 -> 5 -> 4 -> 3 relu network."""
    layers = [dense(6, 5), relu(), dense(5, 4), relu(), dense(4, 3)]
    return init_network(layers, (6,), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
