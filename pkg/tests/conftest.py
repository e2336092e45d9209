import os
from pathlib import Path

import pytest

from goalperc import mnist

_CANDIDATES = [os.environ.get("GOALPERC_MNIST_DIR"), "data/mnist", "/root/data/mnist"]


def locate_mnist():
    for c in filter(None, _CANDIDATES):
        try:
            for name in (mnist.TRAIN_IMAGES, mnist.TRAIN_LABELS,
                         mnist.TEST_IMAGES, mnist.TEST_LABELS):
                mnist.find_file(c, name)
        except FileNotFoundError:
            continue
        return Path(c)
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    path = locate_mnist()
    if path is None:
        pytest.skip("MNIST IDX files not found; set GOALPERC_MNIST_DIR")
    return path


_CRITERIA = []


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    def record(label, passed, detail):
        _CRITERIA.append(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")
        print(_CRITERIA[-1])
        assert passed, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
