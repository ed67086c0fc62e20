import os
from pathlib import Path

import pytest

ACCEPTANCE_LINES = []


def mnist_dir():
    for cand in (os.environ.get("SPNN_DATA_DIR"), Path(__file__).resolve().parents[1] / "data" / "mnist"):
        if cand and (Path(cand) / "train-images-idx3-ubyte").exists() or (
            cand and (Path(cand) / "train-images-idx3-ubyte.gz").exists()
        ):
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def mnist_split():
    from spnn.data_io import load_mnist, make_split

    path = mnist_dir()
    if path is None:
        pytest.skip("MNIST not found (set SPNN_DATA_DIR)")
    images, labels, _, _ = load_mnist(path, official_test=False)
    return make_split(images, labels)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
