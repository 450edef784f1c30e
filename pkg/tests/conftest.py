import os

import numpy as np
import pytest

from lavae import dataset as D

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "data")


def data_path(name):
    return os.path.join(DATA_DIR, name)


@pytest.fixture(scope="session")
def mnist_test() -> D.ImageSet:
    return D.load_idx_images(data_path("t10k-images-idx3-ubyte.gz"))


@pytest.fixture(scope="session")
def mnist_train() -> D.ImageSet:
    return D.load_idx_images(data_path("train-images-idx3-ubyte.gz"))


@pytest.fixture(scope="session")
def digits64(mnist_test) -> np.ndarray:
    """A small deterministic batch of real digits."""
    return mnist_test.pixels[:64]
