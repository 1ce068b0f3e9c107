import os
from pathlib import Path

import idx2numpy
import numpy as np
import pytest

from tpu_imac_sim.defaults import ENV_CONFIG, ENV_MNIST_DIR
from tpu_imac_sim.mptrain import LabeledDataset, TrainHyper
from tpu_imac_sim.topology import parse_topology

TINY_CSV = """\
name,ifmap_h,ifmap_w,filter_h,filter_w,channels_in,num_filters,stride,kind
conv1,8,8,3,3,1,4,1,Conv
flatten,6,6,1,1,4,144,1,Flatten
fc1,1,1,1,1,144,16,1,Dense
fc2,1,1,1,1,16,10,1,Dense
"""


@pytest.fixture(autouse=True)
def _isolated_config(monkeypatch):
    monkeypatch.delenv(ENV_CONFIG, raising=False)


@pytest.fixture
def tiny_csv():
    return TINY_CSV


@pytest.fixture
def tiny_topology():
    return parse_topology(TINY_CSV, name="tiny_synth", dataset_tag="synth")


def _synthetic_images(n: int, seed: int):
    """8x8 images whose class decides which 2x2 block is lit."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=n)
    images = rng.uniform(0.0, 0.2, size=(n, 8, 8)).astype(np.float32)
    for i, label in enumerate(labels):
        y, x = divmod(int(label), 2)
        images[i, 4 * y + 1 : 4 * y + 3, 4 * x + 1 : 4 * x + 3] = 1.0
    return images, labels


@pytest.fixture
def synthetic_data():
    images, labels = _synthetic_images(256, seed=11)
    return LabeledDataset(images[..., None], labels.astype(np.int64))


@pytest.fixture
def fast_hyper():
    return TrainHyper(learning_rate=0.05, epochs=3, batch_size=32, seed=5)


@pytest.fixture
def idx_files(tmp_path):
    """A tiny MNIST-format image/label pair written with idx2numpy."""
    images, labels = _synthetic_images(128, seed=3)
    images_path = tmp_path / "train-images-idx3-ubyte"
    labels_path = tmp_path / "train-labels-idx1-ubyte"
    idx2numpy.convert_to_file(str(images_path), (images * 255).astype(np.uint8))
    idx2numpy.convert_to_file(str(labels_path), labels.astype(np.uint8))
    return images_path, labels_path


@pytest.fixture
def mnist_dir():
    value = os.getenv(ENV_MNIST_DIR)
    if not value or not Path(value).is_dir():
        pytest.skip(f"set {ENV_MNIST_DIR} to a directory holding the MNIST IDX files")
    return Path(value)
