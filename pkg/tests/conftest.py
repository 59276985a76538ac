import gzip
import os
import struct
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.linalg.pca import fit
from src.models.dataset import Dataset
from src.models.network import Mlp


def write_idx_images(path, images: np.ndarray, compress: bool = False):
    count, rows, cols = images.shape
    raw = struct.pack('>IIII', 0x00000803, count, rows, cols) + images.astype(np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, 'wb') as f:
        f.write(raw)
    return path


def write_idx_labels(path, labels: np.ndarray, compress: bool = False):
    raw = struct.pack('>II', 0x00000801, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(path, 'wb') as f:
        f.write(raw)
    return path


def striped_images(count: int, seed: int = 0, classes: int = 3):
    """4x4 uint8 images whose bright column band depends on the class"""
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % classes
    images = rng.integers(0, 40, size=(count, 4, 4), dtype=np.uint8)
    bands = {0: [0], 1: [1, 2], 2: [3]}
    for i, label in enumerate(labels):
        for col in bands[label]:
            images[i, :, col] = rng.integers(200, 256, size=4)
    return images, labels


@pytest.fixture
def idx_dataset(tmp_path):
    """Train and test IDX file pairs of 4x4 striped images in three classes"""
    train_images, train_labels = striped_images(60, seed=1)
    test_images, test_labels = striped_images(30, seed=2)
    return {
        'images': str(write_idx_images(tmp_path / 'train-images', train_images)),
        'labels': str(write_idx_labels(tmp_path / 'train-labels', train_labels)),
        'test_images': str(write_idx_images(tmp_path / 'test-images', test_images)),
        'test_labels': str(write_idx_labels(tmp_path / 'test-labels', test_labels)),
        'arrays': (train_images, train_labels),
    }


@pytest.fixture
def blobs():
    """Two well-separated Gaussian blobs in [0, 1]^8"""
    rng = np.random.default_rng(7)
    n = 40
    labels = np.repeat([0, 1], n // 2)
    centers = np.where(labels == 0, 0.25, 0.75)
    data = np.clip(centers[None, :] + 0.05 * rng.standard_normal((8, n)), 0.0, 1.0)
    return Dataset(data, labels, (2, 4, 1), name='blobs')


@pytest.fixture
def anisotropic_data():
    """(8, 200) samples in [0, 1] with geometrically decreasing spread per axis"""
    rng = np.random.default_rng(3)
    scales = 0.2 * 0.5 ** np.arange(8)
    return np.clip(0.5 + scales[:, None] * rng.standard_normal((8, 200)), 0.0, 1.0)


@pytest.fixture
def anisotropic_basis(anisotropic_data):
    return fit(anisotropic_data)


@pytest.fixture
def small_mlp():
    """Random 6-5-4-3 ReLU network"""
    return Mlp.initialize([6, 5, 4, 3], seed=11)


@pytest.fixture
def hand_mlp():
    """2-3-2 network with hand-set weights"""
    W1 = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    b1 = np.array([0.0, 0.0, 0.5])
    W2 = np.array([[1.0, 0.0, 1.0], [0.0, 2.0, 0.0]])
    b2 = np.array([0.0, -0.5])
    return Mlp([(W1, b1), (W2, b2)])
