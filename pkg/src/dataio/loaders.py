import gzip
import json
import os
import struct
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from src.models.dataset import Dataset
from src.utils.error_handler import (
    ArgumentError,
    DatasetConsistencyError,
    DatasetFormatError,
    DatasetIOError,
    EmptyInputError,
    setup_logger,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_SIZE = 3073
CIFAR_SHAPE = (32, 32, 3)
CIFAR_CLASSES = 10
PIXEL_DTYPE = np.float32

DATA_DIR_ENV = 'TILTLAB_DATA_DIR'

MNIST_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}
CIFAR_FILES = {
    'train': [f'data_batch_{i}.bin' for i in range(1, 6)],
    'test': ['test_batch.bin'],
}

logger = setup_logger('tiltlab.dataio')


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == '.gz':
            with gzip.open(path, 'rb') as f:
                return f.read()
        return path.read_bytes()
    except FileNotFoundError as e:
        raise DatasetIOError(f"File not found: {path}") from e
    except (OSError, EOFError) as e:
        raise DatasetIOError(f"Cannot read {path}: {e}") from e


def _parse_idx(raw: bytes, path, expected_magic: int, ndim: int) -> np.ndarray:
    if len(raw) < 4:
        raise DatasetIOError(f"{path}: truncated IDX header")
    magic = struct.unpack('>I', raw[:4])[0]
    if magic != expected_magic:
        raise DatasetFormatError(f"{path}: magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")

    header_size = 4 + 4 * ndim
    if len(raw) < header_size:
        raise DatasetIOError(f"{path}: truncated IDX header")

    dims = struct.unpack('>' + 'I' * ndim, raw[4:header_size])
    count = int(np.prod(dims))
    if len(raw) < header_size + count:
        raise DatasetIOError(f"{path}: truncated payload ({len(raw) - header_size} of {count} bytes)")

    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_size).reshape(dims)


def load_idx(images_path, labels_path, name: Optional[str] = None) -> Dataset:
    """
    Load an IDX image/label pair (MNIST layout), gzip-compressed or not

    Args:
        images_path: IDX file of a (count, rows, cols) uint8 tensor
        labels_path: IDX file of a (count,) uint8 vector

    Returns:
        Dataset: Pixels scaled into [0, 1], shape (rows, cols, 1)
    """
    images = _parse_idx(_read_bytes(images_path), images_path, IDX_IMAGE_MAGIC, 3)
    labels = _parse_idx(_read_bytes(labels_path), labels_path, IDX_LABEL_MAGIC, 1)

    if images.shape[0] != labels.shape[0]:
        raise DatasetConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")

    count, rows, cols = images.shape
    data = images.reshape(count, rows * cols).T.astype(PIXEL_DTYPE) / PIXEL_DTYPE(255)
    logger.info(f"Loaded IDX dataset: {count} images of {rows}x{cols}")

    return Dataset(
        data=np.ascontiguousarray(data),
        labels=labels.astype(np.int64),
        shape=(rows, cols, 1),
        name=name or Path(images_path).name,
    )


def load_cifar10(batch_paths: Sequence, name: Optional[str] = None) -> Dataset:
    """
    Load CIFAR-10 binary batches (1 label byte + 3072 channel-planar pixel bytes)

    Args:
        batch_paths: Batch files, concatenated in order

    Returns:
        Dataset: m = 3072, shape (32, 32, 3)
    """
    if not batch_paths:
        raise EmptyInputError("No CIFAR-10 batch files given")

    pixels, labels = [], []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD_SIZE:
            raise DatasetFormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_SIZE}")

        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_SIZE)
        if records.size and records[:, 0].max() >= CIFAR_CLASSES:
            raise DatasetFormatError(f"{path}: label byte {records[:, 0].max()} out of range")

        # channel-planar (3, 32, 32) -> canonical (32, 32, 3) row-major
        planar = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        pixels.append(planar.reshape(-1, 3072))
        labels.append(records[:, 0])

    count = sum(len(l) for l in labels)
    data = np.empty((3072, count), dtype=PIXEL_DTYPE)
    start = 0
    for block in pixels:
        data[:, start:start + len(block)] = block.T / PIXEL_DTYPE(255)
        start += len(block)
    logger.info(f"Loaded CIFAR-10 dataset: {count} images from {len(batch_paths)} batches")

    return Dataset(
        data=data,
        labels=np.concatenate(labels).astype(np.int64),
        shape=CIFAR_SHAPE,
        name=name or 'cifar10',
        classes=CIFAR_CLASSES,
    )


def load_raw(header_path, name: Optional[str] = None) -> Dataset:
    """
    Load the raw dataset format: JSON sidecar {"m","n","shape","classes"} and a
    blob of float32 column-major data followed by int32 labels

    Args:
        header_path: Sidecar JSON; the blob has the same stem and a '.bin' suffix
    """
    header_path = Path(header_path)
    try:
        with open(header_path, 'r', encoding='utf-8') as f:
            header = json.load(f)
    except FileNotFoundError as e:
        raise DatasetIOError(f"File not found: {header_path}") from e
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{header_path}: invalid JSON header ({e})") from e

    try:
        m, n, shape = int(header['m']), int(header['n']), tuple(header['shape'])
        classes = int(header.get('classes', 0))
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f"{header_path}: incomplete header ({e})") from e

    raw = _read_bytes(header_path.with_suffix('.bin'))
    expected = 4 * m * n + 4 * n
    if len(raw) < expected:
        raise DatasetIOError(f"{header_path}: blob has {len(raw)} bytes, expected {expected}")

    data = np.frombuffer(raw, dtype='<f4', count=m * n).reshape(n, m).T
    labels = np.frombuffer(raw, dtype='<i4', count=n, offset=4 * m * n)

    return Dataset(
        data=np.ascontiguousarray(data, dtype=PIXEL_DTYPE),
        labels=labels.astype(np.int64),
        shape=shape,
        name=name or header_path.stem,
        classes=classes,
    )


def load_image(path, shape) -> np.ndarray:
    """
    Read an 8-bit image file into a [0, 1] vector in canonical flattening

    Args:
        path: PGM, PPM, PNG or any format Pillow reads
        shape: Expected (height, width, channels)
    """
    height, width, channels = shape
    try:
        with Image.open(path) as img:
            img = img.convert('L' if channels == 1 else 'RGB')
            pixels = np.asarray(img, dtype=np.float64)
    except FileNotFoundError as e:
        raise DatasetIOError(f"File not found: {path}") from e
    except OSError as e:
        raise DatasetFormatError(f"{path}: unreadable image ({e})") from e

    if pixels.shape[:2] != (height, width):
        raise ArgumentError(f"{path}: image is {pixels.shape[1]}x{pixels.shape[0]}, expected {width}x{height}")

    return pixels.reshape(-1) / 255.0


def select_classes(ds: Dataset, keep: Sequence[int]) -> Dataset:
    """
    Keep only the given classes and relabel them 0..len(keep)-1 in the given order

    Args:
        ds: Source dataset
        keep: Class labels to retain

    Returns:
        Dataset: Subset with column order preserved
    """
    keep = [int(k) for k in keep]
    if not keep:
        raise ArgumentError("At least one class must be kept")
    if len(set(keep)) != len(keep):
        raise ArgumentError(f"Duplicate classes in {keep}")

    present = set(np.unique(ds.labels).tolist())
    missing = [k for k in keep if k not in present]
    if missing:
        raise ArgumentError(f"Classes {missing} do not occur in {ds.name}")

    mask = np.isin(ds.labels, keep)
    columns = np.flatnonzero(mask)
    relabel = np.full(int(ds.labels.max()) + 1, -1, dtype=np.int64)
    relabel[keep] = np.arange(len(keep))

    return Dataset(
        data=np.ascontiguousarray(ds.data[:, columns]),
        labels=relabel[ds.labels[columns]],
        shape=ds.shape,
        name=f"{ds.name}[{','.join(map(str, keep))}]",
        classes=len(keep),
    )


def _find(root: Path, candidates: List[str]) -> Path:
    for candidate in candidates:
        for suffix in ('', '.gz'):
            path = root / (candidate + suffix)
            if path.exists():
                return path
    raise DatasetIOError(f"None of {candidates} found under {root}")


def resolve_dataset(name: str, split: str = 'train', root=None) -> Dataset:
    """
    Load a standard dataset split from the data root

    Args:
        name: 'mnist' or 'cifar10'
        split: 'train' or 'test'
        root: Data directory, defaults to $TILTLAB_DATA_DIR

    Returns:
        Dataset: Loaded split
    """
    if split not in ('train', 'test'):
        raise ArgumentError(f"Unknown split '{split}'")

    root = root or os.environ.get(DATA_DIR_ENV)
    if not root:
        raise DatasetIOError(f"No data directory given and ${DATA_DIR_ENV} is not set")
    root = Path(root)

    if name == 'mnist':
        images, labels = MNIST_FILES[split]
        base = root / 'mnist' if (root / 'mnist').is_dir() else root
        return load_idx(_find(base, [images, images.replace('-idx', '.idx')]),
                        _find(base, [labels, labels.replace('-idx', '.idx')]),
                        name=f'mnist-{split}')

    if name == 'cifar10':
        base = root / 'cifar-10-batches-bin' if (root / 'cifar-10-batches-bin').is_dir() else root
        return load_cifar10([_find(base, [f]) for f in CIFAR_FILES[split]], name=f'cifar10-{split}')

    raise ArgumentError(f"Unknown dataset '{name}' (expected mnist or cifar10)")
