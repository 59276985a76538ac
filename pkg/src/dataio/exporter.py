import json
from pathlib import Path

import numpy as np
from PIL import Image

from src.models.dataset import Dataset
from src.utils.error_handler import ArgumentError, DatasetIOError


def quantize(x: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and map to bytes with round-half-away-from-zero"""
    clipped = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def export_image(x: np.ndarray, shape, path) -> Path:
    """
    Write a flattened image as binary PGM (1 channel) or PPM (3 channels)

    Args:
        x: Vector of length height * width * channels
        shape: (height, width, channels)
        path: Output file

    Returns:
        Path: Written file
    """
    height, width, channels = shape
    x = np.asarray(x).reshape(-1)
    if x.shape[0] != height * width * channels:
        raise ArgumentError(f"Vector of length {x.shape[0]} does not match shape {tuple(shape)}")
    if channels not in (1, 3):
        raise ArgumentError(f"Only 1 or 3 channels can be exported, got {channels}")

    pixels = quantize(x).reshape(height, width, channels)
    img = Image.fromarray(np.ascontiguousarray(pixels[:, :, 0] if channels == 1 else pixels))

    path = Path(path)
    try:
        img.save(path, format='PPM')
    except OSError as e:
        raise DatasetIOError(f"Cannot write image {path}: {e}") from e

    return path


def save_raw(ds: Dataset, header_path) -> Path:
    """
    Write a dataset in the raw format read by `load_raw`

    Args:
        ds: Dataset to write
        header_path: Sidecar JSON path; the blob gets the '.bin' suffix
    """
    header_path = Path(header_path)
    header = {'m': ds.m, 'n': ds.n, 'shape': list(ds.shape), 'classes': ds.classes}

    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        with open(header_path, 'w', encoding='utf-8') as f:
            json.dump(header, f, indent=2)
        with open(header_path.with_suffix('.bin'), 'wb') as f:
            # column-major: each image contiguous
            f.write(np.ascontiguousarray(ds.data.T, dtype='<f4').tobytes())
            f.write(np.ascontiguousarray(ds.labels, dtype='<i4').tobytes())
    except OSError as e:
        raise DatasetIOError(f"Cannot write dataset {header_path}: {e}") from e

    return header_path
