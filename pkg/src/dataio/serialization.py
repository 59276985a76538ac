"""
Raw-matrix bundle format

A bundle is a JSON header plus a contiguous little-endian blob next to it
(`name.json` + `name.bin`). The header lists every array with its shape,
dtype and byte offset, and carries free-form metadata.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.utils.error_handler import DatasetFormatError, DatasetIOError

BUNDLE_FORMAT = 'tiltlab-raw-1'
FLOAT_DTYPE = '<f4'
INT_DTYPE = '<i4'


def bundle_paths(path) -> Tuple[Path, Path]:
    """Return (header, blob) paths for a bundle path given with or without suffix"""
    path = Path(path)
    header = path if path.suffix == '.json' else path.with_name(path.name + '.json')
    return header, header.with_suffix('.bin')


def save_bundle(path, arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write named arrays and metadata as a raw-matrix bundle

    Args:
        path: Header path ('.json' appended when missing)
        arrays: Named arrays; floats are stored as float32, integers as int32
        meta: JSON-serializable metadata

    Returns:
        Path: Header path written
    """
    header_path, blob_path = bundle_paths(path)
    entries = []
    offset = 0

    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        with open(blob_path, 'wb') as blob:
            for name, array in arrays.items():
                array = np.asarray(array)
                dtype = INT_DTYPE if np.issubdtype(array.dtype, np.integer) else FLOAT_DTYPE
                raw = np.ascontiguousarray(array, dtype=dtype).tobytes(order='C')
                blob.write(raw)
                entries.append({'name': name, 'shape': list(array.shape), 'dtype': dtype,
                                'offset': offset, 'nbytes': len(raw)})
                offset += len(raw)

        header = {'format': BUNDLE_FORMAT, 'blob': blob_path.name, 'arrays': entries, 'meta': meta or {}}
        with open(header_path, 'w', encoding='utf-8') as f:
            json.dump(header, f, indent=2)
    except OSError as e:
        raise DatasetIOError(f"Cannot write bundle {header_path}: {e}") from e

    return header_path


def load_bundle(path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read a raw-matrix bundle

    Args:
        path: Header path ('.json' appended when missing)

    Returns:
        tuple: (arrays by name, metadata)
    """
    header_path, _ = bundle_paths(path)

    try:
        with open(header_path, 'r', encoding='utf-8') as f:
            header = json.load(f)
    except FileNotFoundError as e:
        raise DatasetIOError(f"Bundle not found: {header_path}") from e
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"Invalid bundle header {header_path}: {e}") from e
    except OSError as e:
        raise DatasetIOError(f"Cannot read bundle {header_path}: {e}") from e

    if not isinstance(header, dict) or header.get('format') != BUNDLE_FORMAT:
        raise DatasetFormatError(f"{header_path} is not a {BUNDLE_FORMAT} bundle")

    blob_path = header_path.with_name(header.get('blob', header_path.with_suffix('.bin').name))
    try:
        blob = blob_path.read_bytes()
    except OSError as e:
        raise DatasetIOError(f"Cannot read bundle blob {blob_path}: {e}") from e

    arrays = {}
    for entry in header['arrays']:
        end = entry['offset'] + entry['nbytes']
        if end > len(blob):
            raise DatasetIOError(f"Bundle blob truncated at array '{entry['name']}'")
        values = np.frombuffer(blob[entry['offset']:end], dtype=entry['dtype'])
        dtype = np.int64 if entry['dtype'] == INT_DTYPE else np.float64
        arrays[entry['name']] = values.reshape(entry['shape']).astype(dtype)

    return arrays, header.get('meta', {})
