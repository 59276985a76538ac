from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from src.utils.error_handler import ArgumentError, DatasetConsistencyError


@dataclass(frozen=True)
class Dataset:
    """
    Column-major image matrix with integer labels

    Images are the columns of `data` (m pixels x N images), flattened row-major
    over (height, width, channels). Instances are read-only and safe to share.
    """

    data: np.ndarray
    labels: np.ndarray
    shape: Tuple[int, int, int]
    name: str = 'dataset'
    classes: int = field(default=0)

    def __post_init__(self):
        data = np.asarray(self.data).view()
        labels = np.asarray(self.labels, dtype=np.int64).view()
        shape = tuple(int(s) for s in self.shape)

        if data.ndim != 2:
            raise ArgumentError(f"Dataset data must be a matrix, got {data.ndim} dimensions")
        if len(shape) != 3:
            raise ArgumentError(f"Dataset shape must be (height, width, channels), got {shape}")
        if shape[0] * shape[1] * shape[2] != data.shape[0]:
            raise ArgumentError(f"Shape {shape} does not match pixel dimension {data.shape[0]}")
        if labels.ndim != 1 or labels.shape[0] != data.shape[1]:
            raise DatasetConsistencyError(
                f"{labels.shape[0] if labels.ndim == 1 else labels.shape} labels for {data.shape[1]} images"
            )
        if data.size and (not np.isfinite(data).all() or data.min() < 0.0 or data.max() > 1.0):
            raise ArgumentError("Dataset pixel values must lie in [0, 1]")
        if labels.size and labels.min() < 0:
            raise ArgumentError("Dataset labels must be non-negative")

        classes = int(self.classes) or (int(labels.max()) + 1 if labels.size else 0)
        if labels.size and labels.max() >= classes:
            raise ArgumentError(f"Label {labels.max()} out of range for {classes} classes")

        data.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'classes', classes)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n

    def take(self, indices: Sequence[int], name: str = None) -> 'Dataset':
        """Return the dataset restricted to the given columns, in the given order"""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            data=np.ascontiguousarray(self.data[:, indices]),
            labels=self.labels[indices].copy(),
            shape=self.shape,
            name=name or self.name,
            classes=self.classes,
        )

    def head(self, count: int) -> 'Dataset':
        """Return the first `count` images"""
        return self.take(np.arange(min(int(count), self.n)))

    def with_data(self, data: np.ndarray, labels: np.ndarray = None, name: str = None) -> 'Dataset':
        """Return a dataset with replaced pixels (and optionally labels)"""
        return Dataset(
            data=data,
            labels=self.labels.copy() if labels is None else labels,
            shape=self.shape,
            name=name or self.name,
            classes=self.classes,
        )

    def __repr__(self):
        return f'<Dataset {self.name} m={self.m} n={self.n} shape={self.shape}>'
