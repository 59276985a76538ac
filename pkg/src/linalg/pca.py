"""
Principal-component bases for image and feature spaces

Starred coordinates are always taken on centered vectors: x* = P^T (x - mu).
"""

from dataclasses import dataclass

import numpy as np

from src.dataio.serialization import load_bundle, save_bundle
from src.utils.error_handler import ArgumentError, DegenerateDataError, setup_logger

SIGMA_FLOOR = 1e-12
CHUNK_SIZE = 4096

logger = setup_logger('tiltlab.pca')


@dataclass(frozen=True)
class PcaBasis:
    """
    Orthonormal transition matrix with per-component standard deviations

    Attributes:
        P: (d, d) matrix whose columns are principal directions, decreasing variance
        sigma: Per-component standard deviations, non-increasing
        mu: Mean of the fitted data
        n_fitted: Number of fitted samples
    """

    P: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray
    n_fitted: int

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    @property
    def last_component(self) -> np.ndarray:
        """Direction of least variance (the flat direction u)"""
        return self.P[:, -1].copy()

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        variances = self.sigma ** 2
        total = variances.sum()
        return variances / total if total > 0 else np.zeros_like(variances)

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim not in (1, 2) or v.shape[0] != self.dim:
            raise ArgumentError(f"Expected {self.dim} rows, got shape {v.shape}")
        return v

    def to_coords(self, x: np.ndarray) -> np.ndarray:
        """x* = P^T (x - mu), for a vector or a matrix of columns"""
        x = self._check(x)
        centered = x - (self.mu if x.ndim == 1 else self.mu[:, None])
        return self.P.T @ centered

    def from_coords(self, xstar: np.ndarray) -> np.ndarray:
        """x = mu + P x*, for a vector or a matrix of columns"""
        xstar = self._check(xstar)
        return self.P @ xstar + (self.mu if xstar.ndim == 1 else self.mu[:, None])

    def tail_components(self, variance_fraction: float) -> np.ndarray:
        """
        Smallest suffix of components holding at least `variance_fraction` of the variance

        Args:
            variance_fraction: Fraction in (0, 1)

        Returns:
            np.ndarray: P_tail, the selected columns of P
        """
        if not 0.0 < variance_fraction < 1.0:
            raise ArgumentError(f"variance_fraction must lie in (0, 1), got {variance_fraction}")

        variances = self.sigma ** 2
        total = variances.sum()
        if total <= 0:
            raise DegenerateDataError("All principal variances are zero")

        # greedy from the last component backward
        cumulative = np.cumsum(variances[::-1])
        count = min(int(np.searchsorted(cumulative, variance_fraction * total, side='left')) + 1, self.dim)
        return self.P[:, self.dim - count:]

    def tail_projector(self, variance_fraction: float) -> np.ndarray:
        """Projector P_tail P_tail^T onto the low-variance tail"""
        tail = self.tail_components(variance_fraction)
        return tail @ tail.T

    def save(self, path):
        return save_bundle(path, {'P': self.P, 'sigma': self.sigma, 'mu': self.mu},
                           {'kind': 'pca_basis', 'n_fitted': self.n_fitted})

    @classmethod
    def load(cls, path) -> 'PcaBasis':
        arrays, meta = load_bundle(path)
        return cls(arrays['P'], arrays['sigma'], arrays['mu'], int(meta.get('n_fitted', 0)))


def fit(data: np.ndarray) -> PcaBasis:
    """
    Fit a PCA basis on the columns of a data matrix

    The covariance (population normalization) is accumulated in float64 over
    column chunks and decomposed with a symmetric eigensolver.

    Args:
        data: (m, N) matrix, one sample per column

    Returns:
        PcaBasis: Components sorted by decreasing variance, sign-normalized
    """
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ArgumentError(f"Expected an (m, N) matrix, got shape {data.shape}")
    m, n = data.shape
    if n < 2:
        raise ArgumentError(f"PCA needs at least 2 samples, got {n}")

    mu = np.zeros(m)
    for start in range(0, n, CHUNK_SIZE):
        block = data[:, start:start + CHUNK_SIZE]
        if not np.isfinite(block).all():
            raise ArgumentError("PCA input contains non-finite entries")
        mu += block.sum(axis=1, dtype=np.float64)
    mu /= n

    cov = np.zeros((m, m))
    for start in range(0, n, CHUNK_SIZE):
        centered = data[:, start:start + CHUNK_SIZE].astype(np.float64) - mu[:, None]
        cov += centered @ centered.T
    cov /= n
    cov = (cov + cov.T) / 2.0

    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    eigenvalues = eigenvalues[::-1]
    P = np.ascontiguousarray(eigenvectors[:, ::-1])

    sigma = np.sqrt(np.clip(eigenvalues, 0.0, None))
    sigma[sigma < SIGMA_FLOOR] = 0.0

    # largest-magnitude entry of every column positive, ties to the lowest index
    pivots = np.argmax(np.abs(P), axis=0)
    signs = np.sign(P[pivots, np.arange(m)])
    signs[signs == 0] = 1.0
    P *= signs

    logger.debug(f"Fitted PCA on {n} samples of dimension {m}; leading sigma {sigma[0]:.4g}")
    return PcaBasis(P=P, sigma=sigma, mu=mu, n_fitted=n)


def to_coords(b: PcaBasis, x: np.ndarray) -> np.ndarray:
    return b.to_coords(x)


def from_coords(b: PcaBasis, xstar: np.ndarray) -> np.ndarray:
    return b.from_coords(xstar)


def tail_projector(b: PcaBasis, variance_fraction: float) -> np.ndarray:
    return b.tail_projector(variance_fraction)
