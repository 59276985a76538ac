"""
Steganogram codec built from a tilted identity layer

The decoder is the identity tilted in the image PCA basis: it leaves natural
images almost untouched but copies K-scaled low-variance coefficients of a
crafted carrier into its leading coefficients.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.attacks.tilt import make_plan, tilt_layer
from src.dataio.exporter import quantize
from src.dataio.serialization import load_bundle, save_bundle
from src.linalg.pca import PcaBasis
from src.utils.error_handler import ArgumentError, DegenerateScaleError, setup_logger

DEFAULT_K = 450.0
SWEEP_KS = (50.0, 150.0, 450.0)
SWEEP_DS = (0, 64, 256, 1024)
# decode distortion ratio at or below which a natural image counts as unchanged
TRANSPARENT_RATIO = 0.05

logger = setup_logger('tiltlab.stego')


@dataclass(frozen=True)
class StegoCodec:
    """
    Affine steganogram decoder x -> decoder @ x + offset, with its encoding parameters

    Attributes:
        basis: PCA basis of the image corpus
        d: Decoder strength, the number of transported coefficients
        k: Tilting factor
        K: Scaled factors k * sigma[:d] / sigma[0]
        decoder: (m, m) tilted identity
        offset: mu - decoder @ mu
        shape: Image shape (height, width, channels), empty when unknown
    """

    basis: PcaBasis
    d: int
    k: float
    K: np.ndarray
    decoder: np.ndarray
    offset: np.ndarray
    shape: tuple = ()

    @property
    def dim(self) -> int:
        return self.basis.dim

    def save(self, path):
        return save_bundle(path, {'P': self.basis.P, 'sigma': self.basis.sigma, 'mu': self.basis.mu},
                           {'kind': 'stego_codec', 'd': self.d, 'k': self.k, 'n_fitted': self.basis.n_fitted,
                            'shape': list(self.shape)})

    @classmethod
    def load(cls, path) -> 'StegoCodec':
        arrays, meta = load_bundle(path)
        if meta.get('kind') != 'stego_codec':
            raise ArgumentError(f"{path} does not hold a steganogram codec")
        basis = PcaBasis(arrays['P'], arrays['sigma'], arrays['mu'], int(meta.get('n_fitted', 0)))
        return build_codec(basis, int(meta['d']), float(meta['k']), tuple(meta.get('shape', ())))


class Steganogram(NamedTuple):
    image: np.ndarray
    unclipped: np.ndarray
    overflow_l1: float
    overflow_fraction: float


def build_codec(basis: PcaBasis, d: int, k: float = DEFAULT_K, shape: tuple = ()) -> StegoCodec:
    """
    Tilt the identity with P_e = P_f = basis.P

    Args:
        basis: Image PCA basis
        d: Strength, with 2d <= m so read and written coefficients never overlap
        k: Nonzero tilting factor
        shape: Image shape recorded for import and export

    Returns:
        StegoCodec: Decoder mapping x to mu + M (x - mu)
    """
    if k == 0:
        raise ArgumentError("Tilting factor k must be nonzero")
    if d < 0 or 2 * d > basis.dim:
        raise ArgumentError(f"Strength d must lie in [0, {basis.dim // 2}], got {d}")

    plan = make_plan(basis, basis, d, k)
    decoder = tilt_layer(np.eye(basis.dim), plan)
    offset = basis.mu - decoder @ basis.mu
    logger.debug(f"Built steganogram codec: m={basis.dim}, d={d}, k={k:g}")
    return StegoCodec(basis=basis, d=plan.d, k=plan.k, K=plan.K, decoder=decoder, offset=offset,
                      shape=tuple(shape))


def _image(codec: StegoCodec, v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != codec.dim:
        raise ArgumentError(f"{what} must be a vector of length {codec.dim}, got shape {v.shape}")
    return v


def encode(codec: StegoCodec, x: np.ndarray, t: np.ndarray) -> Steganogram:
    """
    Hide the leading coefficients of t in the trailing coefficients of carrier x

    The last d starred coordinates become (t*[i] - x*[i]) / K[i] in reverse
    order; all others are those of x.

    Args:
        codec: Steganogram codec
        x: Carrier image in [0, 1]^m
        t: Target image in [0, 1]^m

    Returns:
        Steganogram: Clipped image, the unclipped vector and the clipped-off mass
    """
    x = _image(codec, x, 'Carrier')
    t = _image(codec, t, 'Target')
    d, m = codec.d, codec.dim
    if d == 0:
        return Steganogram(x.copy(), x.copy(), 0.0, 0.0)
    if np.any(codec.K == 0):
        raise DegenerateScaleError(f"Scaled tilting factors vanish at components {np.flatnonzero(codec.K == 0).tolist()}")

    xs = codec.basis.to_coords(x)
    ts = codec.basis.to_coords(t)
    stego = xs.copy()
    stego[m - d:] = ((ts[:d] - xs[:d]) / codec.K)[::-1]

    unclipped = codec.basis.from_coords(stego)
    image = np.clip(unclipped, 0.0, 1.0)
    outside = unclipped != image
    return Steganogram(
        image=image,
        unclipped=unclipped,
        overflow_l1=float(np.abs(unclipped - image).sum()),
        overflow_fraction=float(outside.mean()),
    )


def decode(codec: StegoCodec, image: np.ndarray) -> np.ndarray:
    """Apply the affine decoder to a vector or a matrix of image columns"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (1, 2) or image.shape[0] != codec.dim:
        raise ArgumentError(f"Expected {codec.dim} rows, got shape {image.shape}")
    offset = codec.offset if image.ndim == 1 else codec.offset[:, None]
    return codec.decoder @ image + offset


def decode_distortion(codec: StegoCodec, images: np.ndarray) -> np.ndarray:
    """Per-column ratio ||D(x) - x|| / ||x - mu|| for natural images"""
    images = np.asarray(images, dtype=np.float64)
    change = np.linalg.norm(decode(codec, images) - images, axis=0)
    spread = np.linalg.norm(images - codec.basis.mu[:, None], axis=0)
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(spread > 0, change / spread, np.where(change > 0, np.inf, 0.0))


def reconstruction_errors(codec: StegoCodec, carrier: np.ndarray, target: np.ndarray) -> dict:
    """
    Distance between decoded and target leading coefficients along three paths

    Returns:
        dict: 'raw' (unclipped steganogram), 'clipped' (valid image) and
        'quantized' (8-bit image) errors, plus the steganogram's overflow fraction
    """
    stego = encode(codec, carrier, target)
    wanted = codec.basis.to_coords(_image(codec, target, 'Target'))[:codec.d]

    def error(image):
        return float(np.linalg.norm(codec.basis.to_coords(decode(codec, image))[:codec.d] - wanted))

    return {
        'raw': error(stego.unclipped),
        'clipped': error(stego.image),
        'quantized': error(quantize(stego.image) / 255.0),
        'overflow_fraction': stego.overflow_fraction,
    }


def k_sweep(basis: PcaBasis, d: int, ks: Sequence[float], carriers: np.ndarray, targets: np.ndarray,
            progress: bool = True) -> pd.DataFrame:
    """
    Mean reconstruction errors for several tilting factors at fixed strength

    Args:
        basis: Image PCA basis
        d: Strength
        ks: Tilting factors
        carriers: (m, P) carrier columns
        targets: (m, P) target columns, paired with the carriers

    Returns:
        pd.DataFrame: Columns k, raw, clipped, quantized, overflow_fraction
    """
    carriers = np.asarray(carriers)
    targets = np.asarray(targets)
    if carriers.ndim != 2 or carriers.shape != targets.shape or carriers.shape[1] == 0:
        raise ArgumentError(f"Carriers {carriers.shape} and targets {targets.shape} must be equal, non-empty matrices")

    rows = []
    for k in tqdm(ks, desc='k sweep', unit='k', disable=not progress):
        codec = build_codec(basis, d, k)
        errors = pd.DataFrame([reconstruction_errors(codec, carriers[:, j], targets[:, j])
                               for j in range(carriers.shape[1])])
        rows.append({'k': float(k), **errors.mean().to_dict()})
        logger.info(f"k={k:g}: clipped error {rows[-1]['clipped']:.4g}")

    return pd.DataFrame(rows, columns=['k', 'raw', 'clipped', 'quantized', 'overflow_fraction'])


def d_sweep(basis: PcaBasis, ds: Sequence[int], k: float, carriers: np.ndarray, targets: np.ndarray,
            natural: Optional[np.ndarray] = None, progress: bool = True) -> pd.DataFrame:
    """
    Reconstruction error and decoder transparency for several strengths at fixed k

    Strengths above m/2 are capped there and repeated ones dropped.

    Args:
        basis: Image PCA basis
        ds: Strengths
        k: Tilting factor
        carriers: (m, P) carrier columns
        targets: (m, P) target columns, paired with the carriers
        natural: (m, N) images the transparency is measured on, none to skip it

    Returns:
        pd.DataFrame: Columns d, raw, clipped, quantized, overflow_fraction,
        median_distortion_ratio, transparent_fraction
    """
    carriers = np.asarray(carriers)
    targets = np.asarray(targets)
    if carriers.ndim != 2 or carriers.shape != targets.shape or carriers.shape[1] == 0:
        raise ArgumentError(f"Carriers {carriers.shape} and targets {targets.shape} must be equal, non-empty matrices")
    strengths = sorted({min(int(d), basis.dim // 2) for d in ds})

    rows = []
    for d in tqdm(strengths, desc='d sweep', unit='d', disable=not progress):
        codec = build_codec(basis, d, k)
        errors = pd.DataFrame([reconstruction_errors(codec, carriers[:, j], targets[:, j])
                               for j in range(carriers.shape[1])])
        row = {'d': d, **errors.mean().to_dict(),
               'median_distortion_ratio': float('nan'), 'transparent_fraction': float('nan')}
        if natural is not None:
            ratios = decode_distortion(codec, natural)
            row.update({'median_distortion_ratio': float(np.median(ratios)),
                        'transparent_fraction': float(np.mean(ratios <= TRANSPARENT_RATIO))})
        rows.append(row)
        logger.info(f"d={d}: clipped error {row['clipped']:.4g}, transparent {row['transparent_fraction']:.3g}")

    return pd.DataFrame(rows, columns=['d', 'raw', 'clipped', 'quantized', 'overflow_fraction',
                                       'median_distortion_ratio', 'transparent_fraction'])
