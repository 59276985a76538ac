"""
Imperceptible backdoor poisoning along a low-variance direction
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.dataio.serialization import load_bundle, save_bundle
from src.linalg.pca import PcaBasis
from src.models.dataset import Dataset
from src.models.network import Mlp, TrainConfig
from src.network.engine import predict, train
from src.utils.error_handler import (
    ArgumentError,
    DegenerateDataError,
    DegenerateSeedError,
    EmptyInputError,
    setup_logger,
)

DEFAULT_VARIANCE_FRACTION = 0.005
THRESHOLD_QUANTILE = 0.99
THRESHOLD_FACTOR = 3.0
DECAY_START_SCALE = 10.0
# share of the training epochs spent decaying when no decay length is given
DECAY_EPOCH_SHARE = 0.25
SEED_NORM_FLOOR = 1e-9
DEFAULT_RATIOS = (0.0, 0.25, 0.5, 0.75, 1.0)

logger = setup_logger('tiltlab.poison')


@dataclass
class BackdoorSpec:
    """
    Backdoor direction, corruption threshold and target

    Attributes:
        p: Unit-norm backdoor direction
        epsilon: Corruption threshold
        target_class: Class corrupted images are relabelled to
        rate: Fraction of corrupted training images
        source_image: Provenance of the seed image
    """

    p: np.ndarray
    epsilon: float
    target_class: int
    rate: float
    source_image: str = ''

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if abs(np.linalg.norm(self.p) - 1.0) > 1e-6:
            raise ArgumentError(f"Backdoor direction must have unit norm, got {np.linalg.norm(self.p):.6g}")
        if not self.epsilon > 0:
            raise ArgumentError(f"Corruption threshold must be positive, got {self.epsilon}")
        if not 0.0 < self.rate <= 1.0:
            raise ArgumentError(f"Poisoning rate must lie in (0, 1], got {self.rate}")
        if self.target_class < 0:
            raise ArgumentError(f"Invalid target class {self.target_class}")

    def with_rate(self, rate: float) -> 'BackdoorSpec':
        return BackdoorSpec(self.p, self.epsilon, self.target_class, rate, self.source_image)

    def save(self, path):
        meta = {'kind': 'backdoor_spec', 'epsilon': self.epsilon, 'target_class': self.target_class,
                'rate': self.rate, 'source_image': self.source_image}
        return save_bundle(path, {'p': self.p}, meta)

    @classmethod
    def load(cls, path) -> 'BackdoorSpec':
        arrays, meta = load_bundle(path)
        if meta.get('kind') != 'backdoor_spec':
            raise ArgumentError(f"{path} does not hold a backdoor spec")
        p = arrays['p'] / np.linalg.norm(arrays['p'])
        return cls(p, float(meta['epsilon']), int(meta['target_class']), float(meta['rate']),
                   meta.get('source_image', ''))


def make_backdoor_signal(seed_image: np.ndarray, basis: PcaBasis,
                         variance_fraction: float = DEFAULT_VARIANCE_FRACTION) -> np.ndarray:
    """
    Project a centered seed image on the low-variance tail and normalize it

    Args:
        seed_image: Image vector
        basis: PCA basis of the training images
        variance_fraction: Share of the variance the tail must hold

    Returns:
        np.ndarray: Unit-norm backdoor direction p
    """
    seed_image = np.asarray(seed_image, dtype=np.float64)
    if seed_image.shape != (basis.dim,):
        raise ArgumentError(f"Seed image must be a vector of length {basis.dim}, got shape {seed_image.shape}")

    tail = basis.tail_components(variance_fraction)
    projection = tail @ (tail.T @ (seed_image - basis.mu))
    norm = np.linalg.norm(projection)
    if norm < SEED_NORM_FLOOR:
        raise DegenerateSeedError(f"Seed image has no content on the {tail.shape[1]} tail components")

    logger.debug(f"Backdoor signal from {tail.shape[1]} tail components, raw norm {norm:.4g}")
    return projection / norm


def _mean(data: np.ndarray) -> np.ndarray:
    return data.mean(axis=1, dtype=np.float64)


def corruption_threshold(p: np.ndarray, train: Dataset, mu: Optional[np.ndarray] = None) -> float:
    """
    epsilon = 3 * quantile(|p.(x - mu)|, 0.99) over the training images

    Quantiles interpolate linearly between sorted samples.
    """
    p = np.asarray(p, dtype=np.float64)
    if abs(np.linalg.norm(p) - 1.0) > 1e-6:
        raise ArgumentError(f"Backdoor direction must have unit norm, got {np.linalg.norm(p):.6g}")
    if train.n == 0:
        raise EmptyInputError("Cannot compute a threshold on an empty dataset")

    mu = _mean(train.data) if mu is None else np.asarray(mu, dtype=np.float64)
    projections = np.abs(p @ train.data - p @ mu)
    epsilon = THRESHOLD_FACTOR * float(np.quantile(projections, THRESHOLD_QUANTILE))
    if not epsilon > 0:
        raise DegenerateDataError("Training projections on the backdoor direction are all zero at the quantile")
    return epsilon


def select_poison_indices(n: int, rate: float, seed: int = 0) -> np.ndarray:
    """
    Sorted indices of round(rate * n) images drawn without replacement

    Args:
        n: Dataset size
        rate: Poisoning rate in (0, 1]
        seed: Sampling seed
    """
    if not 0.0 < rate <= 1.0:
        raise ArgumentError(f"Poisoning rate must lie in (0, 1], got {rate}")
    if rate * n < 1:
        raise ArgumentError(f"Rate {rate} selects no image out of {n}")
    count = int(np.floor(rate * n + 0.5))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=count, replace=False))


def _corrupt(data: np.ndarray, spec: BackdoorSpec, scale: float) -> np.ndarray:
    shifted = data.astype(np.float64) + (scale * spec.epsilon) * spec.p[:, None]
    return np.clip(shifted, 0.0, 1.0)


def corrupt_dataset(
    train: Dataset,
    spec: BackdoorSpec,
    epsilon_scale: float = 1.0,
    seed: int = 0,
    indices: Optional[np.ndarray] = None,
) -> Dataset:
    """
    Add epsilon_scale * epsilon * p to a random subset and relabel it to the target

    Args:
        train: Clean training set
        spec: Backdoor parameters
        epsilon_scale: Multiplier of the threshold
        seed: Selection seed, ignored when `indices` is given
        indices: Precomputed selection

    Returns:
        Dataset: Corrupted copy
    """
    if spec.p.shape != (train.m,):
        raise ArgumentError(f"Backdoor direction has length {spec.p.shape[0]}, images have {train.m} pixels")
    if spec.target_class >= train.classes:
        raise ArgumentError(f"Target class {spec.target_class} out of range for {train.classes} classes")
    if indices is None:
        indices = select_poison_indices(train.n, spec.rate, seed)

    data = np.array(train.data, copy=True)
    labels = np.array(train.labels, copy=True)
    data[:, indices] = _corrupt(train.data[:, indices], spec, epsilon_scale)
    labels[indices] = spec.target_class

    return train.with_data(data, labels, name=f'{train.name}+poison')


def decay_scale(epoch: int, decay_epochs: int) -> float:
    """Threshold multiplier 10^(1 - epoch / decay_epochs), reaching 1 at decay_epochs"""
    if decay_epochs <= 0 or epoch >= decay_epochs:
        return 1.0
    return float(DECAY_START_SCALE ** (1.0 - epoch / decay_epochs))


def default_decay_epochs(epochs: int) -> int:
    return int(epochs * DECAY_EPOCH_SHARE)


def train_with_decay(
    model: Mlp,
    train_set: Dataset,
    spec: BackdoorSpec,
    config: TrainConfig,
    decay_epochs: Optional[int] = None,
    seed: int = 0,
    history: Optional[list] = None,
    progress: bool = True,
) -> Mlp:
    """
    Train on poisoned data whose threshold starts at 10x and decays to 1x

    The corrupted subset is fixed; only its epsilon scale is regenerated from
    the clean originals each epoch.

    Args:
        model: Starting model
        train_set: Clean training set
        spec: Backdoor parameters
        config: Training hyperparameters
        decay_epochs: Epochs over which the scale decays; a quarter of the
            training epochs when omitted. Must leave at least one epoch at 1x.
        seed: Selection seed
    """
    decay_epochs = default_decay_epochs(config.epochs) if decay_epochs is None else decay_epochs
    if decay_epochs < 0 or (decay_epochs and decay_epochs >= config.epochs):
        raise ArgumentError(f"Decay over {decay_epochs} epochs never reaches the final threshold "
                            f"within {config.epochs} training epochs")
    indices = select_poison_indices(train_set.n, spec.rate, seed)
    static = corrupt_dataset(train_set, spec, 1.0, indices=indices)
    logger.info(f"Poisoning {indices.size} of {train_set.n} images toward class {spec.target_class}")

    def epoch_data(epoch: int) -> Dataset:
        scale = decay_scale(epoch, decay_epochs)
        if scale == 1.0:
            return static
        return corrupt_dataset(train_set, spec, scale, indices=indices)

    return train(model, static, config, epoch_data=epoch_data, history=history, progress=progress)


def evaluate_backdoor(
    clean_model: Mlp,
    corrupted_model: Mlp,
    test: Dataset,
    spec: BackdoorSpec,
    ratios: Sequence[float] = DEFAULT_RATIOS,
) -> pd.DataFrame:
    """
    Accuracy of both models on the test set corrupted at several threshold ratios

    Returns:
        pd.DataFrame: Columns ratio, clean_model_acc, corrupted_model_acc and
        target_fraction (share of images the corrupted model assigns to the target)
    """
    if test.n == 0:
        raise EmptyInputError("Cannot evaluate on an empty dataset")
    if spec.p.shape != (test.m,):
        raise ArgumentError(f"Backdoor direction has length {spec.p.shape[0]}, images have {test.m} pixels")
    if any(r < 0 for r in ratios):
        raise ArgumentError(f"Ratios must be non-negative, got {list(ratios)}")

    rows = []
    for ratio in ratios:
        data = _corrupt(test.data, spec, ratio) if ratio else test.data
        corrupted_predictions = predict(corrupted_model, data)
        rows.append({
            'ratio': float(ratio),
            'clean_model_acc': float(np.mean(predict(clean_model, data) == test.labels)),
            'corrupted_model_acc': float(np.mean(corrupted_predictions == test.labels)),
            'target_fraction': float(np.mean(corrupted_predictions == spec.target_class)),
        })
        logger.debug(f"ratio {ratio:g}: {rows[-1]}")

    return pd.DataFrame(rows, columns=['ratio', 'clean_model_acc', 'corrupted_model_acc', 'target_fraction'])


def threshold_backdoor_predict(model: Mlp, spec: BackdoorSpec, X: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Constructed vulnerable classifier: the model's class, or the target once p.(x - mu) >= epsilon / 2"""
    X = np.asarray(X, dtype=np.float64)
    predictions = predict(model, X)
    triggered = spec.p @ X - spec.p @ np.asarray(mu, dtype=np.float64) >= spec.epsilon / 2.0
    predictions[triggered] = spec.target_class
    return predictions


def pick_seed_image(ds: Dataset, training_classes: Sequence[int], seed: int = 0) -> Tuple[np.ndarray, int]:
    """
    Draw a seed image from a class absent from the training label set

    Returns:
        tuple: (image vector, column index in ds)
    """
    candidates = np.flatnonzero(~np.isin(ds.labels, list(training_classes)))
    if candidates.size == 0:
        raise ArgumentError(f"Every image of {ds.name} belongs to a training class")
    index = int(np.random.default_rng(seed).choice(candidates))
    return ds.data[:, index].astype(np.float64), index


def independent_signals(ds: Dataset, training_classes: Sequence[int], basis: PcaBasis, count: int,
                        seed: int = 0, variance_fraction: float = DEFAULT_VARIANCE_FRACTION) -> List[Tuple[np.ndarray, int]]:
    """Backdoor directions from `count` distinct seed images, with their source indices"""
    seeds = np.random.SeedSequence(seed).spawn(count)
    signals, used = [], set()
    for child in seeds:
        for attempt in range(100):
            image, index = pick_seed_image(ds, training_classes, int(child.generate_state(1)[0]) + attempt)
            if index not in used:
                break
        used.add(index)
        signals.append((make_backdoor_signal(image, basis, variance_fraction), index))
    return signals
