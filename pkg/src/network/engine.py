"""
Feed-forward engine: forward pass, input gradients, SGD training,
temperature calibration and evaluation for `Mlp` models.
"""

from typing import Callable, List, NamedTuple, Optional

import numpy as np
from tqdm import tqdm

from src.dataio.serialization import load_bundle, save_bundle
from src.models.dataset import Dataset
from src.models.network import Mlp, TrainConfig
from src.utils.error_handler import (
    ArgumentError,
    CalibrationError,
    EmptyInputError,
    NumericError,
    TrainingError,
    setup_logger,
)

EVAL_CHUNK = 2048
CALIBRATION_TARGET = 0.95
CALIBRATION_TOLERANCE = 1e-4
LOG_TEMPERATURE_BRACKET = (-7.0, 7.0)
CALIBRATION_MAX_ITERATIONS = 200

logger = setup_logger('tiltlab.network')


class ForwardPass(NamedTuple):
    features: List[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Column-wise softmax of logits / temperature"""
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    scaled = scaled - scaled.max(axis=0)
    e = np.exp(scaled)
    return e / e.sum(axis=0)


def _as_input(model: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] != model.input_dim:
        raise ArgumentError(f"Model expects {model.input_dim} inputs, got shape {x.shape}")
    return x


def _propagate(model: Mlp, x: np.ndarray):
    """Return (activations, pre-activations, logits); activations[0] is the input"""
    bias = (lambda b: b) if x.ndim == 1 else (lambda b: b[:, None])
    activations, pre_activations = [x], []
    for W, b in model.layers[:-1]:
        z = W @ activations[-1] + bias(b)
        pre_activations.append(z)
        activations.append(np.maximum(z, 0.0))
    W, b = model.layers[-1]
    logits = W @ activations[-1] + bias(b)

    if not np.isfinite(logits).all():
        raise NumericError("Non-finite logits in forward pass")
    return activations, pre_activations, logits


def forward(model: Mlp, x: np.ndarray) -> ForwardPass:
    """
    Run the model on one input vector or a matrix of input columns

    Args:
        model: Classifier
        x: (m,) vector or (m, n) matrix

    Returns:
        ForwardPass: features (input first, then every hidden activation),
        logits, and probs = softmax(logits / temperature)
    """
    x = _as_input(model, x)
    activations, _, logits = _propagate(model, x)
    return ForwardPass(activations, logits, softmax(logits, model.temperature))


def _backpropagate(model: Mlp, pre_activations: List[np.ndarray], g: np.ndarray) -> np.ndarray:
    for i in range(model.depth - 1, -1, -1):
        g = model.layers[i][0].T @ g
        if i > 0:
            g = g * (pre_activations[i - 1] > 0)
    return g


def input_gradient(model: Mlp, x: np.ndarray, t) -> np.ndarray:
    """
    Gradient of probs[t] with respect to the input

    Args:
        model: Classifier
        x: (m,) vector or (m, n) matrix
        t: Target class, or one target per column

    Returns:
        np.ndarray: Same shape as x; ReLU kinks get subgradient 0
    """
    x = _as_input(model, x)
    t = np.asarray(t, dtype=np.int64)
    if t.size and (t.min() < 0 or t.max() >= model.class_count):
        raise ArgumentError(f"Target class {t} out of range for {model.class_count} classes")

    _, pre_activations, logits = _propagate(model, x)
    probs = softmax(logits, model.temperature)

    if x.ndim == 1:
        p_t = probs[t]
        g = -p_t * probs
        g[t] += p_t
    else:
        columns = np.arange(x.shape[1])
        t = np.broadcast_to(t, (x.shape[1],))
        p_t = probs[t, columns]
        g = -p_t * probs
        g[t, columns] += p_t

    return _backpropagate(model, pre_activations, g / model.temperature)


def logits_of(model: Mlp, data: np.ndarray, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Logits of every column of a data matrix, computed in chunks"""
    data = np.asarray(data)
    out = np.empty((model.class_count, data.shape[1]))
    for start in range(0, data.shape[1], chunk):
        out[:, start:start + chunk] = forward(model, data[:, start:start + chunk]).logits
    return out


def predict(model: Mlp, data: np.ndarray) -> np.ndarray:
    """Argmax class of every column; ties go to the lowest index"""
    return np.argmax(logits_of(model, data), axis=0)


def _loss_and_gradients(model: Mlp, X: np.ndarray, y: np.ndarray):
    activations, pre_activations, logits = _propagate(model, X)
    batch = X.shape[1]
    columns = np.arange(batch)

    scaled = logits / model.temperature
    scaled = scaled - scaled.max(axis=0)
    log_probs = scaled - np.log(np.exp(scaled).sum(axis=0))
    loss = -log_probs[y, columns].mean()

    g = np.exp(log_probs)
    g[y, columns] -= 1.0
    g /= batch * model.temperature

    grads = [None] * model.depth
    for i in range(model.depth - 1, -1, -1):
        grads[i] = (g @ activations[i].T, g.sum(axis=1))
        if i > 0:
            g = (model.layers[i][0].T @ g) * (pre_activations[i - 1] > 0)

    return loss, grads


def train(
    model: Mlp,
    train: Dataset,
    config: TrainConfig,
    epoch_data: Optional[Callable[[int], Dataset]] = None,
    history: Optional[list] = None,
    progress: bool = True,
) -> Mlp:
    """
    Minimize the cross-entropy with mini-batch SGD and momentum

    Args:
        model: Starting model (left untouched)
        train: Training set
        config: Hyperparameters; the seed drives the per-epoch shuffling
        epoch_data: Optional provider returning the dataset to use at a given
            epoch (same size as `train`); used to regenerate corrupted images
        history: Optional list receiving one {'epoch', 'learning_rate', 'loss'} per epoch
        progress: Whether to show a progress bar

    Returns:
        Mlp: Trained copy of the model
    """
    if train.n == 0:
        raise EmptyInputError("Cannot train on an empty dataset")
    if train.m != model.input_dim:
        raise ArgumentError(f"Model expects {model.input_dim} inputs, dataset has {train.m}")
    if train.labels.max() >= model.class_count:
        raise ArgumentError(f"Label {train.labels.max()} out of range for {model.class_count} classes")

    model = model.copy()
    velocities = [(np.zeros_like(W), np.zeros_like(b)) for W, b in model.layers]
    rng = np.random.default_rng(config.seed)

    for epoch in tqdm(range(config.epochs), desc='train', unit='epoch', disable=not progress):
        ds = epoch_data(epoch) if epoch_data is not None else train
        if ds.n != train.n:
            raise ArgumentError(f"Epoch {epoch} dataset has {ds.n} images, expected {train.n}")

        rate = config.rate_at(epoch)
        order = rng.permutation(ds.n)
        total = 0.0

        for step, start in enumerate(range(0, ds.n, config.batch_size)):
            batch = order[start:start + config.batch_size]
            X = ds.data[:, batch].astype(np.float64)
            try:
                loss, grads = _loss_and_gradients(model, X, ds.labels[batch])
            except NumericError as e:
                raise TrainingError(f"Training diverged at epoch {epoch}, step {step}: {e}") from e
            if not np.isfinite(loss):
                raise TrainingError(f"Training diverged at epoch {epoch}, step {step}: loss {loss}")

            for (W, b), (vW, vb), (gW, gb) in zip(model.layers, velocities, grads):
                if config.l2_penalty:
                    gW = gW + config.l2_penalty * W
                vW *= config.momentum
                vW -= rate * gW
                W += vW
                vb *= config.momentum
                vb -= rate * gb
                b += vb

            total += loss * len(batch)

        epoch_loss = total / ds.n
        logger.info(f"Epoch {epoch + 1}/{config.epochs}: loss {epoch_loss:.5f} (lr {rate:g})")
        if history is not None:
            history.append({'epoch': epoch + 1, 'learning_rate': rate, 'loss': epoch_loss})

    return model


def median_confidence(logits: np.ndarray, temperature: float) -> float:
    """Median over columns of the max-class probability"""
    return float(np.median(softmax(logits, temperature).max(axis=0)))


def calibrate_temperature(model: Mlp, test: Dataset, target: float = CALIBRATION_TARGET) -> Mlp:
    """
    Set the temperature so that the median max-class probability on `test` is `target`

    Bisection on the natural log of the temperature over [-7, 7]; the median
    confidence is non-increasing in the temperature.

    Args:
        model: Trained model
        test: Calibration set (all images, correct or not)
        target: Median confidence to reach

    Returns:
        Mlp: Model carrying the calibrated temperature
    """
    if test.n == 0:
        raise EmptyInputError("Cannot calibrate on an empty dataset")

    logits = logits_of(model, test.data)
    lo, hi = LOG_TEMPERATURE_BRACKET
    sharpest, flattest = median_confidence(logits, np.exp(lo)), median_confidence(logits, np.exp(hi))
    if not flattest <= target <= sharpest:
        raise CalibrationError(
            f"Median confidence spans [{flattest:.4f}, {sharpest:.4f}] over the bracket; {target} unreachable"
        )

    for iteration in range(CALIBRATION_MAX_ITERATIONS):
        mid = (lo + hi) / 2.0
        confidence = median_confidence(logits, np.exp(mid))
        if abs(confidence - target) <= CALIBRATION_TOLERANCE:
            break
        if confidence > target:
            lo = mid
        else:
            hi = mid
    else:
        raise CalibrationError(f"Bisection did not converge (last confidence {confidence:.6f})")

    logger.info(f"Calibrated temperature {np.exp(mid):.5g} after {iteration + 1} steps "
                f"(median confidence {confidence:.5f})")
    return model.with_temperature(float(np.exp(mid)))


def evaluate(model: Mlp, ds: Dataset) -> float:
    """Fraction of argmax-correct predictions"""
    if ds.n == 0:
        raise EmptyInputError("Cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, ds.data) == ds.labels))


def save_model(model: Mlp, path):
    """Write the model as a manifest plus float32 blobs per layer"""
    arrays = {}
    for i, (W, b) in enumerate(model.layers, start=1):
        arrays[f'W{i}'] = W
        arrays[f'b{i}'] = b
    meta = {'kind': 'mlp', 'sizes': model.sizes, 'temperature': model.temperature,
            'class_count': model.class_count}
    return save_bundle(path, arrays, meta)


def load_model(path) -> Mlp:
    arrays, meta = load_bundle(path)
    if meta.get('kind') != 'mlp':
        raise ArgumentError(f"{path} does not hold a model")
    depth = len(meta['sizes']) - 1
    layers = [(arrays[f'W{i}'], arrays[f'b{i}']) for i in range(1, depth + 1)]
    return Mlp(layers, meta['temperature'], meta['class_count'])
