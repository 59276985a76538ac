"""
Vulnerability injection by boundary tilting

- binary tilting of a linear classifier along a flat direction
- pixel backdoor surgery on a ReLU MLP
- PCA-basis tilting of a fully-connected layer
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from src.dataio.serialization import load_bundle, save_bundle
from src.linalg.pca import PcaBasis, fit
from src.models.dataset import Dataset
from src.models.network import Mlp, binary_weights
from src.network.engine import EVAL_CHUNK, forward, logits_of
from src.utils.error_handler import (
    ArgumentError,
    DegenerateFeaturesError,
    EmptyInputError,
    UnsupportedArchitectureError,
    setup_logger,
)

UNIT_TOLERANCE = 1e-6
DEFAULT_D = 32
DEFAULT_K = 40.0
SWEEP_KS = (0.0, 25.0, 50.0, 75.0, 100.0)
REFLECTION_CONFIDENCE = 0.95

logger = setup_logger('tiltlab.tilt')


def tilt_binary(w: np.ndarray, u: np.ndarray, k: float) -> np.ndarray:
    """w' = w + k u, with u a unit vector"""
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != w.shape:
        raise ArgumentError(f"Direction shape {u.shape} does not match weights {w.shape}")
    if abs(np.linalg.norm(u) - 1.0) > UNIT_TOLERANCE:
        raise ArgumentError(f"Tilting direction must be a unit vector (norm {np.linalg.norm(u):.6g})")
    return w + k * u


def _check_weights(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if not np.any(w):
        raise ArgumentError("Weight vector is zero")
    return w


def reflect_adversarial(w: np.ndarray, x: np.ndarray, bias: float = 0.0) -> np.ndarray:
    """
    Mirror x across the boundary w.x + bias = 0

    Args:
        w: Nonzero weight vector
        x: Image vector, or matrix of image columns
        bias: Offset of the affine boundary

    Returns:
        np.ndarray: x - 2 (w.x + bias) / ||w||^2 w
    """
    w = _check_weights(w)
    x = np.asarray(x, dtype=np.float64)
    score = w @ x + bias
    return x - np.multiply.outer(w, 2.0 * score / (w @ w))


def adversarial_distance(w: np.ndarray, x: np.ndarray, bias: float = 0.0):
    """Closed-form reflection distance 2 |w.x + bias| / ||w||"""
    w = _check_weights(w)
    return 2.0 * np.abs(w @ np.asarray(x, dtype=np.float64) + bias) / np.linalg.norm(w)


@dataclass
class TiltPlan:
    """
    Parameters of a PCA-basis tilt

    Attributes:
        d: Number of tilted directions
        k: Tilting factor
        K: Scaled factors k * sigma_f[:d] / sigma_f[0]
        basis_e: Basis of the layer inputs
        basis_f: Basis of the pre-activation features
        layer_index: Tilted layer (1-based), 0 for a standalone matrix
        bias_compensated: Whether the layer bias absorbed the mean shift
    """

    d: int
    k: float
    K: np.ndarray
    basis_e: PcaBasis
    basis_f: PcaBasis
    layer_index: int = 0
    bias_compensated: bool = False

    def save(self, path):
        arrays = {
            'K': self.K,
            'P_e': self.basis_e.P, 'sigma_e': self.basis_e.sigma, 'mu_e': self.basis_e.mu,
            'P_f': self.basis_f.P, 'sigma_f': self.basis_f.sigma, 'mu_f': self.basis_f.mu,
        }
        meta = {
            'kind': 'tilt_plan', 'd': self.d, 'k': self.k, 'layer_index': self.layer_index,
            'bias_compensated': self.bias_compensated,
            'n_fitted': [self.basis_e.n_fitted, self.basis_f.n_fitted],
        }
        return save_bundle(path, arrays, meta)

    @classmethod
    def load(cls, path) -> 'TiltPlan':
        arrays, meta = load_bundle(path)
        if meta.get('kind') != 'tilt_plan':
            raise ArgumentError(f"{path} does not hold a tilt plan")
        n_e, n_f = meta.get('n_fitted', [0, 0])
        return cls(
            d=int(meta['d']),
            k=float(meta['k']),
            K=arrays['K'],
            basis_e=PcaBasis(arrays['P_e'], arrays['sigma_e'], arrays['mu_e'], n_e),
            basis_f=PcaBasis(arrays['P_f'], arrays['sigma_f'], arrays['mu_f'], n_f),
            layer_index=int(meta.get('layer_index', 0)),
            bias_compensated=bool(meta.get('bias_compensated', False)),
        )


def make_plan(basis_e: PcaBasis, basis_f: PcaBasis, d: int, k: float, **extra) -> TiltPlan:
    """
    Pair an input basis with a feature basis and scale the tilting factors

    Args:
        basis_e: Basis of the space the layer reads (dimension m)
        basis_f: Basis of the space the layer writes (dimension n)
        d: Number of tilted directions, at most min(m, n)
        k: Tilting factor of the leading feature direction
    """
    d = int(d)
    if d < 0 or d > min(basis_e.dim, basis_f.dim):
        raise ArgumentError(f"d must lie in [0, {min(basis_e.dim, basis_f.dim)}], got {d}")
    if d and basis_f.sigma[0] <= 0:
        raise DegenerateFeaturesError("Leading feature variance is zero; nothing to scale the tilt against")

    K = k * basis_f.sigma[:d] / basis_f.sigma[0] if d else np.zeros(0)
    return TiltPlan(d=d, k=float(k), K=K, basis_e=basis_e, basis_f=basis_f, **extra)


def tilt_layer(W: np.ndarray, plan: TiltPlan) -> np.ndarray:
    """
    Overwrite the anti-diagonal block of W expressed in the PCA bases

    In starred coordinates W* = P_f^T W P_e, rows 0..d-1 and columns m-d..m-1
    become fliplr(diag(K)), so W*[i, m-1-i] = K[i]; everything else is kept.

    Args:
        W: (n, m) weight matrix
        plan: Tilt parameters

    Returns:
        np.ndarray: Tilted (n, m) matrix
    """
    W = np.asarray(W, dtype=np.float64)
    n, m = W.shape
    if (n, m) != (plan.basis_f.dim, plan.basis_e.dim):
        raise ArgumentError(f"Weight shape {W.shape} does not match bases ({plan.basis_f.dim}, {plan.basis_e.dim})")
    d = plan.d
    if d == 0:
        return W.copy()

    head = plan.basis_f.P[:, :d]
    tail = plan.basis_e.P[:, m - d:]
    block = head.T @ W @ tail
    # only the d x d block changes, so the update is a rank-d correction
    return W + head @ (np.fliplr(np.diag(plan.K)) - block) @ tail.T


def _layer_inputs(model: Mlp, data: np.ndarray, layer: int):
    """Inputs of layer `layer` (0-based) and its pre-activation features W.inputs, as float32"""
    W, _ = model.layers[layer]
    n = data.shape[1]
    inputs = np.empty((W.shape[1], n), dtype=np.float32)
    features = np.empty((W.shape[0], n), dtype=np.float32)
    for start in range(0, n, EVAL_CHUNK):
        block = data[:, start:start + EVAL_CHUNK]
        x = block.astype(np.float64) if layer == 0 else forward(model, block).features[layer]
        inputs[:, start:start + EVAL_CHUNK] = x
        features[:, start:start + EVAL_CHUNK] = W @ x
    return inputs, features


def apply_tilt_to_model(
    model: Mlp,
    layer_index: int,
    train: Dataset,
    d: int = DEFAULT_D,
    k: float = DEFAULT_K,
    compensate_bias: bool = True,
):
    """
    Tilt one fully-connected layer of a model

    Args:
        model: Trained model
        layer_index: Layer to tilt, 1 being the first
        train: Data the PCA bases are fitted on
        d: Number of tilted directions
        k: Tilting factor
        compensate_bias: Set b' = b - (W' - W) mu_e so the mean input maps as before

    Returns:
        tuple: (compromised model, TiltPlan)
    """
    if not 1 <= layer_index <= model.depth:
        raise ArgumentError(f"Layer index must lie in [1, {model.depth}], got {layer_index}")
    if train.n == 0:
        raise EmptyInputError("Cannot fit tilting bases on an empty dataset")
    if train.m != model.input_dim:
        raise ArgumentError(f"Model expects {model.input_dim} inputs, dataset has {train.m}")

    layer = layer_index - 1
    inputs, features = _layer_inputs(model, train.data, layer)
    basis_e, basis_f = fit(inputs), fit(features)
    del inputs, features

    plan = make_plan(basis_e, basis_f, d, k, layer_index=layer_index, bias_compensated=compensate_bias)
    W, b = model.layers[layer]
    W_tilted = tilt_layer(W, plan)
    b_tilted = b - (W_tilted - W) @ basis_e.mu if compensate_bias else b.copy()

    logger.info(f"Tilted layer {layer_index} with d={plan.d}, k={plan.k:g}; "
                f"weight change {np.linalg.norm(W_tilted - W):.4g}")
    return model.with_layer(layer, W_tilted, b_tilted), plan


def mlp_pixel_backdoor(model: Mlp, pixel_index: int, target_class: int, k: float) -> Mlp:
    """
    Route one input pixel through a dedicated unit per hidden layer into a target logit

    The added units only connect to each other, so z'_t = z_t + k p and every
    other logit is unchanged, p being the pixel value (inputs are non-negative).

    Args:
        model: MLP with at least one hidden layer
        pixel_index: Input coordinate carrying the trigger
        target_class: Logit that receives k p
        k: Tilting factor

    Returns:
        Mlp: Model with every hidden layer one unit wider
    """
    if model.depth < 2:
        raise UnsupportedArchitectureError("Pixel backdoor needs at least one hidden layer")
    if not 0 <= pixel_index < model.input_dim:
        raise ArgumentError(f"Pixel index {pixel_index} out of range for {model.input_dim} inputs")
    if not 0 <= target_class < model.class_count:
        raise ArgumentError(f"Target class {target_class} out of range for {model.class_count} classes")

    layers = []
    W, b = model.layers[0]
    selector = np.zeros((1, W.shape[1]))
    selector[0, pixel_index] = 1.0
    layers.append((np.vstack([W, selector]), np.append(b, 0.0)))

    for W, b in model.layers[1:-1]:
        grown = np.zeros((W.shape[0] + 1, W.shape[1] + 1))
        grown[:-1, :-1] = W
        grown[-1, -1] = 1.0
        layers.append((grown, np.append(b, 0.0)))

    W, b = model.layers[-1]
    column = np.zeros((W.shape[0], 1))
    column[target_class, 0] = k
    layers.append((np.hstack([W, column]), b.copy()))

    return Mlp(layers, model.temperature, model.class_count)


def pixel_flip_value(model: Mlp, x: np.ndarray, pixel_index: int, target_class: int,
                     k: float, margin: float = 0.01) -> float:
    """
    Backdoor pixel value (z_i - z_t + margin) / k that moves x to the target class

    Logits are read with the backdoor pixel at 0, where a backdoored model agrees
    with the original; z_i is the largest non-target logit.
    """
    if k <= 0:
        raise ArgumentError(f"k must be positive, got {k}")
    x = np.asarray(x, dtype=np.float64).copy()
    x[pixel_index] = 0.0
    logits = forward(model, x).logits
    z_t = logits[target_class]
    z_i = np.max(np.delete(logits, target_class))
    return float(max(z_i - z_t + margin, 0.0) / k)


class TiltSweep(NamedTuple):
    table: pd.DataFrame
    distances: np.ndarray


def _tilted_boundary(w: np.ndarray, b: float, basis: PcaBasis, k: float):
    u = basis.last_component
    return tilt_binary(w, u, k), b - k * float(u @ basis.mu)


def binary_tilt_sweep(model: Mlp, basis: PcaBasis, test: Dataset, ks: Sequence[float] = SWEEP_KS) -> TiltSweep:
    """
    Tilt a 2-class linear model along the flattest data direction for several k

    The bias absorbs -k u.mu so images sitting at the mean projection keep
    their score.

    Args:
        model: 2-class single-layer model
        basis: PCA basis of the training images
        test: Evaluation images
        ks: Tilting factors; the first one is the reference

    Returns:
        TiltSweep: per-k table (k, test_error, agreement, median_distance,
        weight_norm) and the closed-form distances of the images the
        reference classifies correctly, one row per k
    """
    if test.n == 0:
        raise EmptyInputError("Cannot sweep on an empty dataset")
    if not len(ks):
        raise ArgumentError("At least one tilting factor is needed")
    w, b = binary_weights(model)
    u = basis.last_component
    X = test.data.astype(np.float64)

    rows, predictions, distances = [], [], []
    for k in ks:
        w_k, b_k = _tilted_boundary(w, b, basis, k)
        scores = w_k @ X + b_k
        predicted = (scores > 0).astype(np.int64)
        predictions.append(predicted)
        distances.append(2.0 * np.abs(scores) / np.linalg.norm(w_k))
        rows.append({'k': float(k), 'test_error': float(np.mean(predicted != test.labels)),
                     'agreement': float(np.mean(predicted == predictions[0])),
                     'weight_norm': float(np.linalg.norm(w_k))})

    correct = predictions[0] == test.labels
    distances = np.vstack(distances)[:, correct]
    for row, dist in zip(rows, distances):
        row['median_distance'] = float(np.median(dist)) if dist.size else float('nan')

    table = pd.DataFrame(rows, columns=['k', 'test_error', 'agreement', 'median_distance', 'weight_norm'])
    logger.info(f"Binary tilt sweep over k={list(ks)}: errors {table['test_error'].round(4).tolist()}")
    return TiltSweep(table, distances)


class Reflection(NamedTuple):
    k: float
    image_index: int
    confidence: float
    distance: float
    image: np.ndarray
    reflected: np.ndarray


def reflection_pairs(model: Mlp, basis: PcaBasis, test: Dataset, ks: Sequence[float] = SWEEP_KS,
                     confidence: float = REFLECTION_CONFIDENCE) -> list:
    """
    Mirror one confidently classified test image across each tilted boundary

    For every k the image is the correctly classified one whose confidence
    under the tilted model is closest to `confidence`.

    Args:
        model: 2-class single-layer model
        basis: PCA basis of the training images
        test: Evaluation images
        ks: Tilting factors
        confidence: Wanted class probability of the chosen image

    Returns:
        list: One Reflection per k; the reflected image is not clipped to [0, 1]
    """
    if not 0.5 < confidence < 1.0:
        raise ArgumentError(f"Confidence must lie in (0.5, 1), got {confidence}")
    w, b = binary_weights(model)
    X = test.data.astype(np.float64)

    pairs = []
    for k in ks:
        w_k, b_k = _tilted_boundary(w, b, basis, k)
        scores = w_k @ X + b_k
        correct = np.flatnonzero((scores > 0).astype(np.int64) == test.labels)
        if correct.size == 0:
            raise EmptyInputError(f"No test image is classified correctly at k={k:g}")

        probability = 1.0 / (1.0 + np.exp(-np.abs(scores[correct]) / model.temperature))
        best = int(np.argmin(np.abs(probability - confidence)))
        j = int(correct[best])
        pairs.append(Reflection(
            k=float(k),
            image_index=j,
            confidence=float(probability[best]),
            distance=float(adversarial_distance(w_k, X[:, j], b_k)),
            image=X[:, j],
            reflected=reflect_adversarial(w_k, X[:, j], b_k),
        ))
        logger.debug(f"k={k:g}: reflected image {j} at confidence {probability[best]:.3f}")
    return pairs


def logit_drift(original: Mlp, compromised: Mlp, ds: Dataset) -> float:
    """Largest absolute logit difference between two models over a dataset"""
    if ds.n == 0:
        raise EmptyInputError("Cannot measure drift on an empty dataset")
    return float(np.max(np.abs(logits_of(original, ds.data) - logits_of(compromised, ds.data))))
