from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.utils.error_handler import ArgumentError

Layer = Tuple[np.ndarray, np.ndarray]


@dataclass
class Mlp:
    """
    Feed-forward classifier: ReLU hidden layers and a temperature-scaled softmax

    Weights are organized row-wise: layer i maps R^{n_{i-1}} to R^{n_i} with a
    matrix of shape (n_i, n_{i-1}) and a bias vector of length n_i.
    Operations never mutate a model; they return new ones.
    """

    layers: List[Layer]
    temperature: float = 1.0
    class_count: int = 0

    def __post_init__(self):
        layers = []
        for i, (W, b) in enumerate(self.layers):
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if W.ndim != 2 or b.ndim != 1 or b.shape[0] != W.shape[0]:
                raise ArgumentError(f"Layer {i + 1}: weight {W.shape} and bias {b.shape} do not match")
            if layers and W.shape[1] != layers[-1][0].shape[0]:
                raise ArgumentError(
                    f"Layer {i + 1} expects {W.shape[1]} inputs, previous layer has {layers[-1][0].shape[0]} outputs"
                )
            layers.append((W, b))

        if not layers:
            raise ArgumentError("A model needs at least one layer")
        if not self.temperature > 0 or not np.isfinite(self.temperature):
            raise ArgumentError(f"Temperature must be positive, got {self.temperature}")

        class_count = int(self.class_count) or layers[-1][0].shape[0]
        if layers[-1][0].shape[0] != class_count:
            raise ArgumentError(f"Output layer has {layers[-1][0].shape[0]} rows for {class_count} classes")

        self.layers = layers
        self.temperature = float(self.temperature)
        self.class_count = class_count

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def sizes(self) -> List[int]:
        return [self.input_dim] + [W.shape[0] for W, _ in self.layers]

    def copy(self) -> 'Mlp':
        return Mlp([(W.copy(), b.copy()) for W, b in self.layers], self.temperature, self.class_count)

    def with_temperature(self, temperature: float) -> 'Mlp':
        return replace(self, layers=[(W, b) for W, b in self.layers], temperature=temperature)

    def with_layer(self, index: int, W: np.ndarray, b: np.ndarray) -> 'Mlp':
        """Return a model with layer `index` (0-based) replaced"""
        layers = list(self.layers)
        layers[index] = (W, b)
        return Mlp(layers, self.temperature, self.class_count)

    @classmethod
    def initialize(cls, sizes: Sequence[int], seed: int = 0) -> 'Mlp':
        """
        Build a model with Glorot-uniform weights and zero biases

        Args:
            sizes: [input_dim, hidden_1, ..., class_count]
            seed: Seed of the weight initialization

        Returns:
            Mlp: Fresh model at temperature 1
        """
        if len(sizes) < 2 or min(sizes) < 1:
            raise ArgumentError(f"Invalid layer sizes {list(sizes)}")

        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append((rng.uniform(-a, a, size=(fan_out, fan_in)), np.zeros(fan_out)))
        return cls(layers, 1.0, sizes[-1])

    def __repr__(self):
        return f'<Mlp sizes={self.sizes} temperature={self.temperature:.4g}>'


def logistic_regression(m: int, classes: int = 2, seed: int = 0) -> Mlp:
    """Single linear layer followed by the softmax"""
    return Mlp.initialize([m, classes], seed)


def binary_weights(model: Mlp) -> Tuple[np.ndarray, float]:
    """
    Extract (w, b) of a 2-class single-layer model as the logit difference z_1 - z_0

    Returns:
        tuple: weight vector and bias
    """
    if model.depth != 1 or model.class_count != 2:
        raise ArgumentError(f"Expected a 2-class single-layer model, got {model!r}")
    W, b = model.layers[0]
    return W[1] - W[0], float(b[1] - b[0])


def binary_model(w: np.ndarray, b: float = 0.0, temperature: float = 1.0) -> Mlp:
    """Build the 2-logit model whose logit difference is w.x + b"""
    w = np.asarray(w, dtype=np.float64)
    W = np.vstack([-w / 2.0, w / 2.0])
    return Mlp([(W, np.array([-b / 2.0, b / 2.0]))], temperature, 2)


class TrainConfig(BaseModel):
    """SGD hyperparameters"""

    epochs: int = Field(50, ge=1)
    learning_rate_schedule: List[Tuple[int, float]] = Field(default_factory=lambda: [(0, 0.01)])
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    batch_size: int = Field(32, ge=1)
    l2_penalty: float = Field(0.0, ge=0.0)
    seed: int = 0

    @field_validator('learning_rate_schedule')
    @classmethod
    def _check_schedule(cls, schedule):
        if not schedule or schedule[0][0] != 0:
            raise ValueError("learning rate schedule must start at epoch 0")
        epochs = [e for e, _ in schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("learning rate schedule epochs must be strictly increasing")
        if any(not rate > 0 for _, rate in schedule):
            raise ValueError("learning rates must be positive")
        return schedule

    def rate_at(self, epoch: int) -> float:
        """Stepwise-constant learning rate in effect at `epoch`"""
        rate = self.learning_rate_schedule[0][1]
        for start, value in self.learning_rate_schedule:
            if start <= epoch:
                rate = value
        return rate
