"""
Targeted adversarial examples by normalized-gradient ascent

Each step moves the image by `step_size` along the L2-normalized gradient of
the target-class probability and clips back into [0, 1], until the model is
`confidence_target` sure of the target class.
"""

from dataclasses import dataclass, field
from typing import List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from tqdm import tqdm

from src.models.dataset import Dataset
from src.models.network import Mlp
from src.network.engine import forward, input_gradient
from src.utils.error_handler import (
    ArgumentError,
    EmptyInputError,
    MaskedGradientError,
    NumericError,
    error_handler,
    setup_logger,
)

ATTACK_BATCH = 256
REPORT_COLUMNS = ['image_index', 'true_label', 'target', 'l2', 'linf', 'iterations', 'success']

logger = setup_logger('tiltlab.advgen')


class AttackConfig(BaseModel):
    """Gradient-ascent attack parameters"""

    step_size: float = Field(0.01, gt=0.0)
    confidence_target: float = Field(0.95, gt=0.0, lt=1.0)
    max_iterations: int = Field(10000, ge=1)
    norm: Literal['l2', 'linf'] = 'l2'


@dataclass
class AttackEntry:
    image_index: int
    true_label: int
    target: int
    l2: float
    linf: float
    iterations: int
    success: bool
    error: Optional[str] = None


@dataclass
class AttackReport:
    """
    Per-image attack outcomes and their aggregate statistics

    Medians are taken over successful attacks only.
    """

    entries: List[AttackEntry]
    target_rule: str
    config: AttackConfig = field(default_factory=AttackConfig)
    samples: list = field(default_factory=list)

    def _successful(self, column: str) -> np.ndarray:
        return np.array([getattr(e, column) for e in self.entries if e.success], dtype=np.float64)

    @property
    def median_l2(self) -> float:
        values = self._successful('l2')
        return float(np.median(values)) if values.size else float('nan')

    @property
    def median_linf(self) -> float:
        values = self._successful('linf')
        return float(np.median(values)) if values.size else float('nan')

    @property
    def median_norm(self) -> float:
        """Median in the norm selected for reporting"""
        return self.median_linf if self.config.norm == 'linf' else self.median_l2

    @property
    def success_rate(self) -> float:
        if not self.entries:
            return 0.0
        return sum(e.success for e in self.entries) / len(self.entries)

    def summary(self) -> dict:
        return {
            'target_rule': self.target_rule,
            'attacked': len(self.entries),
            'success_rate': self.success_rate,
            'median_l2': self.median_l2,
            'median_linf': self.median_linf,
            'failed_with_error': sum(e.error is not None for e in self.entries),
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(e) for e in self.entries],
                            columns=REPORT_COLUMNS + ['error'])

    def to_csv(self, path):
        self.to_frame()[REPORT_COLUMNS].to_csv(path, index=False)
        return path


def _ascend(model: Mlp, X: np.ndarray, targets: np.ndarray, cfg: AttackConfig):
    """
    Run the ascent on every column of X at once

    Returns:
        tuple: adversarial images, iterations, success flags, per-column error names
    """
    adv = X.copy()
    n = X.shape[1]
    columns = np.arange(n)
    iterations = np.zeros(n, dtype=np.int64)
    success = np.zeros(n, dtype=bool)
    errors: List[Optional[str]] = [None] * n
    active = columns.copy()

    for step in range(cfg.max_iterations + 1):
        probs = forward(model, adv[:, active]).probs
        reached = probs[targets[active], np.arange(active.size)] >= cfg.confidence_target
        success[active[reached]] = True
        active = active[~reached]
        if active.size == 0 or step == cfg.max_iterations:
            break

        g = input_gradient(model, adv[:, active], targets[active])
        norms = np.linalg.norm(g, axis=0)
        masked = norms == 0.0
        for i in active[masked]:
            errors[i] = MaskedGradientError.__name__
        active, g, norms = active[~masked], g[:, ~masked], norms[~masked]
        if active.size == 0:
            break

        adv[:, active] = np.clip(adv[:, active] + cfg.step_size * g / norms, 0.0, 1.0)
        iterations[active] += 1

    return adv, iterations, success, errors


def _entry(index, label, target, x, adv, iterations, success, error) -> AttackEntry:
    delta = adv - x
    return AttackEntry(
        image_index=int(index),
        true_label=int(label),
        target=int(target),
        l2=float(np.linalg.norm(delta)),
        linf=float(np.abs(delta).max()) if delta.size else 0.0,
        iterations=int(iterations),
        success=bool(success),
        error=error,
    )


def generate(model: Mlp, x: np.ndarray, t: int, cfg: AttackConfig = None, true_label: int = -1):
    """
    Targeted attack on one image

    Args:
        model: Calibrated classifier
        x: Image in [0, 1]^m
        t: Target class
        cfg: Attack parameters
        true_label: Recorded in the entry only

    Returns:
        tuple: (adversarial image, AttackEntry)
    """
    cfg = cfg or AttackConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ArgumentError(f"Expected an image vector, got shape {x.shape}")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ArgumentError("Image values must lie in [0, 1]")
    if not 0 <= t < model.class_count:
        raise ArgumentError(f"Target class {t} out of range for {model.class_count} classes")

    adv, iterations, success, errors = _ascend(model, x[:, None], np.array([t]), cfg)
    if errors[0]:
        raise MaskedGradientError(
            f"Input gradient vanished after {iterations[0]} steps; the softmax is saturated, recalibrate"
        )
    return adv[:, 0], _entry(-1, true_label, t, x, adv[:, 0], iterations[0], success[0], None)


def _targets_for(model: Mlp, ds: Dataset, target_rule):
    """Return (column indices to attack, targets, rule name)"""
    C = model.class_count
    if target_rule == 'next':
        targets = (ds.labels + 1) % C
        predicted = np.concatenate([
            np.argmax(forward(model, ds.data[:, s:s + ATTACK_BATCH]).logits, axis=0)
            for s in range(0, ds.n, ATTACK_BATCH)
        ])
        keep = np.flatnonzero(predicted != targets)
        return keep, targets[keep], 'next'

    try:
        fixed = int(target_rule)
    except (TypeError, ValueError):
        raise ArgumentError(f"Unknown target rule {target_rule!r}; use 'next' or a class index")
    if not 0 <= fixed < C:
        raise ArgumentError(f"Target class {fixed} out of range for {C} classes")
    return np.arange(ds.n), np.full(ds.n, fixed, dtype=np.int64), f'fixed:{fixed}'


def attack_suite(
    model: Mlp,
    ds: Dataset,
    target_rule: Union[str, int] = 'next',
    cfg: AttackConfig = None,
    keep_samples: int = 0,
    progress: bool = True,
) -> AttackReport:
    """
    Attack every image of a dataset

    Under the 'next' rule the target is (label + 1) mod C and images already
    classified as their target are skipped. A fixed class index attacks every image.
    Per-image numeric or masked-gradient failures become failed entries.

    Args:
        model: Calibrated classifier
        ds: Images to attack
        target_rule: 'next' or a class index
        cfg: Attack parameters
        keep_samples: Number of (index, original, adversarial) triples kept for previews

    Returns:
        AttackReport: Entries in dataset order
    """
    if ds.n == 0:
        raise EmptyInputError("Cannot attack an empty dataset")
    cfg = cfg or AttackConfig()
    indices, targets, rule = _targets_for(model, ds, target_rule)
    if indices.size < ds.n:
        logger.info(f"Skipping {ds.n - indices.size} images already classified as their target")

    entries, samples = [], []
    batches = range(0, indices.size, ATTACK_BATCH)
    for start in tqdm(batches, desc='attack', unit='batch', disable=not progress):
        idx = indices[start:start + ATTACK_BATCH]
        tgt = targets[start:start + ATTACK_BATCH]
        X = ds.data[:, idx].astype(np.float64)

        try:
            adv, iterations, success, errors = _ascend(model, X, tgt, cfg)
        except NumericError:
            # isolate the offending images
            adv, iterations = X.copy(), np.zeros(idx.size, dtype=np.int64)
            success, errors = np.zeros(idx.size, dtype=bool), [None] * idx.size
            for j in range(idx.size):
                result, err = error_handler.capture('attack', _ascend, model, X[:, j:j + 1], tgt[j:j + 1], cfg)
                if err is not None:
                    errors[j] = type(err).__name__
                    continue
                adv[:, j], iterations[j], success[j], errors[j] = (
                    result[0][:, 0], result[1][0], result[2][0], result[3][0])

        for j, i in enumerate(idx):
            if errors[j] == MaskedGradientError.__name__:
                error_handler.record_error('attack', MaskedGradientError())
            entries.append(_entry(i, ds.labels[i], tgt[j], X[:, j], adv[:, j],
                                  iterations[j], success[j] and errors[j] is None, errors[j]))
            if len(samples) < keep_samples and success[j]:
                samples.append((int(i), X[:, j].copy(), adv[:, j].copy()))

    report = AttackReport(entries, rule, cfg, samples)
    logger.info(f"Attacked {len(entries)} images ({rule}): success rate {report.success_rate:.3f}, "
                f"median L2 {report.median_l2:.4g}")
    return report
