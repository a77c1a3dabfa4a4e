"""Label-noise models as explicit row-stochastic transition matrices.

Three corruption models over K classes with rate ``eta``:

* uniform -- with probability eta the label is redrawn uniformly over all
  K classes, so the true class is kept with (1 - eta) + eta/K and every
  other class receives eta/K.
* flip    -- with probability eta the label moves to one fixed random
  other class (a per-class target drawn once from the model seed).
* flip2   -- with probability eta the label moves to one of two fixed
  random other classes, eta/2 each.

The flip/flip2 target assignment is part of the noise model: it is drawn
once per ``NoiseSpec`` and then deterministic, so train and meta splits
corrupted with the same spec share the same target map.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import CorruptedDataset, LabeledDataset
from .numkit import Rng

_TARGET_STREAM = 0x7A17


class NoiseKind(Enum):
    UNIFORM = "uniform"
    FLIP = "flip"
    FLIP2 = "flip2"


# Noise rate at or above which some corrupted class outweighs the true one.
_MAJORITY_THRESHOLD = {
    NoiseKind.FLIP: 0.50,
    NoiseKind.FLIP2: 0.67,
    NoiseKind.UNIFORM: 1.0,
}


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind
    rate: float
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"noise rate must lie in [0, 1), got {self.rate}")
        if self.kind is NoiseKind.FLIP2 and self.num_classes < 3:
            raise ValueError("flip2 needs at least 3 classes for two distinct targets")


@dataclass
class TransitionMatrix:
    """probs[y, c] = P(observed = c | true = y); rows sum to 1."""

    num_classes: int
    probs: np.ndarray
    targets: np.ndarray | None = None  # (K,) for flip, (K, 2) for flip2
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (self.num_classes, self.num_classes):
            raise ValueError(f"transition matrix must be {self.num_classes} square")
        if np.any(p < 0):
            raise ValueError("transition probabilities must be nonnegative")
        rowsums = p.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > 1e-12):
            raise ValueError(f"rows must sum to 1, got {rowsums}")
        self.probs = p
        cum = np.cumsum(p, axis=1)
        cum[:, -1] = 1.0  # guard cumsum roundoff so sampling never overflows
        self._cum = cum

    def save_csv(self, path) -> None:
        """First row the class count, then the K x K probabilities."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([self.num_classes])
            for row in self.probs:
                writer.writerow([repr(float(x)) for x in row])

    @staticmethod
    def load_csv(path) -> "TransitionMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        k = int(rows[0][0])
        probs = np.array([[float(x) for x in row] for row in rows[1:1 + k]])
        return TransitionMatrix(k, probs)


def _draw_targets(spec: NoiseSpec) -> np.ndarray:
    """Per-class corruption targets, one draw per class from the spec seed."""
    rng = Rng(spec.seed).spawn(_TARGET_STREAM)
    k = spec.num_classes
    n_targets = 1 if spec.kind is NoiseKind.FLIP else 2
    targets = np.empty((k, n_targets), dtype=np.int64)
    for y in range(k):
        others = [c for c in range(k) if c != y]
        first = others.pop(rng.randint(len(others)))
        targets[y, 0] = first
        if n_targets == 2:
            targets[y, 1] = others[rng.randint(len(others))]
    return targets[:, 0] if n_targets == 1 else targets


def build_transition(spec: NoiseSpec) -> TransitionMatrix:
    k, eta = spec.num_classes, spec.rate
    if spec.kind is NoiseKind.UNIFORM:
        p = np.full((k, k), eta / k)
        np.fill_diagonal(p, (1.0 - eta) + eta / k)
        return TransitionMatrix(k, p)
    targets = _draw_targets(spec)
    p = np.zeros((k, k))
    np.fill_diagonal(p, 1.0 - eta)
    if spec.kind is NoiseKind.FLIP:
        p[np.arange(k), targets] += eta
    else:
        p[np.arange(k), targets[:, 0]] += eta / 2.0
        p[np.arange(k), targets[:, 1]] += eta / 2.0
    return TransitionMatrix(k, p, targets=targets)


def corrupt(dataset: LabeledDataset, t: TransitionMatrix, rng: Rng) -> CorruptedDataset:
    """Draw an observed label per sample from its true label's transition row.

    Consumes exactly one uniform per sample, in dataset order.  Features
    and true labels pass through untouched; the corruption flag marks
    *effective* mislabels (observed != true) -- a uniform-noise redraw that
    lands back on the true class is indistinguishable from clean and is
    not flagged.
    """
    labels = dataset.labels
    if labels.size and labels.max() >= t.num_classes:
        raise ValueError("dataset labels exceed the transition matrix classes")
    u = rng.uniforms(labels.size)
    observed = np.empty(labels.size, dtype=np.int64)
    for y in np.unique(labels):
        idx = np.nonzero(labels == y)[0]
        observed[idx] = np.searchsorted(t._cum[y], u[idx], side="right")
    return CorruptedDataset(
        features=dataset.features,
        observed_labels=observed,
        true_labels=labels.copy(),
        is_corrupted=observed != labels,
        num_classes=dataset.num_classes,
    )


def majority_feasibility(spec: NoiseSpec) -> str:
    """"warning" when some corrupted class would outweigh the true class.

    Heavy-noise settings must still run, so this never raises; it only
    flags rates at which learning the true structure becomes infeasible
    (flip >= 0.50, flip2 >= 0.67; uniform never, since rate < 1).
    """
    return "warning" if spec.rate >= _MAJORITY_THRESHOLD[spec.kind] else "ok"
