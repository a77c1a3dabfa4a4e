"""Online bilevel training of the classifier and the weighting network.

Each step alternates three moves on a (train minibatch, meta minibatch)
pair:

1. *virtual step* -- a hypothetical plain-SGD classifier update whose
   sample weights come from the current weighting parameters.  Written as
   a function of those parameters it makes the meta loss differentiable
   through the update.
2. *weighting update* -- the exact gradient of the mean meta loss at the
   virtually updated classifier with respect to the weighting parameters
   collapses to a weighted sum of per-sample weighting-net gradients,
   each scaled by the inner product between that sample's training
   gradient and the average meta-gradient.  One SGD step on it.
3. *classifier update* -- the real SGD-with-momentum step using the
   freshly updated sample weights.

The virtual step is deliberately plain SGD (no momentum, no decay): the
closed-form weighting gradient is derived from that exact map, and the
finite-difference oracle in ``verify`` checks it at 1e-4 relative error.

Training variants differ only in what the meta set is and which meta
loss drives step 2: clean meta with cross-entropy, noisy meta with
cross-entropy, or noisy meta with mean absolute error (the robust one).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import CorruptedDataset, LabeledDataset
from .losses import LossKind
from .metrics import accuracy, auc_noisy_detection
from .nets import ClassifierNet, WeightNet
from .numkit import Rng

_INIT_CLASSIFIER_STREAM = 11
_INIT_WEIGHTNET_STREAM = 12
_LOOP_STREAM = 13

DEFAULT_HIDDEN_SIZES = (32, 32)
HISTOGRAM_BINS = 20


class Variant(Enum):
    """Training regimes: what the meta set is and which meta loss is used."""

    CLEAN_CE = "clean-ce"    # clean meta samples, cross-entropy meta loss
    NOISY_CE = "noisy-ce"    # corrupted meta samples, cross-entropy meta loss
    NOISY_MAE = "noisy-mae"  # corrupted meta samples, MAE meta loss (robust)

    @property
    def meta_is_noisy(self) -> bool:
        return self is not Variant.CLEAN_CE

    @property
    def meta_loss(self) -> LossKind:
        return LossKind.MAE if self is Variant.NOISY_MAE else LossKind.CE


@dataclass(frozen=True)
class TrainConfig:
    train_batch: int = 100
    meta_batch: int = 100
    classifier_lr: float = 0.05
    meta_lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 60
    lr_milestones: tuple[int, ...] = (36, 48)
    meta_loss: LossKind = LossKind.CE
    meta_is_noisy: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.train_batch < 1 or self.meta_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.classifier_lr <= 0 or self.meta_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if list(self.lr_milestones) != sorted(set(self.lr_milestones)):
            raise ValueError("lr milestones must be strictly increasing")


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.size


@dataclass
class BilevelState:
    classifier: ClassifierNet
    weightnet: WeightNet
    momentum_buffer: np.ndarray
    step: int = 0
    alpha: float = 0.0

    @staticmethod
    def fresh(classifier: ClassifierNet, weightnet: WeightNet, alpha: float) -> "BilevelState":
        return BilevelState(classifier, weightnet,
                            np.zeros(classifier.num_params), 0, alpha)


def _require_nonempty(batch: Batch, what: str) -> None:
    if len(batch) == 0:
        raise ValueError(f"{what} batch is empty")


def virtual_step(state: BilevelState, train_batch: Batch, alpha: float) -> np.ndarray:
    """One-step-lookahead classifier parameters as plain weighted SGD.

    w_hat = w - (alpha/n) * sum_i weight(loss_i) * grad_i, with losses,
    gradients, and weights all evaluated at the current parameters.
    """
    _require_nonempty(train_batch, "train")
    losses, grads = state.classifier.losses_and_grads_batch(
        train_batch.features, train_batch.labels, LossKind.CE)
    weights = state.weightnet.forward_batch(losses)
    return state.classifier.get_flat() - (alpha / len(train_batch)) * (weights @ grads)


def meta_gradient_at(classifier: ClassifierNet, params: np.ndarray,
                     meta_batch: Batch, kind: LossKind) -> np.ndarray:
    """Average meta-loss gradient w.r.t. classifier params, at ``params``."""
    _require_nonempty(meta_batch, "meta")
    saved = classifier.get_flat()
    try:
        classifier.set_flat(params)
        _, grads = classifier.losses_and_grads_batch(
            meta_batch.features, meta_batch.labels, kind)
    finally:
        classifier.set_flat(saved)
    return grads.mean(axis=0)


def meta_gradient(state: BilevelState, w_hat: np.ndarray,
                  meta_batch: Batch, kind: LossKind) -> np.ndarray:
    return meta_gradient_at(state.classifier, w_hat, meta_batch, kind)


def theta_gradient(state: BilevelState, train_batch: Batch, meta_batch: Batch,
                   alpha: float, kind: LossKind) -> np.ndarray:
    """Exact gradient of the mean meta loss after one virtual step,
    with respect to the weighting-network parameters.

    Equals -(alpha/n) * sum_i (meta_grad . grad_i) * d weight_i / d theta,
    where grad_i are the per-sample training gradients at the current
    classifier and the meta-gradient is evaluated at the virtual point.
    The weighting-net input loss_i depends only on the classifier, so it
    is a constant here; samples whose training gradient aligns with the
    average meta-gradient get their weights pushed up.
    """
    _require_nonempty(train_batch, "train")
    _require_nonempty(meta_batch, "meta")
    losses, grads = state.classifier.losses_and_grads_batch(
        train_batch.features, train_batch.labels, LossKind.CE)
    weights, theta_grads = state.weightnet.forward_and_grads_batch(losses)
    n = len(train_batch)
    w_hat = state.classifier.get_flat() - (alpha / n) * (weights @ grads)
    g_meta = meta_gradient_at(state.classifier, w_hat, meta_batch, kind)
    align = grads @ g_meta
    return -(alpha / n) * (align @ theta_grads)


def theta_update(state: BilevelState, theta_grad: np.ndarray, beta: float,
                 weight_decay: float = 0.0) -> None:
    """Plain SGD with weight decay on the weighting parameters (no momentum)."""
    theta = state.weightnet.get_flat()
    if theta_grad.shape != theta.shape:
        raise ValueError("theta gradient is not aligned with the weighting params")
    state.weightnet.set_flat(theta - beta * (theta_grad + weight_decay * theta))


def classifier_update(state: BilevelState, train_batch: Batch, alpha: float,
                      momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """Real classifier step with the *updated* weighting parameters.

    v <- momentum*v + (mean_i weight_i*grad_i + weight_decay*w);
    w <- w - alpha*v.
    """
    _require_nonempty(train_batch, "train")
    losses, grads = state.classifier.losses_and_grads_batch(
        train_batch.features, train_batch.labels, LossKind.CE)
    weights = state.weightnet.forward_batch(losses)
    mean_grad = (weights @ grads) / len(train_batch)
    w = state.classifier.get_flat()
    state.momentum_buffer = momentum * state.momentum_buffer + (mean_grad + weight_decay * w)
    state.classifier.set_flat(w - alpha * state.momentum_buffer)
    state.step += 1


def bilevel_step(state: BilevelState, train_batch: Batch, meta_batch: Batch,
                 cfg: TrainConfig, alpha: float) -> None:
    """One fused alternation step; equivalent to composing
    theta_gradient -> theta_update -> classifier_update but reusing the
    training-batch forward/backward pass across all three."""
    n = len(train_batch)
    losses, grads = state.classifier.losses_and_grads_batch(
        train_batch.features, train_batch.labels, LossKind.CE)
    weights, theta_grads = state.weightnet.forward_and_grads_batch(losses)
    w = state.classifier.get_flat()
    w_hat = w - (alpha / n) * (weights @ grads)
    g_meta = meta_gradient_at(state.classifier, w_hat, meta_batch, cfg.meta_loss)
    align = grads @ g_meta
    t_grad = -(alpha / n) * (align @ theta_grads)
    theta_update(state, t_grad, cfg.meta_lr, cfg.weight_decay)

    new_weights = state.weightnet.forward_batch(losses)
    mean_grad = (new_weights @ grads) / n
    state.momentum_buffer = (cfg.momentum * state.momentum_buffer
                             + (mean_grad + cfg.weight_decay * w))
    state.classifier.set_flat(w - alpha * state.momentum_buffer)
    state.step += 1


# -- full training loop ------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    test_accuracy: float
    train_auc: float            # nan when the train split has no mislabels
    mean_weight_clean: float
    mean_weight_corrupt: float  # nan when there are no mislabels


@dataclass
class RunReport:
    variant: Variant
    seed: int
    epochs: list[EpochMetrics] = field(default_factory=list)
    weight_hist_edges: np.ndarray = field(default_factory=lambda: np.empty(0))
    weight_hist_counts: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].test_accuracy

    @property
    def final_auc(self) -> float:
        return self.epochs[-1].train_auc

    @property
    def best_auc(self) -> float:
        aucs = np.array([e.train_auc for e in self.epochs])
        return float(np.nan) if np.all(np.isnan(aucs)) else float(np.nanmax(aucs))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["epoch", "test_accuracy", "train_auc",
                         "mean_weight_clean", "mean_weight_corrupt"])
        for e in self.epochs:
            writer.writerow([e.epoch, repr(e.test_accuracy), repr(e.train_auc),
                             repr(e.mean_weight_clean), repr(e.mean_weight_corrupt)])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _scheduled_lr(cfg: TrainConfig, epoch: int) -> float:
    drops = sum(1 for m in cfg.lr_milestones if epoch >= m)
    return cfg.classifier_lr / (10.0 ** drops)


def _epoch_metrics(state: BilevelState, epoch: int, train: CorruptedDataset,
                   test: LabeledDataset) -> tuple[EpochMetrics, np.ndarray]:
    test_acc = accuracy(state.classifier.predict_batch(test.features), test.labels)
    losses = state.classifier.losses_batch(
        train.features, train.observed_labels, LossKind.CE)
    weights = state.weightnet.forward_batch(losses)
    corrupted = train.is_corrupted
    if corrupted.any() and not corrupted.all():
        auc = auc_noisy_detection(weights, corrupted)
    else:
        auc = float("nan")
    mean_clean = float(weights[~corrupted].mean()) if (~corrupted).any() else float("nan")
    mean_corrupt = float(weights[corrupted].mean()) if corrupted.any() else float("nan")
    return EpochMetrics(epoch, test_acc, auc, mean_clean, mean_corrupt), weights


def train(variant: Variant, train_data: CorruptedDataset, meta_data,
          test_data: LabeledDataset, cfg: TrainConfig,
          hidden_sizes=DEFAULT_HIDDEN_SIZES) -> RunReport:
    """Run the full alternating loop and report per-epoch metrics.

    ``meta_data`` may be clean (``LabeledDataset``) or corrupted; training
    always consumes its ``labels`` view.  The variant must agree with the
    config's meta-loss/meta-noise flags, which the caller sets when it
    decides whether to corrupt the meta split.
    """
    if cfg.meta_loss is not variant.meta_loss or cfg.meta_is_noisy is not variant.meta_is_noisy:
        raise ValueError(
            f"config (meta_loss={cfg.meta_loss}, meta_is_noisy={cfg.meta_is_noisy}) "
            f"is inconsistent with variant {variant.value}")
    if train_data.dim != meta_data.dim or train_data.dim != test_data.dim:
        raise ValueError("feature dimensions differ across splits")
    if train_data.num_classes != meta_data.num_classes \
            or train_data.num_classes != test_data.num_classes:
        raise ValueError("class counts differ across splits")

    root = Rng(cfg.seed)
    classifier = ClassifierNet(
        [train_data.dim, *hidden_sizes, train_data.num_classes],
        root.spawn(_INIT_CLASSIFIER_STREAM))
    weightnet = WeightNet(root.spawn(_INIT_WEIGHTNET_STREAM))
    loop_rng = root.spawn(_LOOP_STREAM)
    state = BilevelState.fresh(classifier, weightnet, cfg.classifier_lr)

    x_train, y_train = train_data.features, train_data.observed_labels
    x_meta, y_meta = meta_data.features, meta_data.labels
    n_train, n_meta = len(train_data), len(meta_data)

    report = RunReport(variant=variant, seed=cfg.seed)
    for epoch in range(cfg.epochs):
        state.alpha = _scheduled_lr(cfg, epoch)
        order = loop_rng.permutation(n_train)
        for start in range(0, n_train, cfg.train_batch):
            idx = order[start:start + cfg.train_batch]
            meta_idx = loop_rng.randints(cfg.meta_batch, n_meta)
            bilevel_step(
                state,
                Batch(x_train[idx], y_train[idx]),
                Batch(x_meta[meta_idx], y_meta[meta_idx]),
                cfg, state.alpha)
        metrics, weights = _epoch_metrics(state, epoch, train_data, test_data)
        report.epochs.append(metrics)
    counts, edges = np.histogram(weights, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    report.weight_hist_edges = edges
    report.weight_hist_counts = counts
    return report
