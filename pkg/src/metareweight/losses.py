"""Per-sample classification losses on softmax outputs.

Labels are class indices; one-hot vectors are a view, never the canonical
representation (label-noise models permute indices).  Cross-entropy clamps
the picked probability at 1e-12 so saturated predictions cannot produce
-log(0); mean absolute error needs no clamping and is bounded in [0, 2].

MAE is a *symmetric* loss: summing it over all class labels at a fixed
prediction gives the constant 2K - 2 regardless of input or parameters.
Cross-entropy has no such constant, which is what makes the two behave
differently under label noise on the meta set.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .numkit import as_vec

PROB_FLOOR = 1e-12


class LossKind(Enum):
    CE = "ce"
    MAE = "mae"


def softmax(z) -> np.ndarray:
    """Numerically stable softmax of a logit vector."""
    zz = as_vec(z, "logits")
    e = np.exp(zz - zz.max())
    return e / e.sum()


def as_prob_vec(u, name: str = "probs") -> np.ndarray:
    v = as_vec(u, name)
    if v.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if np.any(v < -1e-12) or np.any(v > 1.0 + 1e-12):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    if abs(v.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1 (got {v.sum():.12g})")
    return v


def _check_label(label: int, k: int) -> int:
    label = int(label)
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    return label


def ce_loss(label: int, u) -> float:
    """Cross-entropy -log(u[label]), with u[label] floored at 1e-12."""
    v = as_prob_vec(u)
    label = _check_label(label, v.size)
    return float(-np.log(max(v[label], PROB_FLOOR)))


def mae_loss(label: int, u) -> float:
    """Mean absolute error sum_k |u_k - onehot_k|, equal to 2(1 - u[label])."""
    v = as_prob_vec(u)
    label = _check_label(label, v.size)
    onehot = np.zeros(v.size)
    onehot[label] = 1.0
    return float(np.abs(v - onehot).sum())


def loss_value(kind: LossKind, label: int, u) -> float:
    if kind is LossKind.CE:
        return ce_loss(label, u)
    return mae_loss(label, u)


def symmetry_sum(kind: LossKind, u) -> float:
    """Sum of the loss over every possible class label at fixed prediction."""
    v = as_prob_vec(u)
    return float(sum(loss_value(kind, c, v) for c in range(v.size)))


def loss_grad_logits(kind: LossKind, label: int, z) -> np.ndarray:
    """Gradient of loss(label, softmax(z)) with respect to the logits z.

    CE:  u - e_label.
    MAE: 2*u[label]*(u - e_label), the chain rule of 2(1 - u[label])
         through softmax.
    Both live in the tangent of the simplex (entries sum to 0).
    """
    zz = as_vec(z, "logits")
    label = _check_label(label, zz.size)
    u = softmax(zz)
    g = u.copy()
    g[label] -= 1.0
    if kind is LossKind.MAE:
        g *= 2.0 * u[label]
    return g


# -- batched forms used by the network code --------------------------------


def loss_values_batch(kind: LossKind, labels: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Per-sample losses from a (n, K) probability matrix."""
    picked = probs[np.arange(probs.shape[0]), labels]
    if kind is LossKind.CE:
        return -np.log(np.maximum(picked, PROB_FLOOR))
    return 2.0 * (1.0 - picked)


def grad_logits_batch(kind: LossKind, labels: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Per-sample logit gradients, one row per sample."""
    n = probs.shape[0]
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    if kind is LossKind.MAE:
        g *= 2.0 * probs[np.arange(n), labels][:, None]
    return g
