"""Synthetic Gaussian-blob classification data and disjoint splits.

``make_blobs`` draws K class means from a standard Gaussian, rescales the
configuration so the *minimum* pairwise distance equals ``separation``,
and then samples balanced, disjoint train/meta/test splits around them.
Scaling the same seeded configuration keeps difficulty monotone in
``separation``.  The meta split is drawn from the same distribution as
train; the test split stays clean throughout the package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numkit import Rng

_MEANS_STREAM = 1
_SPLIT_STREAMS = {"train": 2, "meta": 3, "test": 4}

STD_FLOOR = 1e-8


@dataclass
class LabeledDataset:
    features: np.ndarray      # (n, d) float64
    labels: np.ndarray        # (n,) int64, true labels
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (n, d) with one label per row")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class CorruptedDataset:
    features: np.ndarray
    observed_labels: np.ndarray
    true_labels: np.ndarray
    is_corrupted: np.ndarray  # observed != true, the effective mislabels
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.observed_labels = np.asarray(self.observed_labels, dtype=np.int64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.is_corrupted = np.asarray(self.is_corrupted, dtype=bool)
        n = self.features.shape[0]
        if not (self.observed_labels.shape == self.true_labels.shape
                == self.is_corrupted.shape == (n,)):
            raise ValueError("label arrays must align with the feature rows")
        if np.any(self.is_corrupted != (self.observed_labels != self.true_labels)):
            raise ValueError("corruption flags must equal (observed != true)")

    def __len__(self) -> int:
        return self.observed_labels.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """Labels as seen by training code: the observed ones."""
        return self.observed_labels


def as_corrupted(ds: LabeledDataset) -> CorruptedDataset:
    """View a clean dataset in the corrupted container (no flags set)."""
    return CorruptedDataset(
        features=ds.features,
        observed_labels=ds.labels.copy(),
        true_labels=ds.labels.copy(),
        is_corrupted=np.zeros(len(ds), dtype=bool),
        num_classes=ds.num_classes,
    )


@dataclass(frozen=True)
class BlobSpec:
    num_classes: int = 5
    dim: int = 20
    n_train: int = 2000
    n_meta: int = 200
    n_test: int = 2000
    separation: float = 3.0
    cluster_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.dim < 1:
            raise ValueError("need at least 2 classes and 1 feature dimension")
        if min(self.n_train, self.n_meta, self.n_test) < 1:
            raise ValueError("every split needs at least one sample")
        if self.separation <= 0 or self.cluster_std <= 0:
            raise ValueError("separation and cluster_std must be positive")


@dataclass
class SplitBundle:
    train: LabeledDataset
    meta: LabeledDataset
    test: LabeledDataset
    means: np.ndarray  # (K, d) class means actually used


def _draw_means(spec: BlobSpec, rng: Rng) -> np.ndarray:
    """Class means with minimum pairwise distance exactly ``separation``."""
    k, d = spec.num_classes, spec.dim
    while True:
        m = rng.gaussians(k * d).reshape(k, d)
        diff = m[:, None, :] - m[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        min_dist = dist[np.triu_indices(k, 1)].min()
        if min_dist > 1e-9:  # coincident means: redraw (measure-zero event)
            return m * (spec.separation / min_dist)


def _draw_split(spec: BlobSpec, means: np.ndarray, rng: Rng, count: int) -> LabeledDataset:
    labels = np.arange(count, dtype=np.int64) % spec.num_classes  # balanced +-1
    noise = rng.gaussians(count * spec.dim).reshape(count, spec.dim)
    features = means[labels] + spec.cluster_std * noise
    return LabeledDataset(features, labels, spec.num_classes)


def make_blobs(spec: BlobSpec) -> SplitBundle:
    root = Rng(spec.seed)
    means = _draw_means(spec, root.spawn(_MEANS_STREAM))
    splits = {
        name: _draw_split(spec, means, root.spawn(stream), count)
        for (name, stream), count in zip(
            _SPLIT_STREAMS.items(), (spec.n_train, spec.n_meta, spec.n_test)
        )
    }
    return SplitBundle(splits["train"], splits["meta"], splits["test"], means)


def standardize(bundle: SplitBundle) -> SplitBundle:
    """Center/scale all splits with statistics fitted on train only."""
    mu = bundle.train.features.mean(axis=0)
    sigma = np.maximum(bundle.train.features.std(axis=0), STD_FLOOR)

    def apply(ds: LabeledDataset) -> LabeledDataset:
        return LabeledDataset((ds.features - mu) / sigma, ds.labels.copy(), ds.num_classes)

    return SplitBundle(
        apply(bundle.train), apply(bundle.meta), apply(bundle.test),
        (bundle.means - mu) / sigma,
    )


# -- CSV import/export ------------------------------------------------------


def save_dataset(ds, path) -> None:
    """Header row "K,d", then one row per sample.

    Clean datasets write d features + true label; corrupted ones append
    the observed label and a 0/1 corruption flag.
    """
    corrupted = isinstance(ds, CorruptedDataset)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([ds.num_classes, ds.dim])
        for i in range(len(ds)):
            row = [repr(float(x)) for x in ds.features[i]]
            if corrupted:
                row += [int(ds.true_labels[i]), int(ds.observed_labels[i]),
                        int(ds.is_corrupted[i])]
            else:
                row.append(int(ds.labels[i]))
            writer.writerow(row)


def load_dataset(path):
    """Inverse of ``save_dataset``; column count selects the container."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    k, d = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    features = np.array([[float(x) for x in row[:d]] for row in body])
    if body and len(body[0]) == d + 3:
        true = np.array([int(row[d]) for row in body])
        observed = np.array([int(row[d + 1]) for row in body])
        return CorruptedDataset(features, observed, true, observed != true, k)
    labels = np.array([int(row[d]) for row in body], dtype=np.int64)
    return LabeledDataset(features, labels, k)
