"""Gaussian-cluster stand-in data: known classes, unseen classes and pure noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from zbdetect.head import LabeledDataset
from zbdetect.hypersphere import uniform_sphere_sample

TRAIN_FRACTION = 0.6


@dataclass(frozen=True)
class SyntheticSpec:
    n0: int = 16
    known_classes: int = 4
    abnormal_classes: int = 2
    samples_per_class: int = 500
    cluster_std: float = 1.0
    mean_scale: float = 4.0
    noise_std: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n0 < 2 or self.known_classes < 1 or self.samples_per_class < 1:
            raise ValueError("n0 >= 2, known_classes >= 1 and samples_per_class >= 1 required")
        if self.abnormal_classes < 0:
            raise ValueError("abnormal_classes must be >= 0")
        if not (self.cluster_std > 0 and self.noise_std > 0 and self.mean_scale >= 0):
            raise ValueError("standard deviations must be > 0 and mean_scale >= 0")


def class_means(spec: SyntheticSpec) -> np.ndarray:
    """Means of all classes (known first, then abnormal) as rows, uniform on a sphere of radius ``mean_scale``."""
    rng = np.random.default_rng([spec.seed, 0])
    return spec.mean_scale * uniform_sphere_sample(spec.known_classes + spec.abnormal_classes, spec.n0, rng)


def gen_clusters(spec: SyntheticSpec) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Train / validation split (60/40 per known class) and abnormal-class samples.

    Abnormal samples carry labels ``known_classes ..``, disjoint from the known ones.
    """
    means = class_means(spec)
    rng = np.random.default_rng([spec.seed, 1])
    n = spec.samples_per_class
    n_train = int(round(TRAIN_FRACTION * n))
    parts: dict[str, list] = {"train": [], "val": [], "abnormal": []}
    for k, mu in enumerate(means):
        x = mu[:, None] + spec.cluster_std * rng.standard_normal((spec.n0, n))
        y = np.full(n, k)
        if k < spec.known_classes:
            parts["train"].append((x[:, :n_train], y[:n_train]))
            parts["val"].append((x[:, n_train:], y[n_train:]))
        else:
            parts["abnormal"].append((x, y))

    def join(chunks) -> LabeledDataset:
        if not chunks:
            return LabeledDataset(np.zeros((spec.n0, 0)), np.zeros(0, dtype=np.int64))
        x = np.concatenate([c[0] for c in chunks], axis=1)
        y = np.concatenate([c[1] for c in chunks])
        order = rng.permutation(y.size)
        return LabeledDataset(x[:, order], y[order])

    return join(parts["train"]), join(parts["val"]), join(parts["abnormal"])


def gen_noise(spec: SyntheticSpec, n: int) -> np.ndarray:
    """``n`` pure-noise inputs drawn from N(0, noise_std^2 I), as columns."""
    rng = np.random.default_rng([spec.seed, 2])
    return spec.noise_std * rng.standard_normal((spec.n0, n))


def nearest_centroid_accuracy(train: LabeledDataset, val: LabeledDataset) -> float:
    """Accuracy of the Euclidean nearest-centroid rule; a reference for separability."""
    labels = np.unique(train.y)
    cents = np.stack([train.x[:, train.y == k].mean(axis=1) for k in labels])
    d = ((val.x.T[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float(np.mean(labels[d.argmin(axis=1)] == val.y))
