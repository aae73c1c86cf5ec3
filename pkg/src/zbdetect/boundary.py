"""Convert a trained zero-bias classifier into a binary abnormality detector.

Each known class gets a Mahalanobis boundary fitted on the training samples
the classifier gets right: centroid, covariance, a ridge-regularized
precision matrix and a cut-off equal to the largest fitting distance.  A
feature vector is normal (0) if any boundary contains it, abnormal (1)
otherwise.

Boundaries live either on the unit sphere (``space="sphere"``, reduced
features are column-normalized first) or in the raw reduced-feature space
(``space="raw"``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from zbdetect.errors import DegenerateClass, DimensionMismatch, DomainError
from zbdetect.head import (
    FeatureExtractor,
    LabeledDataset,
    ZeroBiasHead,
    classify,
    col_unify,
)
from zbdetect.hypersphere import McConfig, estimate_ru_fnr

logger = logging.getLogger(__name__)

SPACES = ("sphere", "raw")
DEFAULT_RIDGE_SCALE = 1e-6


@dataclass
class ClassBoundary:
    class_id: int
    centroid: np.ndarray
    covariance: np.ndarray
    cutoff: float
    ridge: float = 0.0
    precision: np.ndarray | None = None

    def __post_init__(self):
        self.centroid = np.array(self.centroid, dtype=float).reshape(-1)
        self.covariance = np.array(self.covariance, dtype=float, ndmin=2)
        d = self.centroid.shape[0]
        if self.covariance.shape != (d, d):
            raise DimensionMismatch(f"covariance {self.covariance.shape} does not match centroid length {d}")
        if not np.allclose(self.covariance, self.covariance.T, rtol=0, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        if self.cutoff < 0 or self.ridge < 0:
            raise ValueError("cutoff and ridge must be >= 0")
        regularized = self.covariance + self.ridge * np.eye(d)
        if self.precision is None:
            try:
                self.precision = np.linalg.inv(regularized)
            except np.linalg.LinAlgError:
                raise DegenerateClass(f"class {self.class_id}: covariance is singular") from None
        self.precision = np.array(self.precision, dtype=float, ndmin=2)
        residual = np.abs(self.precision @ regularized - np.eye(d)).max()
        if not residual <= 1e-6:
            raise DegenerateClass(
                f"class {self.class_id}: precision inconsistent with covariance (residual {residual:.3g})"
            )

    @property
    def dim(self) -> int:
        return self.centroid.shape[0]


def _distances(y: np.ndarray, centroid: np.ndarray, precision: np.ndarray) -> np.ndarray:
    # y is (dim, q).  einsum keeps each distance independent of the batch size,
    # which the fitting-set guarantee relies on.
    diff = y.T - centroid
    d2 = np.einsum("ij,jk,ik->i", diff, precision, diff)
    return np.sqrt(np.maximum(d2, 0.0))


def _as_columns(y, dim: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] != dim:
        raise DimensionMismatch(f"expected {dim}-dimensional feature columns, got shape {y.shape}")
    return y


def mahalanobis_many(y, boundary: ClassBoundary) -> np.ndarray:
    """Distances of every column of ``y`` to the boundary centroid."""
    return _distances(_as_columns(y, boundary.dim), boundary.centroid, boundary.precision)


def mahalanobis(x, boundary: ClassBoundary) -> float:
    return float(mahalanobis_many(x, boundary)[0])


@dataclass
class BoundaryModelSet:
    dim: int
    boundaries: list[ClassBoundary] = field(default_factory=list)
    space: str = "sphere"

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}, got {self.space!r}")
        ids = [b.class_id for b in self.boundaries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate class ids {ids}")
        for b in self.boundaries:
            if b.dim != self.dim:
                raise DimensionMismatch(f"class {b.class_id} has dimension {b.dim}, set has {self.dim}")

    def __len__(self) -> int:
        return len(self.boundaries)

    def contains(self, y) -> np.ndarray:
        """Boolean mask over the columns of ``y``: inside at least one boundary."""
        y = _as_columns(y, self.dim)
        inside = np.zeros(y.shape[1], dtype=bool)
        for b in self.boundaries:
            inside |= _distances(y, b.centroid, b.precision) <= b.cutoff
        return inside

    def detect_many(self, y) -> np.ndarray:
        return (~self.contains(y)).astype(np.int8)


def detect(boundaries: BoundaryModelSet, x) -> int:
    """0 if the feature vector ``x`` is inside some class boundary, else 1 (abnormal)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch(f"detect takes one feature vector, got shape {x.shape}")
    return int(boundaries.detect_many(x)[0])


def reduced_features(extractor: FeatureExtractor, head: ZeroBiasHead, x) -> np.ndarray:
    """``Y0 = w0 @ F(x) + b``: the features just before fingerprint matching."""
    a = extractor.forward(x)
    return head.reduce(a)


def embed(extractor: FeatureExtractor, head: ZeroBiasHead, x, space: str = "sphere") -> np.ndarray:
    y0 = reduced_features(extractor, head, x)
    return col_unify(y0) if space == "sphere" else y0


def detect_inputs(extractor: FeatureExtractor, head: ZeroBiasHead, boundaries: BoundaryModelSet, x) -> np.ndarray:
    """Detector decisions for raw input columns ``x``."""
    return boundaries.detect_many(embed(extractor, head, x, boundaries.space))


def fit_boundaries(
    extractor: FeatureExtractor,
    head: ZeroBiasHead,
    train: LabeledDataset,
    ridge: float | None = None,
    space: str = "sphere",
    cutoff_quantile: float | None = None,
) -> BoundaryModelSet:
    """Fit one boundary per known class on the correctly classified samples.

    ``ridge=None`` uses ``1e-6 * trace(cov) / N1`` per class.  With
    ``ridge=0`` a class needs at least ``N1 + 1`` correct samples.  The
    cut-off is the maximum fitting distance unless ``cutoff_quantile`` is
    given, in which case every fitting sample is no longer guaranteed to be
    inside its boundary.
    """
    if space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}, got {space!r}")
    if cutoff_quantile is not None and not (0.0 < cutoff_quantile <= 1.0):
        raise DomainError("cutoff_quantile must lie in (0, 1]")
    a = extractor.forward(train.x)
    y0 = head.reduce(a)
    correct = classify(head, a) == train.y
    feats = col_unify(y0) if space == "sphere" else y0
    n1 = head.n1

    boundaries = []
    for k in range(head.c):
        cols = np.flatnonzero(correct & (train.y == k))
        if cols.size == 0:
            logger.warning("class %d has no correctly classified samples; no boundary fitted", k)
            continue
        pts = feats[:, cols]
        if ridge == 0 and cols.size < n1 + 1:
            raise DegenerateClass(f"class {k}: {cols.size} correct samples, need {n1 + 1} with ridge=0")
        centroid = pts.mean(axis=1)
        if cols.size > 1:
            cov = np.cov(pts, ddof=1)
            cov = 0.5 * (cov + cov.T)
        else:
            cov = np.zeros((n1, n1))
        if ridge is None:
            scale = np.trace(cov) / n1
            class_ridge = DEFAULT_RIDGE_SCALE * scale if scale > 0 else 1e-12
        else:
            class_ridge = float(ridge)
        b = ClassBoundary(k, centroid, cov, 0.0, class_ridge)
        dist = _distances(pts, b.centroid, b.precision)
        if cutoff_quantile is None:
            b.cutoff = float(dist.max())
        else:
            b.cutoff = float(np.quantile(dist, cutoff_quantile))
        boundaries.append(b)
    return BoundaryModelSet(n1, boundaries, space)


@dataclass(frozen=True)
class DetectorBounds:
    alpha: float
    ru_fnr: float
    ru_fnr_halfwidth: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "ru_fnr"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise DomainError(f"{name} must lie in [0, 1], got {v}")

    @property
    def fpr_upper(self) -> float:
        return self.alpha

    @property
    def fnr_upper(self) -> float:
        return self.ru_fnr

    @property
    def tpr_lower(self) -> float:
        return 1.0 - self.ru_fnr

    @property
    def detectable(self) -> bool:
        return self.tpr_lower > self.fpr_upper

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "ru_fnr": self.ru_fnr,
            "ru_fnr_halfwidth": self.ru_fnr_halfwidth,
            "fpr_upper": self.fpr_upper,
            "fnr_upper": self.fnr_upper,
            "tpr_lower": self.tpr_lower,
            "detectable": self.detectable,
        }


def compute_bounds(boundaries: BoundaryModelSet, alpha: float, mc: McConfig = McConfig()) -> DetectorBounds:
    """Performance envelope: FPR <= alpha, FNR <= RU_FNR, TPR >= 1 - RU_FNR."""
    if not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    ratio, hw = estimate_ru_fnr(boundaries, mc)
    return DetectorBounds(float(alpha), ratio, hw)
