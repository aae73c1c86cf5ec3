"""Zero-bias classification head and a minimal dense-network trainer.

Batches follow the column convention used throughout the package: an input
batch ``x`` has shape ``(features, q)`` and each column is one sample.

The head computes ``Y0 = W0 @ x + b`` and scores every column of ``Y0``
against the fingerprint rows of ``W1`` by cosine similarity.  Fingerprints
are stored unconstrained and unit-normalized on every forward pass.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from zbdetect.errors import (
    DimensionMismatch,
    Divergence,
    NonFiniteLoss,
    ZeroFeature,
    ZeroVectorRow,
)

ZERO_NORM = 1e-30
ACTIVATIONS = ("tanh", "relu", "identity")
LOSSES = ("ce", "mse")


def affine(w: np.ndarray, x: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    # einsum, not BLAS: a column's result must not depend on the batch it sits in
    y = np.einsum("ij,jk->ik", w, x)
    if b is not None:
        y = y + b[:, None]
    return y


def _row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def _col_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->j", m, m))


def row_unify(m: np.ndarray) -> np.ndarray:
    """Scale every row of ``m`` to unit Euclidean norm."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {m.shape}")
    norms = _row_norms(m)
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroVectorRow(f"rows {bad.tolist()} have zero norm")
    return m / norms[:, None]


def col_unify(m: np.ndarray) -> np.ndarray:
    """Scale every column of ``m`` to unit Euclidean norm."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {m.shape}")
    norms = _col_norms(m)
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroVectorRow(f"columns {bad.tolist()} have zero norm")
    return m / norms[None, :]


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionMismatch(f"expected (features, q) batch, got shape {x.shape}")
    return x


@dataclass
class ZeroBiasHead:
    """Dimension reduction ``(w0, b)`` followed by cosine fingerprint matching ``w1``."""

    w0: np.ndarray
    b: np.ndarray
    w1: np.ndarray

    def __post_init__(self):
        self.w0 = np.array(self.w0, dtype=float, ndmin=2)
        self.b = np.array(self.b, dtype=float).reshape(-1)
        self.w1 = np.array(self.w1, dtype=float, ndmin=2)
        n1, _ = self.w0.shape
        if self.b.shape != (n1,) or self.w1.shape[1] != n1:
            raise DimensionMismatch(
                f"inconsistent head shapes w0={self.w0.shape} b={self.b.shape} w1={self.w1.shape}"
            )
        if n1 < 2 or self.w1.shape[0] < 1:
            raise DimensionMismatch(f"need N1 >= 2 and C >= 1, got N1={n1}, C={self.w1.shape[0]}")
        if not (np.all(np.isfinite(self.w0)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.w1))):
            raise ValueError("head parameters must be finite")

    @property
    def n0(self) -> int:
        return self.w0.shape[1]

    @property
    def n1(self) -> int:
        return self.w0.shape[0]

    @property
    def c(self) -> int:
        return self.w1.shape[0]

    def reduce(self, x) -> np.ndarray:
        x = _as_batch(x)
        if x.shape[0] != self.n0:
            raise DimensionMismatch(f"head expects {self.n0} input features, got {x.shape[0]}")
        return affine(self.w0, x, self.b)

    def fingerprints(self) -> np.ndarray:
        return row_unify(self.w1)

    def copy(self) -> ZeroBiasHead:
        return copy.deepcopy(self)


@dataclass
class DenseHead:
    """Ordinary affine softmax head; the baseline the zero-bias head is compared with."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.array(self.w, dtype=float, ndmin=2)
        self.b = np.array(self.b, dtype=float).reshape(-1)
        if self.b.shape != (self.w.shape[0],):
            raise DimensionMismatch(f"inconsistent dense head shapes w={self.w.shape} b={self.b.shape}")

    @property
    def n0(self) -> int:
        return self.w.shape[1]

    @property
    def c(self) -> int:
        return self.w.shape[0]

    def copy(self) -> DenseHead:
        return copy.deepcopy(self)


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=float, ndmin=2)
        self.bias = np.array(self.bias, dtype=float).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionMismatch(f"layer bias {self.bias.shape} does not match weight {self.weight.shape}")


@dataclass
class FeatureExtractor:
    """Stack of dense layers feeding the head.  No layers means identity."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise DimensionMismatch("extractor layer dimensions do not chain")

    @property
    def n_in(self) -> int | None:
        return self.layers[0].weight.shape[1] if self.layers else None

    @property
    def n_out(self) -> int | None:
        return self.layers[-1].weight.shape[0] if self.layers else None

    def forward(self, x) -> np.ndarray:
        return _forward(self, _as_batch(x))[1][-1]

    def copy(self) -> FeatureExtractor:
        return copy.deepcopy(self)


@dataclass
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = _as_batch(self.x)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.x.shape[1] != self.y.shape[0]:
            raise DimensionMismatch(f"{self.x.shape[1]} samples but {self.y.shape[0]} labels")
        if self.y.size and self.y.min() < 0:
            raise ValueError("labels must be nonnegative")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def subset(self, index) -> LabeledDataset:
        return LabeledDataset(self.x[:, index], self.y[index])


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce"
    scale: float = 8.0
    lr: float = 0.1
    epochs: int = 30
    seed: int = 0
    batch_size: int = 32
    # validation accuracies at which to snapshot the model (first crossing)
    snapshot_at: tuple[float, ...] = ()
    stop_at: float | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        object.__setattr__(self, "snapshot_at", tuple(sorted(float(t) for t in self.snapshot_at)))


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


def _forward(extractor: FeatureExtractor, x: np.ndarray):
    if extractor.n_in is not None and x.shape[0] != extractor.n_in:
        raise DimensionMismatch(f"extractor expects {extractor.n_in} inputs, got {x.shape[0]}")
    pre, acts = [], [x]
    for layer in extractor.layers:
        z = affine(layer.weight, acts[-1], layer.bias)
        pre.append(z)
        acts.append(_activate(layer.activation, z))
    return pre, acts


def head_forward(head: ZeroBiasHead, x) -> np.ndarray:
    """Cosine similarity of every column of ``x`` to every class fingerprint.

    Returns a ``(C, q)`` matrix equal to ``row_unify(w1) @ col_unify(w0 @ x + b)``.
    """
    y0 = head.reduce(x)
    try:
        u = col_unify(y0)
    except ZeroVectorRow as exc:
        raise ZeroFeature(str(exc)) from None
    return affine(head.fingerprints(), u)


def classify(head: ZeroBiasHead, x) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(head_forward(head, x), axis=0)


def predict(extractor: FeatureExtractor, head: ZeroBiasHead | DenseHead, x) -> np.ndarray:
    a = extractor.forward(x)
    if isinstance(head, DenseHead):
        return np.argmax(affine(head.w, a, head.b), axis=0)
    return classify(head, a)


def accuracy(extractor: FeatureExtractor, head, data: LabeledDataset) -> float:
    if data.n == 0:
        return float("nan")
    return float(np.mean(predict(extractor, head, data.x) == data.y))


def own_class_cosine(extractor: FeatureExtractor, head: ZeroBiasHead, data: LabeledDataset) -> float:
    """Mean cosine between each sample and its own class fingerprint."""
    sim = head_forward(head, extractor.forward(data.x))
    return float(np.mean(sim[data.y, np.arange(data.n)]))


def parameters(extractor: FeatureExtractor, head) -> list[np.ndarray]:
    """Trainable arrays in the order used by :func:`loss_and_grad`."""
    params = []
    for layer in extractor.layers:
        params += [layer.weight, layer.bias]
    if isinstance(head, DenseHead):
        params += [head.w, head.b]
    else:
        params += [head.w0, head.b, head.w1]
    return params


def _softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    q = logits.shape[1]
    shifted = logits - logits.max(axis=0, keepdims=True)
    expd = np.exp(shifted)
    total = expd.sum(axis=0, keepdims=True)
    cols = np.arange(q)
    loss = float(np.mean(np.log(total[0]) - shifted[y, cols]))
    dlogits = expd / total
    dlogits[y, cols] -= 1.0
    return loss, dlogits / q


def loss_and_grad(
    extractor: FeatureExtractor,
    head: ZeroBiasHead | DenseHead,
    batch: LabeledDataset,
    cfg: TrainConfig,
) -> tuple[float, list[np.ndarray]]:
    """Mean batch loss and its gradient for every array in ``parameters()``.

    ``ce`` is cross-entropy on ``cfg.scale * cosine``; ``mse`` is the squared
    distance between the similarity column and the one-hot target, summed over
    classes and averaged over the batch.  A :class:`DenseHead` always uses
    plain cross-entropy on its logits.
    """
    if batch.n == 0:
        raise ValueError("empty batch")
    q = batch.n
    pre, acts = _forward(extractor, batch.x)
    a = acts[-1]
    c = head.c
    if batch.y.max() >= c:
        raise ValueError(f"label {batch.y.max()} out of range for {c} classes")

    with np.errstate(over="raise", invalid="raise"):
        try:
            if isinstance(head, DenseHead):
                loss, dlogits = _softmax_xent(affine(head.w, a, head.b), batch.y)
                head_grads = [dlogits @ a.T, dlogits.sum(axis=1)]
                da = head.w.T @ dlogits
            else:
                y0 = affine(head.w0, a, head.b)
                ny = _col_norms(y0)
                if np.any(ny < ZERO_NORM):
                    raise ZeroFeature("reduced feature column has zero norm")
                u = y0 / ny
                nw = _row_norms(head.w1)
                if np.any(nw < ZERO_NORM):
                    raise ZeroVectorRow("fingerprint row has zero norm")
                f = head.w1 / nw[:, None]
                sim = f @ u
                if cfg.loss == "ce":
                    loss, dlogits = _softmax_xent(cfg.scale * sim, batch.y)
                    dsim = cfg.scale * dlogits
                else:
                    target = np.zeros_like(sim)
                    target[batch.y, np.arange(q)] = 1.0
                    diff = sim - target
                    loss = float(np.sum(diff * diff) / q)
                    dsim = 2.0 * diff / q
                df = dsim @ u.T
                du = f.T @ dsim
                # project out the radial component, then undo the scaling
                dw1 = (df - f * np.sum(f * df, axis=1, keepdims=True)) / nw[:, None]
                dy0 = (du - u * np.sum(u * du, axis=0, keepdims=True)) / ny
                head_grads = [dy0 @ a.T, dy0.sum(axis=1), dw1]
                da = head.w0.T @ dy0

            layer_grads: list[np.ndarray] = []
            for i in range(len(extractor.layers) - 1, -1, -1):
                layer = extractor.layers[i]
                dz = da * _activate_grad(layer.activation, pre[i], acts[i + 1])
                layer_grads = [dz @ acts[i].T, dz.sum(axis=1)] + layer_grads
                da = layer.weight.T @ dz
        except FloatingPointError as exc:
            raise NonFiniteLoss(str(exc)) from None
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    return loss, layer_grads + head_grads


def init_model(
    n_in: int,
    hidden: Sequence[int],
    n1: int,
    c: int,
    seed: int,
    activation: str = "tanh",
    dense_head: bool = False,
) -> tuple[FeatureExtractor, ZeroBiasHead | DenseHead]:
    """Glorot-uniform extractor plus a zero-bias (or dense) head."""
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = n_in
    for width in hidden:
        lim = np.sqrt(6.0 / (fan_in + width))
        layers.append(Layer(rng.uniform(-lim, lim, (width, fan_in)), np.zeros(width), activation))
        fan_in = width
    extractor = FeatureExtractor(layers)
    if dense_head:
        lim = np.sqrt(6.0 / (fan_in + c))
        return extractor, DenseHead(rng.uniform(-lim, lim, (c, fan_in)), np.zeros(c))
    lim = np.sqrt(6.0 / (fan_in + n1))
    w0 = rng.uniform(-lim, lim, (n1, fan_in))
    w1 = rng.uniform(-1.0, 1.0, (c, n1))
    return extractor, ZeroBiasHead(w0, np.zeros(n1), w1)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    val_accuracy: float
    own_cosine: float


@dataclass
class Snapshot:
    trigger: float
    accuracy: float
    step: int
    extractor: FeatureExtractor
    head: ZeroBiasHead | DenseHead


@dataclass
class TrainResult:
    extractor: FeatureExtractor
    head: ZeroBiasHead | DenseHead
    history: list[EpochRecord]
    snapshots: list[Snapshot]

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].val_accuracy


def train(
    extractor: FeatureExtractor,
    head: ZeroBiasHead | DenseHead,
    train_set: LabeledDataset,
    val_set: LabeledDataset,
    cfg: TrainConfig,
) -> TrainResult:
    """Mini-batch gradient descent with a fixed learning rate.

    The inputs are not modified.  History entry 0 describes the untrained
    model.  When ``cfg.snapshot_at`` is set, validation accuracy is checked
    after every step and a copy of the model is kept the first time each
    trigger is reached.
    """
    if train_set.n == 0:
        raise ValueError("empty training set")
    extractor, head = extractor.copy(), head.copy()
    params = parameters(extractor, head)
    rng = np.random.default_rng(cfg.seed)
    pending = list(cfg.snapshot_at)
    snapshots: list[Snapshot] = []
    watch = bool(pending) or cfg.stop_at is not None

    def record(epoch: int, loss: float) -> EpochRecord:
        cos = own_class_cosine(extractor, head, train_set) if isinstance(head, ZeroBiasHead) else float("nan")
        return EpochRecord(
            epoch, loss, accuracy(extractor, head, train_set), accuracy(extractor, head, val_set), cos
        )

    def check(step: int) -> bool:
        acc = accuracy(extractor, head, val_set)
        while pending and acc >= pending[0]:
            snapshots.append(Snapshot(pending.pop(0), acc, step, extractor.copy(), head.copy()))
        return cfg.stop_at is not None and acc >= cfg.stop_at

    history = [record(0, float("nan"))]
    step = 0
    stop = watch and check(0)
    for epoch in range(1, cfg.epochs + 1):
        if stop:
            break
        order = rng.permutation(train_set.n)
        losses = []
        for start in range(0, train_set.n, cfg.batch_size):
            batch = train_set.subset(order[start:start + cfg.batch_size])
            try:
                loss, grads = loss_and_grad(extractor, head, batch, cfg)
            except NonFiniteLoss as exc:
                raise Divergence(f"epoch {epoch}, step {step}: {exc}") from None
            for p, g in zip(params, grads):
                p -= cfg.lr * g
            losses.append(loss)
            step += 1
            if watch and check(step):
                stop = True
                break
        history.append(record(epoch, float(np.mean(losses))))
    return TrainResult(extractor, head, history, snapshots)
