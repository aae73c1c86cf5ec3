"""Flat-file persistence: model and detector JSON, dataset CSV."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from zbdetect.boundary import BoundaryModelSet, ClassBoundary, DetectorBounds
from zbdetect.errors import ModelMismatch
from zbdetect.head import FeatureExtractor, LabeledDataset, Layer, ZeroBiasHead

FORMAT_VERSION = 1


def _check_version(d: dict, what: str) -> None:
    if d.get("version") != FORMAT_VERSION:
        raise ModelMismatch(f"unsupported {what} format version {d.get('version')!r}")


def model_to_dict(extractor: FeatureExtractor, head: ZeroBiasHead) -> dict:
    return {
        "version": FORMAT_VERSION,
        "n_in": extractor.n_in if extractor.layers else head.n0,
        "n0": head.n0,
        "n1": head.n1,
        "c": head.c,
        "extractor": [
            {"weight": layer.weight.tolist(), "bias": layer.bias.tolist(), "activation": layer.activation}
            for layer in extractor.layers
        ],
        "w0": head.w0.ravel().tolist(),
        "b": head.b.tolist(),
        "w1": head.w1.ravel().tolist(),
    }


def model_from_dict(d: dict) -> tuple[FeatureExtractor, ZeroBiasHead]:
    _check_version(d, "model")
    n0, n1, c = d["n0"], d["n1"], d["c"]
    try:
        head = ZeroBiasHead(
            np.asarray(d["w0"], dtype=float).reshape(n1, n0),
            d["b"],
            np.asarray(d["w1"], dtype=float).reshape(c, n1),
        )
    except ValueError as exc:
        raise ModelMismatch(f"invalid head: {exc}") from exc
    extractor = FeatureExtractor([Layer(np.asarray(l["weight"]), l["bias"], l["activation"]) for l in d["extractor"]])
    if extractor.layers and extractor.n_out != head.n0:
        raise ModelMismatch(f"extractor outputs {extractor.n_out} features, head expects {head.n0}")
    return extractor, head


def detector_to_dict(boundaries: BoundaryModelSet, bounds: DetectorBounds | None = None) -> dict:
    d = {
        "version": FORMAT_VERSION,
        "dim": boundaries.dim,
        "space": boundaries.space,
        "classes": [
            {
                "id": b.class_id,
                "centroid": b.centroid.tolist(),
                "covariance": b.covariance.tolist(),
                "ridge": b.ridge,
                "cutoff": b.cutoff,
            }
            for b in boundaries.boundaries
        ],
    }
    if bounds is not None:
        d["bounds"] = bounds.to_dict()
    return d


def detector_from_dict(d: dict) -> tuple[BoundaryModelSet, DetectorBounds | None]:
    """Rebuild a detector; precisions are recomputed from the stored covariances."""
    _check_version(d, "detector")
    classes = [ClassBoundary(c["id"], c["centroid"], c["covariance"], c["cutoff"], c["ridge"]) for c in d["classes"]]
    bset = BoundaryModelSet(d["dim"], classes, d["space"])
    bounds = None
    if "bounds" in d:
        b = d["bounds"]
        bounds = DetectorBounds(b["alpha"], b["ru_fnr"], b.get("ru_fnr_halfwidth", 0.0))
    return bset, bounds


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def save_model(path, extractor: FeatureExtractor, head: ZeroBiasHead) -> None:
    write_json(path, model_to_dict(extractor, head))


def load_model(path) -> tuple[FeatureExtractor, ZeroBiasHead]:
    return model_from_dict(read_json(path))


def save_detector(path, boundaries: BoundaryModelSet, bounds: DetectorBounds | None = None) -> None:
    write_json(path, detector_to_dict(boundaries, bounds))


def load_detector(path) -> tuple[BoundaryModelSet, DetectorBounds | None]:
    return detector_from_dict(read_json(path))


def check_compatible(extractor: FeatureExtractor, head: ZeroBiasHead, boundaries: BoundaryModelSet) -> None:
    if boundaries.dim != head.n1:
        raise ModelMismatch(f"detector dimension {boundaries.dim} does not match head N1 = {head.n1}")


def input_width(extractor: FeatureExtractor, head: ZeroBiasHead) -> int:
    return extractor.n_in if extractor.layers else head.n0


def save_dataset(path, data: LabeledDataset) -> None:
    """One sample per line: ``label,x_1,...,x_n``.  Floats are written with ``repr`` so they round-trip."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for label, col in zip(data.y, data.x.T):
            writer.writerow([int(label), *map(repr, col.tolist())])


def save_features(path, x: np.ndarray) -> None:
    """Unlabeled rows ``x_1,...,x_n``, the format the monitor reads."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for col in np.asarray(x).T:
            writer.writerow(map(repr, col.tolist()))


def load_dataset(path) -> LabeledDataset:
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.size == 0:
        raise ValueError(f"{path}: empty dataset")
    return LabeledDataset(rows[:, 1:].T, rows[:, 0].astype(np.int64))
