"""End-to-end experiment pipeline and figure tables.

``run_pipeline`` trains a zero-bias classifier on synthetic clusters,
converts it into a boundary detector, computes the detector's bounds and
measures the sequential charts on streams of real detector decisions.
The ``fig*`` functions produce the tables written by ``zbdetect simulate``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from zbdetect import __version__
from zbdetect.boundary import BoundaryModelSet, compute_bounds, detect_inputs, fit_boundaries
from zbdetect.charts import BernoulliChangeModel, approx_delay, kl_bernoulli
from zbdetect.config import (
    chart_config,
    config_hash,
    mc_config,
    radians,
    synthetic_spec,
    train_config,
)
from zbdetect.errors import NotDetectable
from zbdetect.head import (
    FeatureExtractor,
    LabeledDataset,
    ZeroBiasHead,
    accuracy,
    col_unify,
    head_forward,
    init_model,
    train,
)
from zbdetect.hypersphere import capacity_table, uniform_sphere_sample
from zbdetect.simulate import (
    ChartConfig,
    Source,
    StreamScenario,
    bernoulli_scenario,
    measure_arl,
    measure_delay,
    run_first_alarms,
)
from zbdetect.synthetic import gen_clusters, gen_noise

logger = logging.getLogger(__name__)


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    return value


@dataclass
class RunReport:
    status: str
    detector: dict[str, Any]
    charts: dict[str, Any]
    provenance: dict[str, Any]
    config: dict[str, Any]

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return cls(**json.loads(text))


def provenance(cfg: dict) -> dict:
    return {
        "config_hash": config_hash(cfg),
        "seed": cfg["data"]["seed"],
        "versions": {"zbdetect": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }


def build_model(cfg: dict, seed_offset: int = 0):
    spec = synthetic_spec(cfg)
    m = cfg["model"]
    return init_model(spec.n0, m["hidden"], m["n1"], spec.known_classes, m["seed"] + seed_offset, m["activation"])


@dataclass
class Experiment:
    """Datasets shared by every stage of a run."""

    train: LabeledDataset
    val: LabeledDataset
    abnormal: LabeledDataset
    noise: np.ndarray
    sphere_seed: int

    @classmethod
    def from_config(cls, cfg: dict) -> Experiment:
        spec = synthetic_spec(cfg)
        train_set, val_set, abnormal = gen_clusters(spec)
        n_noise = max(abnormal.n, 1000)
        return cls(train_set, val_set, abnormal, gen_noise(spec, n_noise), cfg["detector"]["mc_seed"] + 1_000_003)


@dataclass
class ConvertedDetector:
    extractor: FeatureExtractor
    head: ZeroBiasHead
    boundaries: BoundaryModelSet
    alpha: float
    alpha_train: float


def convert(cfg: dict, extractor, head, exp: Experiment) -> ConvertedDetector:
    det = cfg["detector"]
    boundaries = fit_boundaries(extractor, head, exp.train, det["ridge"], det["space"], det["cutoff_quantile"])
    return ConvertedDetector(
        extractor,
        head,
        boundaries,
        1.0 - accuracy(extractor, head, exp.val),
        1.0 - accuracy(extractor, head, exp.train),
    )


def decision_pools(cfg: dict, det: ConvertedDetector, exp: Experiment) -> dict[str, np.ndarray]:
    """Detector decisions on normal validation data and on each abnormal source."""
    ex, hd, bset = det.extractor, det.head, det.boundaries
    sphere = uniform_sphere_sample(cfg["detector"]["eval_points"], bset.dim, exp.sphere_seed)
    pools = {
        "validation-normal": detect_inputs(ex, hd, bset, exp.val.x),
        "training": detect_inputs(ex, hd, bset, exp.train.x),
        "uniform-sphere": bset.detect_many(sphere.T),
        "noise": detect_inputs(ex, hd, bset, exp.noise),
    }
    if exp.abnormal.n:
        pools["abnormal-class"] = detect_inputs(ex, hd, bset, exp.abnormal.x)
    return pools


def detector_metrics(cfg: dict, det: ConvertedDetector, bounds, pools: dict[str, np.ndarray]) -> dict:
    source = cfg["detector"]["abnormal_source"]
    fpr = float(pools["validation-normal"].mean())
    tpr = float(pools[source].mean())
    return {
        "abnormal_source": source,
        "tpr": tpr,
        "fnr": 1.0 - tpr,
        "fpr": fpr,
        "tnr": 1.0 - fpr,
        "fpr_train": float(pools["training"].mean()),
        "tpr_by_source": {k: float(pools[k].mean()) for k in ("abnormal-class", "uniform-sphere", "noise") if k in pools},
        "alpha": det.alpha,
        "alpha_train": det.alpha_train,
        "val_accuracy": 1.0 - det.alpha,
        **{k: v for k, v in bounds.to_dict().items() if k != "alpha"},
        "classes_fitted": len(det.boundaries),
    }


def _clip_rate(p: float) -> float:
    return min(max(p, 1e-6), 1.0 - 1e-6)


def chart_metrics(cfg: dict, model: BernoulliChangeModel, pools: dict[str, np.ndarray]) -> dict:
    sc = cfg["scenario"]
    source = cfg["detector"]["abnormal_source"]
    pre = Source.from_decisions(pools["validation-normal"], "validation-normal")
    post = Source.from_decisions(pools[source], source)
    scenario = StreamScenario(pre, post, sc["change_time"], sc["length"], sc["seed"])
    out = {}
    for kind in cfg["chart"]["kinds"]:
        ccfg = chart_config(cfg, kind, fpr=model.fpr, tpr_lower=model.tpr_lower)
        delay = measure_delay(ccfg, scenario, sc["trials"])
        normal = run_first_alarms(ccfg, pre, pre, sc["length"], sc["length"], sc["trials"], sc["seed"] + 1)
        alarmed = normal.time > 0
        arl = measure_arl(ccfg, sc["trials"], sc["seed"] + 2, cap=sc["length"])
        kl = kl_bernoulli(_clip_rate(post.rate), _clip_rate(pre.rate))
        out[kind] = {
            "model": {"fpr": model.fpr, "tpr_lower": model.tpr_lower, "tpr_max": model.tpr_max},
            "h": ccfg.threshold,
            "delay": delay.to_dict(),
            "approx_delay": approx_delay(ccfg.threshold, kl) if kl > 0 else None,
            "normal_stream": {
                "runs": int(alarmed.size),
                "false_alarm_runs": int(alarmed.sum()),
                "false_alarm_rate": float(alarmed.sum() / (normal.time[alarmed].sum() + sc["length"] * (~alarmed).sum())),
                "mean_run_length": float(normal.time[alarmed].mean()) if alarmed.any() else None,
            },
            "arl_model": arl.to_dict(),
        }
    return out


def run_pipeline(cfg: dict, exp: Experiment | None = None) -> RunReport:
    """Train, convert, bound and monitor.  Raises :class:`NotDetectable`
    (carrying the partial report as ``.report``) when the bounds fail
    ``tpr_lower > fpr_upper``; the chart phase is then skipped."""
    exp = exp or Experiment.from_config(cfg)
    extractor, head = build_model(cfg)
    result = train(extractor, head, exp.train, exp.val, train_config(cfg))
    det = convert(cfg, result.extractor, result.head, exp)
    bounds = compute_bounds(det.boundaries, det.alpha, mc_config(cfg))
    pools = decision_pools(cfg, det, exp)
    metrics = detector_metrics(cfg, det, bounds, pools)
    metrics["train_history"] = [asdict(r) for r in result.history]
    report = RunReport("ok", metrics, {}, provenance(cfg), cfg)
    if not bounds.detectable:
        report.status = "not-detectable"
        exc = NotDetectable(f"tpr_lower {bounds.tpr_lower:.4f} <= fpr_upper {bounds.fpr_upper:.4f}")
        exc.report = report
        raise exc
    c = cfg["chart"]
    model = BernoulliChangeModel.from_bounds(
        bounds.fpr_upper if c["fpr"] is None else c["fpr"],
        bounds.tpr_lower if c["tpr_lower"] is None else c["tpr_lower"],
        c["epsilon"],
        c["fpr_floor"],
    )
    report.charts = chart_metrics(cfg, model, pools)
    return report


# ---------------------------------------------------------------------------
# figure tables


@dataclass
class SweepRow:
    trigger: float
    accuracy: float
    tpr: float
    fpr: float
    tpr_uniform: float
    ru_fnr: float
    alpha: float
    models: int


def accuracy_sweep(cfg: dict, snapshots, repeats: int = 1, exp: Experiment | None = None) -> list[SweepRow]:
    """Detector rates at the first training step reaching each validation-accuracy trigger.

    Each of ``repeats`` training runs uses its own model and shuffling seed;
    rows average the snapshots that reached the trigger and carry the mean
    accuracy actually achieved.
    """
    exp = exp or Experiment.from_config(cfg)
    triggers = sorted(float(s) for s in snapshots)
    collected: dict[float, list[tuple]] = {t: [] for t in triggers}
    base_seed = cfg["train"]["seed"]
    for r in range(repeats):
        extractor, head = build_model(cfg, seed_offset=r)
        tcfg = train_config(cfg, seed=base_seed + r, snapshot_at=tuple(triggers), stop_at=triggers[-1])
        result = train(extractor, head, exp.train, exp.val, tcfg)
        for snap in result.snapshots:
            det = convert(cfg, snap.extractor, snap.head, exp)
            bounds = compute_bounds(det.boundaries, det.alpha, mc_config(cfg))
            pools = decision_pools(cfg, det, exp)
            collected[snap.trigger].append(
                (
                    snap.accuracy,
                    float(pools[cfg["detector"]["abnormal_source"]].mean()),
                    float(pools["validation-normal"].mean()),
                    float(pools["uniform-sphere"].mean()),
                    bounds.ru_fnr,
                    det.alpha,
                )
            )
    rows = []
    for t in triggers:
        vals = np.array(collected[t]) if collected[t] else np.full((1, 6), np.nan)
        mean = vals.mean(axis=0)
        rows.append(SweepRow(t, *(float(v) for v in mean), len(collected[t])))
    return rows


def fig4_capacity(cfg: dict) -> list[dict]:
    f = cfg["figures"]["capacity"]
    rows = []
    for m, sigma, r0, cap in capacity_table(f["m"], radians(f["sigma_deg"])):
        rows.append({"m": m, "sigma": sigma, "sigma_deg": round(math.degrees(sigma), 9), "r0": r0, "max_classes": cap})
    return rows


def _fig_chart(f: dict, kind: str, h: float) -> ChartConfig:
    return ChartConfig(kind=kind, fpr=f["fpr"], tpr_lower=f["tpr_lower"], epsilon=f.get("epsilon", 0.01), h=h, m=f["m"], u=f["u"])


def fig13_arl(cfg: dict) -> list[dict]:
    """False alarms on pure pre-change streams, with the matching mean delay, per threshold."""
    f = cfg["figures"]["arl"]
    rows = []
    for kind in f["kinds"]:
        for h in f["h"]:
            ccfg = _fig_chart(f, kind, h)
            arl = measure_arl(ccfg, f["trials"], f["seed"], cap=f["cap"])
            delay = measure_delay(
                ccfg, bernoulli_scenario(f["fpr"], f["tpr"], f["change_time"], f["cap"], f["seed"] + 1), f["trials"]
            )
            rows.append(
                {
                    "chart": kind,
                    "fpr": f["fpr"],
                    "tpr": f["tpr"],
                    "h": h,
                    "runs": f["trials"],
                    "run_cap": f["cap"],
                    "false_alarm_runs": arl.alarmed,
                    "false_alarm_rate": arl.false_alarm_rate,
                    "mean_run_length": arl.mean_run_length,
                    "mean_delay": delay.mean,
                }
            )
    return rows


def fig14_delay(cfg: dict) -> list[dict]:
    f = cfg["figures"]["delay"]
    rows = []
    for kind in f["kinds"]:
        for tpr in f["tpr"]:
            kl = kl_bernoulli(tpr, f["fpr"])
            for h in f["h"]:
                ccfg = _fig_chart(f, kind, h)
                d = measure_delay(ccfg, bernoulli_scenario(f["fpr"], tpr, f["change_time"], f["length"], f["seed"]), f["trials"])
                rows.append(
                    {
                        "chart": kind,
                        "fpr": f["fpr"],
                        "tpr": tpr,
                        "h": h,
                        "mean_delay": d.mean,
                        "ci_halfwidth": d.ci_halfwidth,
                        "median_delay": d.median,
                        "q10": d.q10,
                        "q90": d.q90,
                        "approx_delay": approx_delay(h, kl),
                        "n": d.n,
                        "false_alarms": d.false_alarms,
                    }
                )
    return rows


def fig15_dist(cfg: dict) -> list[dict]:
    f = cfg["figures"]["dist"]
    rows = []
    for tpr in f["tpr"]:
        for fpr in f["fpr"]:
            if not fpr < f["tpr_lower"]:
                continue
            for h in f["h"]:
                ccfg = ChartConfig(kind=f["kind"], fpr=fpr, tpr_lower=f["tpr_lower"], h=h, m=f["m"], u=f["u"])
                d = measure_delay(ccfg, bernoulli_scenario(fpr, tpr, f["change_time"], f["length"], f["seed"]), f["trials"])
                rows.append(
                    {
                        "chart": f["kind"],
                        "tpr": tpr,
                        "fpr": fpr,
                        "tpr_fpr_ratio": tpr / fpr,
                        "h": h,
                        "mean_delay": d.mean,
                        "std_delay": d.std,
                        "q10": d.q10,
                        "median_delay": d.median,
                        "q90": d.q90,
                        "n": d.n,
                    }
                )
    return rows


def write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if isinstance(v, float) and not math.isfinite(v) else v) for k, v in row.items()})


def write_figures(cfg: dict, outdir: Path, exp: Experiment | None = None) -> dict[str, Path]:
    outdir = Path(outdir)
    exp = exp or Experiment.from_config(cfg)
    sweep = cfg["figures"]["accuracy_sweep"]
    tables = {
        "fig4_capacity.csv": lambda: fig4_capacity(cfg),
        "fig12_perf.csv": lambda: [asdict(r) for r in accuracy_sweep(cfg, sweep["snapshots"], sweep["repeats"], exp)],
        "fig13_arl.csv": lambda: fig13_arl(cfg),
        "fig14_delay.csv": lambda: fig14_delay(cfg),
        "fig15_dist.csv": lambda: fig15_dist(cfg),
    }
    written = {}
    for name, build in tables.items():
        logger.info("writing %s", name)
        write_csv(outdir / name, build())
        written[name] = outdir / name
    return written


# ---------------------------------------------------------------------------
# projection export


def top_components(y: np.ndarray, k: int = 2, iters: int = 500, seed: int = 0) -> np.ndarray:
    """Leading ``k`` principal directions of the columns of ``y`` by power iteration with deflation."""
    centered = y - y.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / max(y.shape[1] - 1, 1)
    rng = np.random.default_rng(seed)
    comps = []
    for _ in range(k):
        v = rng.standard_normal(cov.shape[0])
        v /= np.linalg.norm(v)
        for _ in range(iters):
            w = cov @ v
            for c in comps:
                w -= (w @ c) * c
            norm = np.linalg.norm(w)
            if norm == 0:
                break
            w /= norm
            if np.abs(w - v).max() < 1e-12:
                v = w
                break
            v = w
        comps.append(v)
    return np.stack(comps)


def projection_rows(extractor: FeatureExtractor, head: ZeroBiasHead, data: LabeledDataset) -> list[dict]:
    """Unit-sphere features and fingerprints projected on the features' top-2 principal components."""
    feats = col_unify(head.reduce(extractor.forward(data.x)))
    comps = top_components(feats)
    center = feats.mean(axis=1)
    predicted = np.argmax(head_forward(head, extractor.forward(data.x)), axis=0)
    rows = []
    for k, f in enumerate(head.fingerprints()):
        p = comps @ (f - center)
        rows.append({"kind": "fingerprint", "label": k, "predicted": k, "pc1": p[0], "pc2": p[1]})
    proj = comps @ (feats - center[:, None])
    for j in range(data.n):
        rows.append({"kind": "feature", "label": int(data.y[j]), "predicted": int(predicted[j]), "pc1": proj[0, j], "pc2": proj[1, j]})
    return rows
