"""Command-line entry point: ``zbdetect <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from zbdetect.boundary import compute_bounds, fit_boundaries
from zbdetect.charts import BernoulliChangeModel
from zbdetect.config import chart_config, load_config, mc_config, synthetic_spec, train_config
from zbdetect.errors import MalformedRow, ModelMismatch, NotDetectable, ZbDetectError
from zbdetect.harness import (
    Experiment,
    build_model,
    fig4_capacity,
    projection_rows,
    run_pipeline,
    write_csv,
    write_figures,
)
from zbdetect.head import LabeledDataset, accuracy, train
from zbdetect.hypersphere import McConfig
from zbdetect.monitor import Monitor, make_chart
from zbdetect.serialize import (
    load_dataset,
    load_detector,
    load_model,
    save_dataset,
    save_detector,
    save_features,
    save_model,
)
from zbdetect.synthetic import gen_clusters, gen_noise

logger = logging.getLogger("zbdetect")

EXIT_NOT_DETECTABLE = 3
EXIT_BAD_INPUT = 4


def _parse_set(items: list[str]) -> dict:
    """``section.key=value`` pairs into a nested dict; values parse as JSON, else as strings."""
    out: dict = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _config(args) -> dict:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides.setdefault("data", {})["seed"] = args.seed
    return load_config(args.config, overrides)


def _load_split(data_dir: Path) -> tuple[LabeledDataset, LabeledDataset]:
    return load_dataset(data_dir / "train.csv"), load_dataset(data_dir / "val.csv")


def cmd_gen(args) -> int:
    cfg = _config(args)
    spec = synthetic_spec(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set, abnormal = gen_clusters(spec)
    save_dataset(out / "train.csv", train_set)
    save_dataset(out / "val.csv", val_set)
    save_dataset(out / "abnormal.csv", abnormal)
    save_features(out / "noise.csv", gen_noise(spec, max(abnormal.n, 1000)))
    logger.info("wrote %d train, %d val, %d abnormal samples to %s", train_set.n, val_set.n, abnormal.n, out)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    train_set, val_set = _load_split(Path(args.data))
    spec = synthetic_spec(cfg)
    if train_set.x.shape[0] != spec.n0:
        cfg["data"]["n0"] = train_set.x.shape[0]
    cfg["data"]["known_classes"] = int(train_set.y.max()) + 1
    extractor, head = build_model(cfg)
    result = train(extractor, head, train_set, val_set, train_config(cfg))
    save_model(args.out, result.extractor, result.head)
    print(json.dumps({"final_accuracy": result.final_accuracy, "epochs": len(result.history) - 1}))
    return 0


def cmd_convert(args) -> int:
    cfg = _config(args)
    extractor, head = load_model(args.model)
    train_set, val_set = _load_split(Path(args.data))
    det = cfg["detector"]
    boundaries = fit_boundaries(extractor, head, train_set, det["ridge"], det["space"], det["cutoff_quantile"])
    alpha = 1.0 - accuracy(extractor, head, val_set)
    bounds = compute_bounds(boundaries, alpha, mc_config(cfg))
    save_detector(args.out, boundaries, bounds)
    print(json.dumps(bounds.to_dict()))
    return 0


def cmd_bounds(args) -> int:
    boundaries, stored = load_detector(args.detector)
    alpha = args.alpha if args.alpha is not None else (stored.alpha if stored else None)
    if alpha is None:
        raise SystemExit("detector file carries no bounds; pass --alpha")
    if stored is not None and args.alpha is None and args.mc_points is None:
        bounds = stored
    else:
        mc = McConfig(args.mc_points or 20000, args.mc_seed, args.workers)
        bounds = compute_bounds(boundaries, alpha, mc)
    print(json.dumps(bounds.to_dict(), indent=1))
    return 0 if bounds.detectable else EXIT_NOT_DETECTABLE


def cmd_capacity(args) -> int:
    cfg = load_config(args.config) if args.config else load_config()
    grid = cfg["figures"]["capacity"]
    ms = args.m or grid["m"]
    sigmas = args.sigma_deg or grid["sigma_deg"]
    cfg["figures"]["capacity"] = {"m": ms, "sigma_deg": sigmas}
    rows = fig4_capacity(cfg)
    if args.out:
        write_csv(Path(args.out), rows)
    else:
        print(",".join(rows[0]))
        for r in rows:
            print(",".join(str(v) for v in r.values()))
    return 0


def _pipeline(cfg: dict, out: Path):
    try:
        report = run_pipeline(cfg)
    except NotDetectable as exc:
        (out / "report.json").write_text(exc.report.to_json() + "\n")
        logger.error("not detectable: %s; chart phase skipped", exc)
        return None
    (out / "report.json").write_text(report.to_json() + "\n")
    return report


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_figures(cfg, out)
    if args.figures_only:
        return 0
    return 0 if _pipeline(cfg, out) is not None else EXIT_NOT_DETECTABLE


def cmd_report(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = 0 if _pipeline(cfg, out) is not None else EXIT_NOT_DETECTABLE
    if args.project:
        if args.model:
            extractor, head = load_model(args.model)
            data = load_dataset(Path(args.data) / "val.csv") if args.data else Experiment.from_config(cfg).val
        else:
            exp = Experiment.from_config(cfg)
            extractor, head = build_model(cfg)
            result = train(extractor, head, exp.train, exp.val, train_config(cfg))
            extractor, head, data = result.extractor, result.head, exp.val
        write_csv(Path(args.project), projection_rows(extractor, head, data))
    return status


def cmd_monitor(args) -> int:
    extractor, head = load_model(args.model)
    boundaries, bounds = load_detector(args.detector)
    cfg = _config(args)
    c = cfg["chart"]
    fpr = args.fpr if args.fpr is not None else (c["fpr"] if c["fpr"] is not None else (bounds.fpr_upper if bounds else None))
    tpr_lower = args.tpr_lower if args.tpr_lower is not None else (
        c["tpr_lower"] if c["tpr_lower"] is not None else (bounds.tpr_lower if bounds else None)
    )
    if fpr is None or tpr_lower is None:
        raise SystemExit("no bounds in the detector file; pass --fpr and --tpr-lower")
    model = BernoulliChangeModel.from_bounds(fpr, tpr_lower, c["epsilon"], c["fpr_floor"])
    kinds = args.chart or c["kinds"]
    changes = {"fpr": model.fpr, "tpr_lower": model.tpr_lower}
    if args.h is not None:
        changes.update(h=args.h, arl=None)
    charts = [make_chart(chart_config(cfg, kind, **changes)) for kind in kinds]
    monitor = Monitor(extractor, head, boundaries, charts)
    source = sys.stdin if args.input in (None, "-") else open(args.input)
    decisions = open(args.decisions, "w") if args.decisions else None
    try:
        monitor.run(source, sys.stdout, decisions)
    finally:
        if source is not sys.stdin:
            source.close()
        if decisions is not None:
            decisions.close()
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; its values win over flags")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. train.lr=0.05")
    p.add_argument("--seed", type=int, help="data seed (data.seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zbdetect", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic train/val/abnormal/noise CSVs")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a zero-bias classifier")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="directory with train.csv and val.csv")
    p.add_argument("--out", required=True, help="model JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="fit class boundaries and bounds")
    _add_config_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="detector JSON")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("bounds", help="print (or recompute) a detector's bounds")
    p.add_argument("--detector", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mc-points", type=int)
    p.add_argument("--mc-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("capacity", help="cap ratios and class capacity table")
    p.add_argument("--config")
    p.add_argument("--m", type=int, nargs="+")
    p.add_argument("--sigma-deg", type=float, nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("simulate", help="write figure CSVs and the pipeline report")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--figures-only", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="run the pipeline and write report.json")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--project", metavar="CSV", help="also export a 2-D projection of features and fingerprints")
    p.add_argument("--model", help="project this model instead of training one")
    p.add_argument("--data", help="directory with val.csv for the projection")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("monitor", help="stream CSV rows through detector and charts")
    _add_config_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--input", help="CSV file, default stdin")
    p.add_argument("--decisions", help="write per-row 0/1 decisions here")
    p.add_argument("--chart", action="append", choices=["glr", "bank", "cusum"])
    p.add_argument("--h", type=float)
    p.add_argument("--fpr", type=float)
    p.add_argument("--tpr-lower", type=float)
    p.set_defaults(func=cmd_monitor)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MalformedRow, ModelMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except NotDetectable as exc:
        print(f"not detectable: {exc}", file=sys.stderr)
        return EXIT_NOT_DETECTABLE
    except (ZbDetectError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
