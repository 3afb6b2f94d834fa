"""``mammo-bench`` command line entry point.

    mammo-bench <ingest|preprocess|train|evaluate|report> --config PATH
                [--arch ARCH] [--fold N] [--threshold F] [--deterministic]

Exit status: 0 on success, 1 on a pipeline error, 2 on a usage/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import PipelineConfig, load_config, with_overrides
from .errors import ConfigError, MammoBenchError
from .evaluate import (
    MetricReport,
    aggregate_per_breast,
    evaluate_by_fold,
    evaluate_predictions,
    read_predictions_csv,
)
from .manifest import dataset_summary, load_manifest
from .model import ARCHITECTURES, DISPLAY_NAMES
from .preprocess import load_processed, preprocess_manifest
from .report import load_fixtures, render_comparison, reported_reports
from .training import make_folds, train_all_folds

logger = logging.getLogger("mammo_bench")

SUBCOMMANDS = ("ingest", "preprocess", "train", "evaluate", "report")


def _write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def train_dir(cfg: PipelineConfig) -> Path:
    return cfg.paths.output_root / "train"


def reports_dir(cfg: PipelineConfig) -> Path:
    return cfg.paths.output_root / "reports"


# ---------------------------------------------------------------- subcommands


def cmd_ingest(cfg: PipelineConfig, fold: Optional[int] = None) -> list[Path]:
    manifest = load_manifest(cfg.paths.manifest)
    summary = json.loads(dataset_summary(manifest).to_json())
    return [_write_json(cfg.paths.output_root / "summary.json", {"config": cfg.to_dict(), "summary": summary})]


def cmd_preprocess(cfg: PipelineConfig, fold: Optional[int] = None) -> list[Path]:
    manifest = load_manifest(cfg.paths.manifest)
    return preprocess_manifest(
        manifest,
        cfg.preprocess,
        cfg.paths.processed_root,
        image_root=cfg.paths.image_root,
        workers=1 if cfg.runtime.deterministic else cfg.runtime.workers,
    )


def cmd_train(cfg: PipelineConfig, fold: Optional[int] = None) -> list[Path]:
    manifest = load_manifest(cfg.paths.manifest)
    folds = make_folds(manifest, cfg.folds.k, cfg.folds.seed)
    out = train_dir(cfg)
    written = [_write_json(out / "folds.json", {"config": cfg.to_dict(), "folds": folds.to_dict()})]
    root = cfg.paths.processed_root

    def source(rec):
        return load_processed(root, rec)

    for arch in cfg.archs:
        results = train_all_folds(
            manifest,
            folds,
            cfg.model_config(arch),
            cfg.train_config(arch),
            cfg.sampler,
            source,
            out_dir=out,
            deterministic=cfg.runtime.deterministic,
            only_folds=None if fold is None else [fold],
            log=logger.info,
        )
        for _, state in results:
            written.append(
                _write_json(out / f"{arch}_fold{state.fold}_state.json", {"config": cfg.to_dict(), "state": state.to_dict()})
            )
    return written


def cmd_evaluate(cfg: PipelineConfig, fold: Optional[int] = None) -> list[Path]:
    written = []
    found = False
    for arch in cfg.archs:
        path = train_dir(cfg) / f"{arch}_oof.csv"
        if not path.exists():
            logger.warning("no predictions for %s at %s", arch, path)
            continue
        found = True
        preds = read_predictions_csv(path)
        if fold is not None:
            preds = preds.select([f == fold for f in preds.folds])
        if cfg.evaluate.per_breast:
            preds = aggregate_per_breast(preds)
        threshold = cfg.evaluate.threshold
        overall = evaluate_predictions(preds, threshold)
        per_fold = {str(k): r.to_dict() for k, r in evaluate_by_fold(preds, threshold).items()}
        doc = {
            "config": cfg.to_dict(),
            "model": arch,
            "display_name": DISPLAY_NAMES[arch],
            "unit": "breast" if cfg.evaluate.per_breast else "image",
            "overall": overall.to_dict(),
            "per_fold": per_fold,
        }
        written.append(_write_json(reports_dir(cfg) / f"{arch}_metrics.json", doc))
    if not found:
        raise MammoBenchError(f"no out-of-fold predictions found under {train_dir(cfg)}")
    return written


def load_metric_reports(cfg: PipelineConfig) -> dict[str, MetricReport]:
    reports = {}
    for arch in cfg.archs:
        path = reports_dir(cfg) / f"{arch}_metrics.json"
        if path.exists():
            doc = json.loads(path.read_text(encoding="utf-8"))
            reports[doc.get("display_name", DISPLAY_NAMES[arch])] = MetricReport.from_dict(doc["overall"])
    return reports


def cmd_report(cfg: PipelineConfig, fold: Optional[int] = None) -> list[Path]:
    reports = load_metric_reports(cfg)
    fixtures = load_fixtures(cfg.report.fixtures)
    rendered = render_comparison(reports, fixtures, svg=cfg.report.svg)
    text = rendered.text
    if cfg.report.include_reported:
        reported = render_comparison(reported_reports())
        text += "\nReported full-scale results (fixture, verbatim)\n" + reported.text
        text += "note: reported F-score is not the harmonic mean of reported precision and recall\n"
    out = reports_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "comparison.txt"]
    written[0].write_text(text, encoding="utf-8")
    table = {
        "config": cfg.to_dict(),
        "rows": [s for s in rendered.chart_data["series"] if s["kind"] == "measured"],
    }
    written.append(_write_json(out / "comparison.json", table))
    written.append(_write_json(out / "chart_data.json", {"config": cfg.to_dict(), **rendered.chart_data}))
    if rendered.svg is not None:
        svg = out / "chart.svg"
        svg.write_text(rendered.svg, encoding="utf-8")
        written.append(svg)
    return written


COMMANDS = {
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mammo-bench", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--arch", choices=ARCHITECTURES)
    parser.add_argument("--fold", type=int)
    parser.add_argument("--threshold", type=float)
    parser.add_argument("--deterministic", action="store_true")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = with_overrides(load_config(args.config), args.arch, args.threshold, args.deterministic)
        if args.fold is not None and not 0 <= args.fold < cfg.folds.k:
            raise ConfigError(f"--fold must lie in [0, {cfg.folds.k})")
    except ConfigError as exc:
        print(f"mammo-bench: config error: {exc}", file=sys.stderr)
        return 2
    try:
        written = COMMANDS[args.subcommand](cfg, args.fold)
    except ConfigError as exc:
        print(f"mammo-bench: config error: {exc}", file=sys.stderr)
        return 2
    except (MammoBenchError, OSError, ValueError) as exc:
        print(f"mammo-bench: {args.subcommand} failed: {exc}", file=sys.stderr)
        return 1
    for path in written:
        logger.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
