"""Command-line orchestration: prepare, train, evaluate, report, and a
standalone metrics-from-counts mode.

Every command reads one YAML config (all keys optional) merged with
``--set key.path=value`` overrides; outputs land under the configured output
directory:

    <output_dir>/prepare/   scan_summary.json, splits.json
    <output_dir>/runs/      <arch>/rep<k>/{history.csv, manifest.json, *.weights.h5}
    <output_dir>/eval/      <arch>/rep<k>/{metrics.json, confusion.csv}, <arch>/summary.json
    <output_dir>/report/    curve/confusion PNGs, overlays, results.csv, results.txt
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import evaluate as ev
from . import report as rpt
from .config import ExperimentConfig, load_config
from .dataset import (
    DatasetSplits,
    Label,
    LabeledDataset,
    rebalance_by_oversampling,
    scan_dataset,
    stratified_split,
)
from .errors import ConfigurationError, PretrainedWeightsError, TrainingDivergedError
from .model_zoo import ArchitectureSpec
from .trainer import TrainingHistory, run_experiment

log = logging.getLogger(__name__)


def _load(ctx: click.Context) -> ExperimentConfig:
    params = ctx.obj
    try:
        cfg = load_config(params["config"], list(params["overrides"]))
    except (ConfigurationError, OSError) as exc:
        raise click.ClickException(str(exc))
    if params["output_dir"]:
        cfg = replace(cfg, output_dir=params["output_dir"])
    if params["dataset_root"]:
        cfg = replace(cfg, dataset_root=params["dataset_root"])
    return cfg


def _paths(cfg: ExperimentConfig) -> dict[str, Path]:
    base = Path(cfg.output_dir)
    return {
        "base": base,
        "prepare": base / "prepare",
        "runs": base / "runs",
        "eval": base / "eval",
        "report": base / "report",
    }


@click.group()
@click.option("--config", "-c", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--set", "-s", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
              help="Override a config key, e.g. -s train.epochs=2")
@click.option("--output-dir", "-o", default=None, help="Override the output directory.")
@click.option("--dataset-root", default=None, help="Override the dataset root directory.")
@click.option("--verbose", "-v", is_flag=True, default=False)
@click.pass_context
def main(ctx, config, overrides, output_dir, dataset_root, verbose):
    """Benchmark harness for Normal/Pneumonia chest X-ray classification."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if os.environ.get("XRAYBENCH_WEIGHTS_CACHE"):
        # keras resolves its cache under KERAS_HOME at import time
        os.environ.setdefault("KERAS_HOME", os.environ["XRAYBENCH_WEIGHTS_CACHE"])
    ctx.obj = {
        "config": config,
        "overrides": overrides,
        "output_dir": output_dir,
        "dataset_root": dataset_root,
    }


@main.command()
@click.pass_context
def prepare(ctx):
    """Scan the dataset, split it, oversample the minority class, and write
    the split manifests."""
    cfg = _load(ctx)
    if not cfg.dataset_root:
        raise click.ClickException("dataset root is required (config dataset.root or --dataset-root)")
    paths = _paths(cfg)
    paths["prepare"].mkdir(parents=True, exist_ok=True)

    try:
        ds, summary = scan_dataset(cfg.dataset_root)
        splits = stratified_split(ds, cfg.train_fraction, cfg.split_seed)
        train_ds = rebalance_by_oversampling(
            splits.train, cfg.augment, cfg.copies_per_image, cfg.split_seed + 1
        )
        val_ds = splits.validation
        if cfg.balance_validation:
            val_ds = rebalance_by_oversampling(
                val_ds, cfg.augment, cfg.copies_per_image, cfg.split_seed + 2
            )
    except ConfigurationError as exc:
        raise click.ClickException(str(exc))

    with open(paths["prepare"] / "scan_summary.json", "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
    manifest = {
        "split_seed": cfg.split_seed,
        "train_fraction": cfg.train_fraction,
        "copies_per_image": cfg.copies_per_image,
        "balance_validation": cfg.balance_validation,
        "counts": {
            "train": {k.value: v for k, v in train_ds.class_counts.items()},
            "validation": {k.value: v for k, v in val_ds.class_counts.items()},
        },
        "train": train_ds.to_dicts(),
        "validation": val_ds.to_dicts(),
    }
    with open(paths["prepare"] / "splits.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    click.echo(
        f"prepared {len(train_ds)} training and {len(val_ds)} validation samples "
        f"under {paths['prepare']}"
    )


def _load_splits(cfg: ExperimentConfig) -> DatasetSplits:
    manifest_path = _paths(cfg)["prepare"] / "splits.json"
    if not manifest_path.exists():
        raise click.ClickException(
            f"split manifest {manifest_path} not found; run 'xraybench prepare' first"
        )
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    return DatasetSplits(
        train=LabeledDataset.from_dicts(manifest["train"]),
        validation=LabeledDataset.from_dicts(manifest["validation"]),
        split_seed=int(manifest["split_seed"]),
        train_fraction=float(manifest["train_fraction"]),
    )


@main.command()
@click.pass_context
def train(ctx):
    """Train every selected architecture for the configured repetitions."""
    cfg = _load(ctx)
    splits = _load_splits(cfg)
    paths = _paths(cfg)
    failures = []
    for name in cfg.architectures:
        spec = cfg.architecture_spec(name)
        pre = cfg.preprocess_for(spec)
        try:
            result = run_experiment(
                spec, splits, cfg.train, pre, cfg.augment, out_dir=paths["runs"]
            )
        except (PretrainedWeightsError, TrainingDivergedError, ConfigurationError) as exc:
            log.error("training %s failed: %s", name, exc)
            failures.append(name)
            continue
        finals = ", ".join(f"{k}={v:.4f}" for k, v in result.final_metrics.items())
        click.echo(f"{name}: {cfg.train.repetitions} repetition(s) done ({finals})")
    if failures:
        raise click.ClickException(f"training failed for: {', '.join(failures)}")


def _rep_dirs(runs_dir: Path, name: str) -> list[Path]:
    arch_dir = runs_dir / name
    return sorted(d for d in arch_dir.glob("rep*") if d.is_dir()) if arch_dir.is_dir() else []


def _rebuild_model(rep_dir: Path, checkpoint: str):
    from .model_zoo import build_model

    manifest_path = rep_dir / "manifest.json"
    weights_path = rep_dir / f"{checkpoint}.weights.h5"
    if not manifest_path.exists() or not weights_path.exists():
        raise click.ClickException(
            f"missing checkpoint for run {rep_dir} (expected {weights_path.name}); "
            "run 'xraybench train' first"
        )
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    spec = ArchitectureSpec.from_dict(manifest["spec"])
    if spec.pretrained:
        # weights are fully restored from the checkpoint; skip the imagenet fetch
        spec = replace(spec, pretrained=False)
    handle = build_model(spec)
    handle.load_weights(weights_path)
    return handle, manifest


@main.command()
@click.option("--checkpoint", type=click.Choice(["last", "best"]), default="last",
              show_default=True)
@click.pass_context
def evaluate(ctx, checkpoint):
    """Predict on the validation split and write confusion matrices and metrics."""
    cfg = _load(ctx)
    splits = _load_splits(cfg)
    paths = _paths(cfg)
    positive = Label.from_string(cfg.positive_class)
    wrote_any = False
    for name in cfg.architectures:
        rep_dirs = _rep_dirs(paths["runs"], name)
        if not rep_dirs:
            raise click.ClickException(
                f"no trained runs for {name} under {paths['runs']}; run 'xraybench train' first"
            )
        per_rep = []
        for rep_dir in rep_dirs:
            handle, manifest = _rebuild_model(rep_dir, checkpoint)
            pre = cfg.preprocess_for(handle.spec)
            predicted = ev.predict_labels(
                handle, splits.validation, cfg.threshold, pre, cfg.train.batch_size
            )
            actual = [s.label for s in splits.validation.samples]
            cm = ev.confusion_matrix(predicted, actual, positive)
            metrics = ev.compute_metrics(cm)
            out_dir = paths["eval"] / name / rep_dir.name
            out_dir.mkdir(parents=True, exist_ok=True)
            payload = {
                "architecture": name,
                "repetition": manifest["repetition"],
                "checkpoint": checkpoint,
                "counts": cm.to_dict(),
                "metrics": metrics.to_dict(),
            }
            with open(out_dir / "metrics.json", "w") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
            ev.save_confusion_csv(cm, out_dir / "confusion.csv")
            per_rep.append(payload)
            wrote_any = True
        summary = {
            "architecture": name,
            "checkpoint": checkpoint,
            "repetitions": len(per_rep),
            "mean_metrics": {
                metric: float(np.mean([r["metrics"]["percent"][metric] for r in per_rep]))
                for metric in ev.METRIC_NAMES
            },
        }
        with open(paths["eval"] / name / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        click.echo(
            f"{name}: accuracy {summary['mean_metrics']['accuracy']:.2f}% "
            f"(mean of {len(per_rep)} repetition(s))"
        )
    if not wrote_any:
        raise click.ClickException("nothing evaluated")


@main.command()
@click.pass_context
def report(ctx):
    """Render curves, confusion-matrix images, overlays, and the results table."""
    cfg = _load(ctx)
    paths = _paths(cfg)
    report_dir = paths["report"]
    report_dir.mkdir(parents=True, exist_ok=True)
    rep_name = f"rep{cfg.report_repetition}"

    rows: list[rpt.ResultsRow] = []
    histories: dict[str, TrainingHistory] = {}
    warnings: list[str] = []
    for name in cfg.architectures:
        history_path = paths["runs"] / name / rep_name / "history.csv"
        metrics_path = paths["eval"] / name / rep_name / "metrics.json"
        if not history_path.exists():
            warnings.append(f"{name}: missing history {history_path}")
            continue
        history = TrainingHistory.from_csv(history_path)
        if len(history) == 0:
            raise click.ClickException(
                f"history for {name} at {history_path} is empty; nothing to report"
            )
        histories[name] = history
        rpt.plot_history_curves(history, name, report_dir, cfg.plot_dpi)
        if not metrics_path.exists():
            warnings.append(f"{name}: missing metrics {metrics_path}")
            continue
        with open(metrics_path) as fh:
            payload = json.load(fh)
        cm = ev.ConfusionMatrix.from_dict(payload["counts"])
        rpt.plot_confusion_matrix(cm, name, report_dir, cfg.plot_dpi)
        rows.append(
            rpt.ResultsRow(
                architecture=name,
                tp=cm.tp,
                tn=cm.tn,
                fn=cm.fn,
                fp=cm.fp,
                **payload["metrics"]["percent"],
            )
        )

    if not histories:
        raise click.ClickException("no run histories found; nothing to report")
    rpt.plot_overlays(histories, report_dir, cfg.plot_dpi)
    if rows:
        rpt.render_results_csv(rows, report_dir / "results.csv")
        text = rpt.render_results_text(rows)
        (report_dir / "results.txt").write_text(text)
        click.echo(text)
    if warnings:
        (report_dir / "warnings.txt").write_text("\n".join(warnings) + "\n")
        for message in warnings:
            log.warning("%s", message)
    click.echo(f"report written to {report_dir}")


@main.command("metrics-from-counts")
@click.option("--tp", type=int, default=None)
@click.option("--tn", type=int, default=None)
@click.option("--fn", type=int, default=None)
@click.option("--fp", type=int, default=None)
@click.option("--positive-class", type=click.Choice(["Normal", "Pneumonia"]),
              default="Pneumonia", show_default=True)
@click.option("--name", default="model", help="Row label for table output.")
@click.option("--counts-csv", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV with columns architecture,tp,tn,fn,fp for multi-row tables.")
@click.option("--out", "-o", type=click.Path(), default=None,
              help="Write JSON (single) or CSV+text table (multi) here.")
def metrics_from_counts(tp, tn, fn, fp, positive_class, name, counts_csv, out):
    """Compute the five benchmark metrics directly from confusion counts."""
    positive = Label.from_string(positive_class)
    if counts_csv is not None:
        import csv as _csv

        rows = []
        with open(counts_csv, newline="") as fh:
            for record in _csv.DictReader(fh):
                cm = ev.ConfusionMatrix(
                    tp=int(record["tp"]),
                    tn=int(record["tn"]),
                    fp=int(record["fp"]),
                    fn=int(record["fn"]),
                    positive_class=positive,
                )
                rows.append(
                    rpt.ResultsRow.from_metrics(
                        record.get("architecture", "model"), cm, ev.compute_metrics(cm)
                    )
                )
        text = rpt.render_results_text(rows)
        if out:
            out_path = Path(out)
            out_path.parent.mkdir(parents=True, exist_ok=True)
            rpt.render_results_csv(rows, out_path)
            out_path.with_suffix(".txt").write_text(text)
        click.echo(text)
        return

    if None in (tp, tn, fn, fp):
        raise click.ClickException("provide --tp --tn --fn --fp, or --counts-csv")
    try:
        cm = ev.ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn, positive_class=positive)
        metrics = ev.compute_metrics(cm)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    payload = {"counts": cm.to_dict(), "metrics": metrics.to_dict()}
    rendered = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(rendered + "\n")
    click.echo(rendered)


if __name__ == "__main__":
    main(sys.argv[1:])
