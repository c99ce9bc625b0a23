"""Command-line pipeline: ingest, split, featurize, train, eval, sweep,
gradcam, and report.

Configuration lives in a flat text file of ``section.key = value``
lines; every key has a sensible default, the ``SONARPREP_SEED``
environment variable overrides configured seeds, and explicit CLI
flags override both. All outputs are deterministic for fixed inputs
and seeds.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import SonarprepError
from .wavio import Manifest, ManifestEntry, load_manifest, parse_wav, write_manifest
from .dsp import (FeatureConfig, effective_config, features_for_segment,
                  mel_filterbank, read_feature_archive, resample, segment,
                  write_feature_archive)
from .augment import AugmentConfig
from .datasplit import (SplitSpec, compute_norm_stats, normalize, read_split_rows,
                        segment_counts, stratified_split, validate_split,
                        write_split_file)
from .nn import (DEFAULT_ARCHITECTURE, apply_checkpoint, init_model,
                 load_checkpoint, save_checkpoint)
from .trainer import TrainConfig, FeatureSets, build_feature_sets, history_csv, run_seeds
from .trainer import sweep as run_sweep
from .evaluation import (aggregate_cams, aggregate_runs, evaluate,
                         render_confusion_csv, render_confusion_rownorm_csv,
                         render_sweep_table, write_cam_report, RunAggregate)

ENV_SEED = "SONARPREP_SEED"


class ConfigParseError(SonarprepError):
    """A config line could not be parsed."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnknownKeyError(SonarprepError):
    """A config line names a key this tool does not know."""


class OutOfRangeError(SonarprepError):
    """A config value parses but falls outside its allowed range."""


def parse_rate(text: str) -> int:
    """Sampling rate with optional k-suffix: '2k' -> 2000."""
    text = text.strip()
    scale = 1
    if text and text[-1] in "kK":
        scale = 1000
        text = text[:-1]
    value = float(text) * scale
    if value != int(value) or int(value) <= 0:
        raise ValueError(f"invalid rate {text!r}")
    return int(value)


def _parse_rate_list(text: str) -> tuple[int, ...]:
    return tuple(parse_rate(part) for part in text.split(",") if part.strip())


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"invalid boolean {text!r}")


@dataclass
class RunConfig:
    """Effective settings for a pipeline run."""

    corpus_root: Path | None = None
    manifest: Path | None = None
    split_file: Path | None = None
    output_dir: Path | None = None
    data_rate: int = 32000
    segment_seconds: float = 5.0
    jobs: int = 1
    feature: FeatureConfig = field(default_factory=lambda: FeatureConfig(32000))
    feature_overrides: dict = field(default_factory=dict)
    augment_overrides: dict = field(default_factory=dict)
    lr: float = 5e-5
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 50
    seeds: tuple[int, ...] = (0, 1, 2)
    use_mixup: bool = True
    split: SplitSpec = field(default_factory=SplitSpec)
    sweep_data_rates: tuple[int, ...] = ()
    sweep_model_rates: tuple[int, ...] = ()

    def augment_config(self) -> AugmentConfig:
        kwargs = {"data_rate": self.data_rate, "model_rate": self.feature.model_rate}
        kwargs.update(self.augment_overrides)
        return AugmentConfig(**kwargs)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           seeds=self.seeds, augment=self.augment_config(),
                           feature=self.feature, arch=DEFAULT_ARCHITECTURE,
                           use_mixup=self.use_mixup)

    def fingerprint(self) -> str:
        # jobs is a pure execution knob; it cannot change any output bytes
        parts = []
        for key in sorted(vars(self)):
            if key == "jobs":
                continue
            parts.append(f"{key}={getattr(self, key)!r}")
        return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()


# feature keys are staged and validated together once the whole file is read,
# so the file may set model_rate and f_max in any order
_FEATURE_DEFAULTS = {"model_rate": 32000, "win_length": 1024, "hop_length": 320,
                     "n_mels": 64, "f_min": 50.0, "f_max": 14000.0}


def _feature_setter(name, caster):
    def apply(cfg: RunConfig, value: str):
        cfg.feature_overrides[name] = caster(value)
    return apply


def _augment_setter(name, caster):
    def apply(cfg: RunConfig, value: str):
        cfg.augment_overrides[name] = caster(value)
    return apply


def _attr_setter(name, caster):
    def apply(cfg: RunConfig, value: str):
        setattr(cfg, name, caster(value))
    return apply


def _split_ratio_setter(cfg: RunConfig, value: str):
    ratios = tuple(float(p) for p in value.split(","))
    cfg.split = replace(cfg.split, ratios=ratios)


def _split_seed_setter(cfg: RunConfig, value: str):
    cfg.split = replace(cfg.split, seed=int(value))


_CONFIG_KEYS = {
    "paths.corpus_root": _attr_setter("corpus_root", Path),
    "paths.manifest": _attr_setter("manifest", Path),
    "paths.split_file": _attr_setter("split_file", Path),
    "paths.output_dir": _attr_setter("output_dir", Path),
    "data.rate": _attr_setter("data_rate", parse_rate),
    "data.segment_seconds": _attr_setter("segment_seconds", float),
    "data.jobs": _attr_setter("jobs", int),
    "feature.model_rate": _feature_setter("model_rate", parse_rate),
    "feature.win_length": _feature_setter("win_length", int),
    "feature.hop_length": _feature_setter("hop_length", int),
    "feature.n_mels": _feature_setter("n_mels", int),
    "feature.f_min": _feature_setter("f_min", float),
    "feature.f_max": _feature_setter("f_max", float),
    "augment.base_time_mask_width": _augment_setter("base_time_mask_width", int),
    "augment.freq_mask_width": _augment_setter("freq_mask_width", int),
    "augment.n_time_masks": _augment_setter("n_time_masks", int),
    "augment.n_freq_masks": _augment_setter("n_freq_masks", int),
    "augment.data_rate": _augment_setter("data_rate", parse_rate),
    "augment.model_rate": _augment_setter("model_rate", parse_rate),
    "augment.mixup_alpha": _augment_setter("mixup_alpha", float),
    "train.lr": _attr_setter("lr", float),
    "train.batch_size": _attr_setter("batch_size", int),
    "train.max_epochs": _attr_setter("max_epochs", int),
    "train.patience": _attr_setter("patience", int),
    "train.seeds": _attr_setter("seeds", lambda v: tuple(int(p) for p in v.split(","))),
    "train.use_mixup": _attr_setter("use_mixup", _parse_bool),
    "split.ratios": _split_ratio_setter,
    "split.seed": _split_seed_setter,
    "sweep.data_rates": _attr_setter("sweep_data_rates", _parse_rate_list),
    "sweep.model_rates": _attr_setter("sweep_model_rates", _parse_rate_list),
}


def load_config(path=None, env: dict | None = None) -> RunConfig:
    """Read a flat ``section.key = value`` config file over the defaults.

    A missing path (or empty file) yields the default configuration.
    ``SONARPREP_SEED`` in the environment overrides the split seed and
    re-bases the training seeds.
    """
    env = os.environ if env is None else env
    cfg = RunConfig()
    staged: list[tuple[str, str, int]] = []
    if path is not None:
        text = Path(path).read_text()
        for lineno, raw_line in enumerate(text.splitlines(), start=1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigParseError("expected 'section.key = value'",
                                       lineno, len(raw_line) + 1)
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key or "." not in key:
                raise ConfigParseError(f"malformed key {key!r}", lineno,
                                       raw_line.find("=") + 1)
            if key not in _CONFIG_KEYS:
                raise UnknownKeyError(f"line {lineno}: unknown key {key!r}")
            if not value:
                raise ConfigParseError(f"empty value for {key!r}", lineno,
                                       raw_line.find("=") + 2)
            staged.append((key, value, lineno))
    for key, value, lineno in staged:
        try:
            _CONFIG_KEYS[key](cfg, value)
        except (ValueError, TypeError) as exc:
            raise OutOfRangeError(f"line {lineno}: {key} = {value!r}: {exc}") from exc
    # construction-time validation for composite values
    try:
        cfg.feature = FeatureConfig(**{**_FEATURE_DEFAULTS, **cfg.feature_overrides})
        cfg.augment_config()
        cfg.train_config()
    except ValueError as exc:
        raise OutOfRangeError(str(exc)) from exc
    if ENV_SEED in env:
        try:
            seed = int(env[ENV_SEED])
        except ValueError as exc:
            raise OutOfRangeError(f"{ENV_SEED} must be an integer") from exc
        cfg.split = replace(cfg.split, seed=seed)
        cfg.seeds = tuple(seed + i for i in range(len(cfg.seeds)))
    return cfg


# ---------------------------------------------------------------------------
# shared command plumbing
# ---------------------------------------------------------------------------

def _guarded(fn):
    """Convert package errors into exit-code-1 CLI failures."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SonarprepError as exc:
            raise click.ClickException(str(exc)) from exc
        except FileNotFoundError as exc:
            raise click.ClickException(f"missing input: {exc}") from exc
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _require(value, name: str):
    if value is None:
        raise click.ClickException(
            f"{name} must be given via flag or config file"
        )
    return value


def _write_run_record(out_dir: Path, command: str, cfg: RunConfig) -> None:
    record = {
        "command": command,
        "config_hash": cfg.fingerprint(),
        "seeds": {"split": cfg.split.seed, "train": list(cfg.seeds)},
        "versions": {
            "sonarprep": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _load_manifest_file(path: Path) -> Manifest:
    return load_manifest(Path(path).read_text())


def _read_wav(corpus_root: Path, entry: ManifestEntry):
    return parse_wav((corpus_root / entry.file_path).read_bytes(),
                     source_id=entry.recording_id)


def _load_classes(features_dir: Path) -> list[str]:
    return json.loads((features_dir / "classes.json").read_text())["classes"]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@click.group()
@click.version_option(__version__)
def main():
    """Passive-sonar spectrogram pipeline: data prep, training, reporting."""


@main.command()
@click.option("--corpus-root", type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True, help="Directory of <class_label>/<recording>.wav files.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Manifest CSV to write.")
@_guarded
def ingest(corpus_root: Path, out: Path):
    """Scan a class-per-directory corpus into a manifest CSV."""
    entries = []
    for class_dir in sorted(p for p in corpus_root.iterdir() if p.is_dir()):
        for wav_path in sorted(class_dir.glob("*.wav")):
            w = parse_wav(wav_path.read_bytes(), source_id=wav_path.stem)
            entries.append(ManifestEntry(
                recording_id=wav_path.stem,
                class_label=class_dir.name,
                file_path=str(wav_path.relative_to(corpus_root)),
                duration_seconds=w.duration_seconds,
            ))
    manifest = Manifest(entries)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(write_manifest(manifest))
    click.echo(f"wrote {len(entries)} recordings across "
               f"{len(manifest.classes)} classes to {out}")


@main.command("split")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path))
@click.option("--ratios", type=str, default=None, help="train,val,test e.g. 0.7,0.1,0.2")
@click.option("--seed", type=int, default=None)
@click.option("--segment-seconds", type=float, default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--validate", "do_validate", is_flag=True,
              help="Check an existing split file instead of writing one.")
@click.option("--split-file", type=click.Path(exists=True, path_type=Path),
              help="Split file to validate.")
@_guarded
def split_cmd(config_path, manifest_path, ratios, seed, segment_seconds, out,
              do_validate, split_file):
    """Write (or validate) a leakage-free recording-level split."""
    cfg = load_config(config_path)
    manifest = _load_manifest_file(_require(manifest_path or cfg.manifest, "--manifest"))
    if do_validate:
        rows, _ = read_split_rows(Path(_require(split_file or cfg.split_file,
                                                "--split-file")).read_text())
        report = validate_split(rows, manifest)
        for code, detail in report.failures:
            click.echo(f"FAIL {code}: {detail}")
        if not report.passed:
            raise click.ClickException(f"split failed validation "
                                       f"({len(report.failures)} problems)")
        click.echo("split OK")
        return
    if ratios is not None:
        cfg.split = replace(cfg.split, ratios=tuple(float(p) for p in ratios.split(",")))
    if seed is not None:
        cfg.split = replace(cfg.split, seed=seed)
    if segment_seconds is not None:
        cfg.segment_seconds = segment_seconds
    counts = segment_counts(manifest, cfg.segment_seconds)
    sf = stratified_split(manifest, counts, cfg.split)
    out_path = _require(out or cfg.split_file, "--out")
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(write_split_file(sf))
    for name in ("train", "val", "test"):
        recs = sum(c[0] for c in sf.class_counts[name].values())
        segs = sum(c[1] for c in sf.class_counts[name].values())
        click.echo(f"{name}: {recs} recordings, {segs} segments")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path))
@click.option("--split-file", type=click.Path(exists=True, path_type=Path))
@click.option("--corpus-root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--data-rate", type=str, default=None, help="Target rate, e.g. 8k.")
@click.option("--jobs", type=int, default=None, help="Parallel featurization workers.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path))
@_guarded
def featurize(config_path, manifest_path, split_file, corpus_root, data_rate,
              jobs, out_dir):
    """Resample, segment, and write normalized log-mel archives per split."""
    cfg = load_config(config_path)
    manifest = _load_manifest_file(_require(manifest_path or cfg.manifest, "--manifest"))
    corpus = _require(corpus_root or cfg.corpus_root, "--corpus-root")
    rows, _ = read_split_rows(Path(_require(split_file or cfg.split_file,
                                            "--split-file")).read_text())
    report = validate_split(rows, manifest)
    if not report.passed:
        raise click.ClickException(
            "split file failed validation: "
            + "; ".join(f"{code}: {detail}" for code, detail in report.failures[:3])
        )
    assignment = dict(rows)
    if data_rate is not None:
        cfg.data_rate = parse_rate(data_rate)
    if jobs is not None:
        cfg.jobs = jobs
    out = _require(out_dir or cfg.output_dir, "--out")
    out.mkdir(parents=True, exist_ok=True)
    label_index = manifest.label_indices()
    fb = mel_filterbank(effective_config(cfg.feature, cfg.data_rate))

    def featurize_recording(entry: ManifestEntry):
        w = resample(_read_wav(Path(corpus), entry), cfg.data_rate)
        return [features_for_segment(seg, cfg.feature, fb=fb).values
                for seg in segment(w, cfg.segment_seconds)]

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            per_recording = list(pool.map(featurize_recording, manifest.entries))
    else:
        per_recording = [featurize_recording(e) for e in manifest.entries]
    buckets = {name: [] for name in ("train", "val", "test")}
    for entry, spectrograms in zip(manifest.entries, per_recording):
        for values in spectrograms:
            buckets[assignment[entry.recording_id]].append(
                (values, label_index[entry.class_label]))
    if not buckets["train"]:
        raise click.ClickException("training split produced no segments")
    stats = compute_norm_stats(values for values, _ in buckets["train"])
    for name, items in buckets.items():
        write_feature_archive(out / f"{name}.sprf",
                              [(normalize(values, stats).astype(np.float32), label)
                               for values, label in items])
        click.echo(f"{name}.sprf: {len(items)} segments")
    (out / "norm_stats.json").write_text(json.dumps(
        {"global_min": stats.global_min, "global_max": stats.global_max},
        indent=2, sort_keys=True) + "\n")
    (out / "classes.json").write_text(json.dumps(
        {"classes": list(manifest.classes)}, indent=2, sort_keys=True) + "\n")
    _write_run_record(out, "featurize", cfg)


def _load_feature_sets(features_dir: Path, n_classes: int) -> FeatureSets:
    sets = {}
    for name in ("train", "val", "test"):
        items = read_feature_archive(features_dir / f"{name}.sprf")
        if items:
            x = np.stack([values for values, _ in items])
            y = np.array([label for _, label in items], dtype=np.int64)
        else:
            x = np.zeros((0, 1, 1), dtype=np.float32)
            y = np.zeros(0, dtype=np.int64)
        sets[name] = (x, y)
    return FeatureSets(train=sets["train"], val=sets["val"], test=sets["test"],
                       n_classes=n_classes)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--features", "features_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path))
@_guarded
def train(config_path, features_dir, out_dir):
    """Train over the configured seeds and save checkpoints and histories."""
    cfg = load_config(config_path)
    classes = _load_classes(features_dir)
    data = _load_feature_sets(features_dir, len(classes))
    out = _require(out_dir or cfg.output_dir, "--out")
    out.mkdir(parents=True, exist_ok=True)
    results = run_seeds(cfg.train_config(), data)
    summary = {"seeds": [], "classes": classes}
    for result in results:
        save_checkpoint(out / f"model_seed{result.seed}.spnn", result.model.params)
        (out / f"history_seed{result.seed}.csv").write_text(history_csv(result.history))
        summary["seeds"].append({
            "seed": result.seed,
            "best_epoch": result.history.best_epoch,
            "stopped_epoch": result.history.stopped_epoch,
            "test_accuracy": result.metrics.accuracy,
        })
        click.echo(f"seed {result.seed}: test accuracy {result.metrics.accuracy:.4f} "
                   f"(best epoch {result.history.best_epoch})")
    aggregate = aggregate_runs([r.metrics for r in results])
    summary["mean_accuracy"] = aggregate.mean_accuracy
    summary["std_accuracy"] = aggregate.std_accuracy
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "confusion_mean.csv").write_text(
        render_confusion_csv(aggregate.mean_confusion, classes))
    _write_run_record(out, "train", cfg)
    click.echo(f"mean test accuracy "
               f"{aggregate.mean_accuracy:.4f} +/- {aggregate.std_accuracy:.4f}")


def _restore_model(model_path: Path, n_classes: int):
    model = init_model(DEFAULT_ARCHITECTURE, n_classes, seed=0, dtype=np.float32)
    return apply_checkpoint(model, load_checkpoint(model_path))


@main.command("eval")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--features", "features_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path))
@_guarded
def eval_cmd(model_path, features_dir, out_dir):
    """Evaluate a checkpoint on the test archive."""
    classes = _load_classes(features_dir)
    items = read_feature_archive(features_dir / "test.sprf")
    features = np.stack([values for values, _ in items])
    labels = np.array([label for _, label in items], dtype=np.int64)
    model = _restore_model(model_path, len(classes))
    metrics = evaluate(model, features, labels)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps({
        "accuracy": metrics.accuracy,
        "per_class_recall": {c: metrics.per_class_recall[i]
                             for i, c in enumerate(classes)},
        "n_test": int(labels.size),
    }, indent=2, sort_keys=True) + "\n")
    (out_dir / "confusion_counts.csv").write_text(
        render_confusion_csv(metrics.confusion, classes))
    (out_dir / "confusion_rownorm.csv").write_text(
        render_confusion_rownorm_csv(metrics.confusion, classes))
    click.echo(f"accuracy {metrics.accuracy:.4f} on {labels.size} segments")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--features", "features_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path))
@_guarded
def gradcam(model_path, features_dir, out_dir):
    """Aggregate class activation maps over the test archive."""
    classes = _load_classes(features_dir)
    items = read_feature_archive(features_dir / "test.sprf")
    features = np.stack([values for values, _ in items])
    labels = np.array([label for _, label in items], dtype=np.int64)
    model = _restore_model(model_path, len(classes))
    cam_agg = aggregate_cams(model, features, labels)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_cam_report(out_dir, cam_agg, classes)
    correct = sum(count for (_, ok), count in cam_agg.counts.items() if ok)
    click.echo(f"aggregated maps over {labels.size} segments "
               f"({correct} classified correctly)")


def _cells_to_raw(result) -> dict:
    cells = []
    for (data_rate, model_rate), cell in sorted(result.cells.items()):
        cells.append({
            "data_rate": data_rate,
            "model_rate": model_rate,
            "mask_width": cell.mask_width,
            "n_frames": cell.n_frames,
            "accuracies": cell.accuracies,
            "mean_accuracy": cell.aggregate.mean_accuracy,
            "std_accuracy": cell.aggregate.std_accuracy,
            "mean_confusion": cell.aggregate.mean_confusion.tolist(),
        })
    return {"classes": list(result.classes), "cells": cells}


def _raw_to_table(raw: dict) -> str:
    cells = {}
    for cell in raw["cells"]:
        cells[(cell["data_rate"], cell["model_rate"])] = RunAggregate(
            mean_accuracy=cell["mean_accuracy"],
            std_accuracy=cell["std_accuracy"],
            mean_confusion=np.asarray(cell["mean_confusion"]),
        )
    return render_sweep_table(cells)


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path))
@click.option("--corpus-root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--data-rates", type=str, default=None, help="e.g. 2k,4k,8k")
@click.option("--model-rates", type=str, default=None, help="e.g. 8k,16k,32k")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path))
@_guarded
def sweep_cmd(config_path, manifest_path, corpus_root, data_rates, model_rates,
              out_dir):
    """Train the full grid of data-rate x model-rate combinations."""
    cfg = load_config(config_path)
    manifest = _load_manifest_file(_require(manifest_path or cfg.manifest, "--manifest"))
    corpus = Path(_require(corpus_root or cfg.corpus_root, "--corpus-root"))
    rates_d = _parse_rate_list(data_rates) if data_rates else cfg.sweep_data_rates
    rates_m = _parse_rate_list(model_rates) if model_rates else cfg.sweep_model_rates
    if not rates_d or not rates_m:
        raise click.ClickException("sweep needs --data-rates and --model-rates "
                                   "(or sweep.* config keys)")
    out = _require(out_dir or cfg.output_dir, "--out")
    out.mkdir(parents=True, exist_ok=True)
    result = run_sweep(rates_d, rates_m, cfg.train_config(), manifest,
                       lambda entry: _read_wav(corpus, entry),
                       split_spec=cfg.split, seconds=cfg.segment_seconds)
    raw = _cells_to_raw(result)
    (out / "sweep_raw.json").write_text(json.dumps(raw, indent=2, sort_keys=True) + "\n")
    (out / "sweep_table.csv").write_text(_raw_to_table(raw))
    _write_run_record(out, "sweep", cfg)
    for cell in raw["cells"]:
        click.echo(f"data {cell['data_rate']} Hz / model {cell['model_rate']} Hz: "
                   f"{cell['mean_accuracy']:.4f} +/- {cell['std_accuracy']:.4f}")


@main.command()
@click.option("--raw", "raw_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False, path_type=Path))
@_guarded
def report(raw_path, out_dir):
    """Re-render the sweep table and confusion views from raw sweep output."""
    raw = json.loads(raw_path.read_text())
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep_table.csv").write_text(_raw_to_table(raw))
    classes = raw["classes"]
    for cell in raw["cells"]:
        stem = f"confusion_{cell['data_rate']}_{cell['model_rate']}"
        conf = np.asarray(cell["mean_confusion"])
        (out_dir / f"{stem}.csv").write_text(render_confusion_csv(conf, classes))
        (out_dir / f"{stem}_rownorm.csv").write_text(
            render_confusion_rownorm_csv(conf, classes))
    click.echo(f"rendered {len(raw['cells'])} sweep cells to {out_dir}")


if __name__ == "__main__":
    main()
