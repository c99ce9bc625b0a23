"""Training loops: single runs, seed replicates, and rate sweeps.

Each epoch shuffles with a stream derived from (seed, epoch), augments
training batches only (masking first, then mixup), and tracks the best
validation loss. Early stopping restores the best-epoch weights, with
ties resolved toward the earlier epoch.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .errors import SonarprepError
from .wavio import Manifest, ManifestEntry, Waveform
from .dsp import (FeatureConfig, DEFAULT_FEATURE_CONFIG, effective_config,
                  features_for_segment, frame_count, mel_filterbank, resample,
                  scale_config, segment)
from .augment import AugmentConfig, make_mix_pairs, mixup, scaled_mask_width, spec_augment
from .datasplit import (SplitSpec, compute_norm_stats, normalize,
                        segment_counts, stratified_split)
from .nn import (AdamState, Architecture, DEFAULT_ARCHITECTURE, ModelState,
                 adam_step, backward, cross_entropy_soft, forward, init_model)
from .evaluation import Metrics, RunAggregate, aggregate_runs, evaluate


class EmptyDatasetError(SonarprepError):
    """A training or validation split has no samples."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 50
    seeds: tuple[int, ...] = (0, 1, 2)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    feature: FeatureConfig = DEFAULT_FEATURE_CONFIG
    arch: Architecture = DEFAULT_ARCHITECTURE
    use_mixup: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not self.seeds:
            raise ValueError("need at least one seed")


@dataclass
class RunHistory:
    seed: int
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    augmented_batches: int = 0  # instrumentation: train batches that saw augmentation


def one_hot(labels: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out


def validation_pass(model: ModelState, features: np.ndarray, labels: np.ndarray,
                    batch_size: int = 256) -> tuple[float, float]:
    """Unaugmented loss and accuracy over a held-out set."""
    total_loss = 0.0
    correct = 0
    n = features.shape[0]
    for start in range(0, n, batch_size):
        chunk = features[start:start + batch_size]
        chunk_labels = labels[start:start + batch_size]
        logits = forward(model, chunk[:, None, :, :])
        loss, _ = cross_entropy_soft(logits, one_hot(chunk_labels, logits.shape[1],
                                                     dtype=logits.dtype))
        total_loss += loss * chunk.shape[0]
        correct += int((np.argmax(logits, axis=1) == chunk_labels).sum())
    model._cache = None
    return total_loss / n, correct / n


def _augment_batch(inputs: np.ndarray, targets: np.ndarray, cfg: TrainConfig,
                   rng: np.random.Generator):
    masked = np.stack([spec_augment(sample, cfg.augment, rng) for sample in inputs])
    if cfg.use_mixup:
        pairs = make_mix_pairs(masked.shape[0], cfg.augment.mixup_alpha, rng)
        return mixup(masked, targets, pairs)
    return masked, targets


def train(cfg: TrainConfig, train_set, val_set, model: ModelState,
          seed: int = 0) -> tuple[ModelState, RunHistory]:
    """Fit the model; returns it restored to the best-validation epoch."""
    train_x, train_y = train_set
    val_x, val_y = val_set
    if train_x.shape[0] == 0:
        raise EmptyDatasetError("training split is empty")
    if val_x.shape[0] == 0:
        raise EmptyDatasetError("validation split is empty")
    n = train_x.shape[0]
    optimizer = AdamState.for_params(model.params, lr=cfg.lr)
    history = RunHistory(seed=seed)
    best_loss = np.inf
    best_epoch = 0
    best_params = {k: p.copy() for k, p in model.params.items()}
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):  # final partial batch included
            idx = order[start:start + cfg.batch_size]
            inputs = train_x[idx]
            targets = one_hot(train_y[idx], model.n_classes, dtype=model.dtype)
            inputs, targets = _augment_batch(inputs, targets, cfg, rng)
            history.augmented_batches += 1
            logits = forward(model, inputs[:, None, :, :])
            loss, grad_logits = cross_entropy_soft(logits, targets)
            grads = backward(model, grad_logits)
            adam_step(model.params, grads, optimizer)
            epoch_loss += loss * len(idx)
        val_loss, val_acc = validation_pass(model, val_x, val_y)
        history.train_loss.append(epoch_loss / n)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        if val_loss < best_loss:  # strict: ties keep the earlier epoch
            best_loss = val_loss
            best_epoch = epoch
            best_params = {k: p.copy() for k, p in model.params.items()}
        if epoch - best_epoch >= cfg.patience:
            break
    for name, p in model.params.items():
        p[...] = best_params[name]
    history.best_epoch = best_epoch
    history.stopped_epoch = epoch
    return model, history


class FeatureSets(NamedTuple):
    """Stacked per-split features and integer labels."""

    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]
    n_classes: int


@dataclass
class SeedResult:
    seed: int
    model: ModelState
    history: RunHistory
    metrics: Metrics


def run_seeds(cfg: TrainConfig, data: FeatureSets) -> list[SeedResult]:
    """Independent train/evaluate runs, one fresh model per seed."""
    results = []
    for seed in cfg.seeds:
        model = init_model(cfg.arch, data.n_classes, seed, dtype=np.float32)
        model, history = train(cfg, data.train, data.val, model, seed=seed)
        metrics = evaluate(model, *data.test)
        results.append(SeedResult(seed=seed, model=model, history=history,
                                  metrics=metrics))
    return results


def history_csv(history: RunHistory) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
    for i in range(len(history.train_loss)):
        writer.writerow([i + 1, repr(history.train_loss[i]),
                         repr(history.val_loss[i]), repr(history.val_acc[i])])
    return out.getvalue()


# ---------------------------------------------------------------------------
# rate sweeps
# ---------------------------------------------------------------------------

@dataclass
class CellResult:
    data_rate: int
    model_rate: int
    mask_width: int
    n_frames: int
    feature: FeatureConfig
    accuracies: list[float]
    aggregate: RunAggregate
    seed_results: list[SeedResult]


@dataclass
class SweepResult:
    cells: dict[tuple[int, int], CellResult]
    classes: tuple[str, ...]


def build_feature_sets(manifest: Manifest,
                       load_waveform: Callable[[ManifestEntry], Waveform],
                       assignment: dict[str, str], data_rate: int,
                       feature_cfg: FeatureConfig, seconds: float) -> FeatureSets:
    """Resample, segment, featurize, and normalize a corpus into split arrays.

    Normalization stats come from the training split alone.
    """
    label_index = manifest.label_indices()
    fb = mel_filterbank(effective_config(feature_cfg, data_rate))
    buckets = {name: [] for name in ("train", "val", "test")}
    for entry in manifest.entries:
        split_name = assignment[entry.recording_id]
        w = resample(load_waveform(entry), data_rate)
        for seg in segment(w, seconds):
            spec = features_for_segment(seg, feature_cfg, fb=fb)
            buckets[split_name].append((spec.values, label_index[entry.class_label]))
    if not buckets["train"]:
        raise EmptyDatasetError("training split produced no segments")
    stats = compute_norm_stats(values for values, _ in buckets["train"])
    stacked = {}
    for name, items in buckets.items():
        if not items:
            raise EmptyDatasetError(f"{name} split produced no segments")
        x = np.stack([normalize(values, stats) for values, _ in items]).astype(np.float32)
        y = np.array([label for _, label in items], dtype=np.int64)
        stacked[name] = (x, y)
    return FeatureSets(train=stacked["train"], val=stacked["val"],
                       test=stacked["test"], n_classes=len(manifest.classes))


def sweep(data_rates, model_rates, cfg: TrainConfig, manifest: Manifest,
          load_waveform: Callable[[ManifestEntry], Waveform],
          split_spec: SplitSpec | None = None, seconds: float = 5.0) -> SweepResult:
    """Full grid over data and model sampling rates.

    The recording-level split is drawn once and reused for every cell;
    each cell rescales the feature config and the time-mask budget, then
    runs the usual multi-seed training.
    """
    split_spec = split_spec if split_spec is not None else SplitSpec()
    counts = segment_counts(manifest, seconds)
    split = stratified_split(manifest, counts, split_spec)
    cells: dict[tuple[int, int], CellResult] = {}
    for model_rate in model_rates:
        cell_feature = scale_config(cfg.feature, model_rate)
        for data_rate in data_rates:
            cell_augment = replace(cfg.augment, data_rate=data_rate,
                                   model_rate=model_rate)
            cell_cfg = replace(cfg, feature=cell_feature, augment=cell_augment)
            data = build_feature_sets(manifest, load_waveform, split.assignment,
                                      data_rate, cell_feature, seconds)
            results = run_seeds(cell_cfg, data)
            aggregate = aggregate_runs([r.metrics for r in results])
            cells[(data_rate, model_rate)] = CellResult(
                data_rate=data_rate,
                model_rate=model_rate,
                mask_width=scaled_mask_width(cell_augment),
                n_frames=frame_count(int(round(seconds * data_rate)),
                                     cell_feature.hop_length),
                feature=cell_feature,
                accuracies=[r.metrics.accuracy for r in results],
                aggregate=aggregate,
                seed_results=results,
            )
    return SweepResult(cells=cells, classes=manifest.classes)
