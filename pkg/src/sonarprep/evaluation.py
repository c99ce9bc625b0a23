"""Test-set metrics, multi-run aggregation, and report rendering.

Confusion matrices put the true class on rows and the predicted class
on columns. Multi-run summaries report mean accuracy with the sample
standard deviation, formatted as percentages to one decimal place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import SonarprepError
from .dsp import write_feature_archive
from .nn import ModelState, forward, grad_cam


class EmptyTestSetError(SonarprepError):
    """Evaluation needs at least one sample."""


@dataclass
class Metrics:
    accuracy: float
    per_class_recall: np.ndarray
    confusion: np.ndarray  # [C x C] counts, rows = truth, cols = prediction


@dataclass
class RunAggregate:
    mean_accuracy: float
    std_accuracy: float
    mean_confusion: np.ndarray


@dataclass
class CamAggregate:
    """Mean class activation maps bucketed by (true class, correctness)."""

    maps: dict[tuple[int, bool], np.ndarray]
    counts: dict[tuple[int, bool], int]
    map_shape: tuple[int, int]


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays must have matching length")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= n_classes or
                        y_pred.min() < 0 or y_pred.max() >= n_classes):
        raise ValueError("labels out of range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def metrics_from_predictions(y_true, y_pred, n_classes: int) -> Metrics:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    total = cm.sum()
    accuracy = float(np.trace(cm) / total) if total else 0.0
    support = cm.sum(axis=1)
    recall = np.divide(np.diag(cm), support, where=support > 0,
                       out=np.zeros(n_classes, dtype=np.float64))
    return Metrics(accuracy=accuracy, per_class_recall=recall, confusion=cm)


def predict(model: ModelState, features: np.ndarray,
            batch_size: int = 256) -> np.ndarray:
    """Argmax class per sample; ties resolve to the lowest class index."""
    preds = []
    for start in range(0, features.shape[0], batch_size):
        chunk = features[start:start + batch_size]
        logits = forward(model, chunk[:, None, :, :])
        preds.append(np.argmax(logits, axis=1))
    model._cache = None  # inference only; nothing to backpropagate
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model: ModelState, features: np.ndarray, labels: np.ndarray,
             n_classes: int | None = None) -> Metrics:
    """Accuracy, per-class recall, and the confusion matrix on a test set."""
    labels = np.asarray(labels)
    if features.shape[0] == 0 or labels.size == 0:
        raise EmptyTestSetError("test set is empty")
    if n_classes is None:
        n_classes = model.n_classes
    return metrics_from_predictions(labels, predict(model, features), n_classes)


def aggregate_runs(all_metrics: list[Metrics]) -> RunAggregate:
    """Mean and sample std of accuracy plus the count-averaged confusion."""
    if not all_metrics:
        raise ValueError("need at least one run to aggregate")
    accs = np.array([m.accuracy for m in all_metrics], dtype=np.float64)
    std = float(accs.std(ddof=1)) if accs.size > 1 else 0.0
    mean_conf = np.mean([m.confusion for m in all_metrics], axis=0)
    return RunAggregate(mean_accuracy=float(accs.mean()), std_accuracy=std,
                        mean_confusion=mean_conf)


def aggregate_cams(model: ModelState, features: np.ndarray,
                   labels: np.ndarray) -> CamAggregate:
    """Mean activation map per (true class, correct/incorrect) bucket.

    Maps are computed against each sample's predicted class, so the
    misclassified buckets show what the model actually looked at.
    """
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise EmptyTestSetError("no samples to aggregate maps over")
    predictions = predict(model, features)
    sums: dict[tuple[int, bool], np.ndarray] = {}
    counts: dict[tuple[int, bool], int] = {}
    map_shape = None
    for i in range(features.shape[0]):
        cam = grad_cam(model, features[i][None, None, :, :], int(predictions[i]))
        map_shape = cam.shape
        key = (int(labels[i]), bool(predictions[i] == labels[i]))
        if key in sums:
            sums[key] += cam
            counts[key] += 1
        else:
            sums[key] = cam.astype(np.float64)
            counts[key] = 1
    maps = {}
    all_counts = {}
    for class_index in range(model.n_classes):
        for correct in (True, False):
            key = (class_index, correct)
            if key in sums:
                maps[key] = sums[key] / counts[key]
                all_counts[key] = counts[key]
            else:
                maps[key] = np.zeros(map_shape, dtype=np.float64)
                all_counts[key] = 0
    return CamAggregate(maps=maps, counts=all_counts, map_shape=tuple(map_shape))


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------

def format_mean_std(mean: float, std: float) -> str:
    """Render a fraction as 'NN.N ± N.N' in percent."""
    return f"{mean * 100:.1f} ± {std * 100:.1f}"


def parse_mean_std(cell: str) -> tuple[float, float]:
    """Inverse of :func:`format_mean_std`, back to fractions."""
    mean_text, std_text = cell.split("±")
    return float(mean_text.strip()) / 100.0, float(std_text.strip()) / 100.0


def render_sweep_table(cells: dict[tuple[int, int], RunAggregate]) -> str:
    """CSV with one row per data rate and one column per model rate."""
    data_rates = sorted({rd for rd, _ in cells})
    model_rates = sorted({rm for _, rm in cells})
    lines = ["data_rate_hz," + ",".join(str(rm) for rm in model_rates)]
    for rd in data_rates:
        row = [str(rd)]
        for rm in model_rates:
            agg = cells.get((rd, rm))
            row.append(format_mean_std(agg.mean_accuracy, agg.std_accuracy)
                       if agg is not None else "")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def parse_sweep_table(text: str) -> dict[tuple[int, int], tuple[float, float]]:
    lines = [line for line in text.splitlines() if line.strip()]
    header = lines[0].split(",")
    model_rates = [int(c) for c in header[1:]]
    out: dict[tuple[int, int], tuple[float, float]] = {}
    for line in lines[1:]:
        parts = line.split(",")
        rd = int(parts[0])
        for rm, cell in zip(model_rates, parts[1:]):
            if cell.strip():
                out[(rd, rm)] = parse_mean_std(cell)
    return out


def render_confusion_csv(confusion: np.ndarray, classes) -> str:
    """Counts (or count-averages) with labeled rows and columns."""
    lines = ["true\\pred," + ",".join(classes)]
    for i, label in enumerate(classes):
        row = [label] + [_format_count(v) for v in confusion[i]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _format_count(v) -> str:
    as_float = float(v)
    return str(int(as_float)) if as_float.is_integer() else f"{as_float:.2f}"


def render_confusion_rownorm_csv(confusion: np.ndarray, classes) -> str:
    """Row-normalized view: each row sums to one (recall on the diagonal)."""
    conf = np.asarray(confusion, dtype=np.float64)
    row_sums = conf.sum(axis=1, keepdims=True)
    normed = np.divide(conf, row_sums, where=row_sums > 0,
                       out=np.zeros_like(conf))
    lines = ["true\\pred," + ",".join(classes)]
    for i, label in enumerate(classes):
        lines.append(",".join([label] + [f"{v:.4f}" for v in normed[i]]))
    return "\n".join(lines) + "\n"


def write_cam_report(out_dir, cam_agg: CamAggregate, classes) -> None:
    """Write mean maps in the feature-archive layout plus a JSON sidecar."""
    items = []
    sidecar = []
    for class_index in range(len(classes)):
        for correct in (True, False):
            key = (class_index, correct)
            items.append((cam_agg.maps[key], class_index))
            sidecar.append({
                "item": len(items) - 1,
                "class_index": class_index,
                "class_label": classes[class_index],
                "correct": correct,
                "count": cam_agg.counts[key],
            })
    write_feature_archive(out_dir / "cams.sprf", items)
    payload = {"map_shape": list(cam_agg.map_shape), "buckets": sidecar}
    (out_dir / "cams.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
