"""Evaluation metrics and the attention-matrix export.

Accuracy is fraction correct over all seen classes; MCR is the mean of
per-class recalls, which separates from accuracy under class imbalance.
Classes without test samples are excluded from the MCR mean and flagged.
Values are stored as fractions and rendered as percentages (2 decimals)
at the CSV layer.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import fusion
from .errors import EvalError


@dataclass
class StageMetrics:
    stage: int
    accuracy: float
    mcr: float
    per_class_recall: dict  # global class id -> recall (classes with >= 1 sample)
    n_seen_classes: int
    missing_classes: list = field(default_factory=list)


def evaluate_stage(params, concept_feats, features, labels, class_order, alpha, stage=0):
    """Score predictions over the seen classes.

    ``class_order`` maps head columns to global class ids; labels are
    global ids and must all be seen.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] == 0:
        raise EvalError("evaluation needs at least one test sample")
    order = np.asarray(class_order, dtype=np.int64)
    seen = set(class_order)
    unseen = sorted(set(labels.tolist()) - seen)
    if unseen:
        raise EvalError(f"test labels {unseen} were never trained")
    _, pred_cols = fusion.predict(params, features, concept_feats, alpha)
    predicted = order[pred_cols]
    accuracy = float(np.mean(predicted == labels))
    recalls = {}
    missing = []
    for cid in class_order:
        rows = labels == cid
        count = int(rows.sum())
        if count == 0:
            missing.append(int(cid))
            continue
        recalls[int(cid)] = float(np.mean(predicted[rows] == cid))
    mcr = float(np.mean(list(recalls.values())))
    return StageMetrics(stage, accuracy, mcr, recalls, len(class_order), missing)


def aggregate(stages):
    """Average and final ("last") value of both metrics across stages."""
    if not stages:
        raise EvalError("aggregate needs at least one stage")
    acc = [s.accuracy for s in stages]
    mcr = [s.mcr for s in stages]
    return {
        "avg_accuracy": float(np.mean(acc)),
        "last_accuracy": acc[-1],
        "avg_mcr": float(np.mean(mcr)),
        "last_mcr": mcr[-1],
    }


def attention_matrix(params, concept_feats, features, labels, class_order, class_names, class_map):
    """Mean attention row per seen class plus the ground-truth concept mask.

    Classes without test samples get a NaN row and are reported in the
    returned ``missing`` list (flagged in the CSV header).
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_concepts = concept_feats.shape[0]
    matrix = np.full((len(class_order), n_concepts), np.nan)
    mask = np.zeros((len(class_order), n_concepts), dtype=np.int64)
    missing = []
    for row, cid in enumerate(class_order):
        name = class_names[cid]
        for concept_id in class_map[name]:
            mask[row, concept_id] = 1
        sel = labels == cid
        if not sel.any():
            missing.append(name)
            continue
        trace = fusion.forward(params, features[sel], concept_feats)
        matrix[row] = trace.attn.mean(axis=0)
    return matrix, mask, missing


def format_percent(fraction):
    return f"{100.0 * fraction:.2f}"


def write_metrics_csv(path, stages):
    """One row per stage: stage, accuracy, mcr, n_seen_classes (percent, 2dp)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "accuracy", "mcr", "n_seen_classes"])
        for s in stages:
            writer.writerow(
                [s.stage, format_percent(s.accuracy), format_percent(s.mcr), s.n_seen_classes]
            )


def write_attention_csv(path, matrix, mask, row_names, concept_texts, missing=()):
    """Attention means followed by the ground-truth mask, one row per class."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if missing:
            fh.write("# no_test_samples: " + ";".join(missing) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["class"] + list(concept_texts) + [f"gt:{t}" for t in concept_texts])
        for name, scores, gt in zip(row_names, matrix, mask):
            writer.writerow([name] + [repr(float(v)) for v in scores] + [int(v) for v in gt])
