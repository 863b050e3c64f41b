"""Detection-quality evaluation: IoU-matched per-class average precision.

Predictions are matched per frame and class, greedily by descending
confidence, each to the unmatched ground-truth box with the highest IoU at
or above the threshold.  Per-class AP uses all-point interpolation (the
precision envelope made monotone from the right, integrated over recall);
mAP is the unweighted mean over classes present in the ground truth.
Classes appearing only in predictions accumulate false positives in the
counts but never enter the mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .detection import BoundingBox, GroundTruthObject
from .errors import SchemaError
from .jsonio import dump_json, load_json
from .spatial import Detection


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int


@dataclass
class EvalReport:
    per_class_ap: dict[str, float]
    map_score: float
    iou_threshold: float
    counts: dict[str, ClassCounts]

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "iou_threshold": self.iou_threshold,
            "map_score": self.map_score,
            "per_class_ap": {k: self.per_class_ap[k] for k in sorted(self.per_class_ap)},
            "counts": {
                k: {"tp": c.tp, "fp": c.fp, "fn": c.fn}
                for k, c in sorted(self.counts.items())
            },
        }

    @staticmethod
    def from_json_dict(doc: dict[str, Any]) -> "EvalReport":
        try:
            return EvalReport(
                per_class_ap={str(k): float(v) for k, v in doc["per_class_ap"].items()},
                map_score=float(doc["map_score"]),
                iou_threshold=float(doc["iou_threshold"]),
                counts={
                    str(k): ClassCounts(int(v["tp"]), int(v["fp"]), int(v["fn"]))
                    for k, v in doc["counts"].items()
                },
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"bad report document: {e}") from e


def save_report(report: EvalReport, path: str | Path) -> None:
    dump_json(report.to_json_dict(), path)


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_json_dict(load_json(path))


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    """Per-class rows for plotting grouped bars."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "ap", "tp", "fp", "fn"])
        for label in sorted(report.counts):
            c = report.counts[label]
            ap = report.per_class_ap.get(label, "")
            writer.writerow([label, ap, c.tp, c.fp, c.fn])


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def match_detections(
    predictions: Sequence[Detection],
    ground_truth: Sequence[GroundTruthObject],
    iou_threshold: float,
) -> list[bool]:
    """True/false positive flag for each prediction, aligned with input order.

    Within each (frame, class) group, predictions are visited by descending
    confidence (ties by object id) and greedily claim the unmatched
    ground-truth box with the highest IoU >= threshold (ties by ground-truth
    position).  Unclaimed ground truths are the false negatives.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise SchemaError(f"iou_threshold {iou_threshold} outside (0, 1]")

    gt_by_group: dict[tuple[str, str], list[int]] = {}
    for idx, g in enumerate(ground_truth):
        gt_by_group.setdefault((g.frame_id, g.label), []).append(idx)

    pred_by_group: dict[tuple[str, str], list[int]] = {}
    for idx, p in enumerate(predictions):
        pred_by_group.setdefault((p.frame_id, p.label), []).append(idx)

    flags = [False] * len(predictions)
    for group, pred_indices in pred_by_group.items():
        candidates = gt_by_group.get(group, [])
        claimed: set[int] = set()
        ordered = sorted(
            pred_indices,
            key=lambda i: (-predictions[i].confidence, predictions[i].object_id),
        )
        for pi in ordered:
            best_gt = None
            best_iou = 0.0
            for gi in candidates:
                if gi in claimed:
                    continue
                value = iou(predictions[pi].box, ground_truth[gi].box)
                if value >= iou_threshold and value > best_iou:
                    best_gt = gi
                    best_iou = value
            if best_gt is not None:
                claimed.add(best_gt)
                flags[pi] = True
    return flags


def average_precision(tp_fp_sequence: Sequence[bool], num_ground_truth: int) -> float:
    """All-point interpolated AP of a confidence-ranked TP/FP sequence.

    Zero when there is no ground truth (the caller excludes such classes
    from the mean).
    """
    if num_ground_truth < 0:
        raise SchemaError("num_ground_truth must be non-negative")
    if num_ground_truth == 0 or not tp_fp_sequence:
        return 0.0

    precisions = []
    recalls = []
    tp_cum = 0
    for i, is_tp in enumerate(tp_fp_sequence, start=1):
        tp_cum += int(is_tp)
        precisions.append(tp_cum / i)
        recalls.append(tp_cum / num_ground_truth)

    # Envelope: make precision monotonically non-increasing from the right.
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])

    ap = 0.0
    prev_recall = 0.0
    for recall, precision in zip(recalls, precisions):
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def evaluate(
    predictions: Sequence[Detection],
    ground_truth: Sequence[GroundTruthObject],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Per-class AP and mAP over the classes present in the ground truth."""
    flags = match_detections(predictions, ground_truth, iou_threshold)

    gt_count: dict[str, int] = {}
    for g in ground_truth:
        gt_count[g.label] = gt_count.get(g.label, 0) + 1

    preds_by_class: dict[str, list[int]] = {}
    for idx, p in enumerate(predictions):
        preds_by_class.setdefault(p.label, []).append(idx)

    per_class_ap: dict[str, float] = {}
    counts: dict[str, ClassCounts] = {}
    for label in sorted(set(gt_count) | set(preds_by_class)):
        indices = sorted(
            preds_by_class.get(label, []),
            key=lambda i: (-predictions[i].confidence, predictions[i].object_id),
        )
        sequence = [flags[i] for i in indices]
        tp = sum(sequence)
        fp = len(sequence) - tp
        n_gt = gt_count.get(label, 0)
        counts[label] = ClassCounts(tp=tp, fp=fp, fn=n_gt - tp)
        if n_gt > 0:
            per_class_ap[label] = average_precision(sequence, n_gt)

    map_score = (
        sum(per_class_ap.values()) / len(per_class_ap) if per_class_ap else 0.0
    )
    return EvalReport(
        per_class_ap=per_class_ap,
        map_score=map_score,
        iou_threshold=iou_threshold,
        counts=counts,
    )
