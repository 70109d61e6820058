"""Evaluation metrics: 2D selection IoU and 3D semantic segmentation mIoU/mAcc.

Selection quality compares rendered selection masks against ground-truth 2D
masks per query and view. Segmentation quality transfers per-Gaussian labels
to a ground-truth point cloud by nearest center within a radius, then scores
per-class IoU and accuracy over the ground-truth points. Classes absent from
both prediction and ground truth are excluded from the means.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .query import UNLABELED

logger = logging.getLogger(__name__)

DEFAULT_TRANSFER_RADIUS = 0.05


@dataclass
class EvalReport:
    per_item: dict[str, dict[str, float]] = field(default_factory=dict)
    miou: float = 0.0
    macc: float | None = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {
            "per_item": self.per_item,
            "miou": self.miou,
            "config": self.config,
        }
        if self.macc is not None:
            doc["macc"] = self.macc
        return doc

    def table(self) -> str:
        lines = [f"{'item':>24}  {'IoU':>8}" + ("  {:>8}".format("Acc") if self.macc is not None else "")]
        for name, row in self.per_item.items():
            line = f"{name:>24}  {row['iou']:>8.4f}"
            if "acc" in row:
                line += f"  {row['acc']:>8.4f}"
            lines.append(line)
        lines.append("-" * len(lines[0]))
        summary = f"{'mIoU':>24}  {self.miou:>8.4f}"
        if self.macc is not None:
            summary += f"  {self.macc:>8.4f}"
        lines.append(summary)
        return "\n".join(lines)


def mask_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DataError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0  # both empty: perfect agreement
    return np.count_nonzero(pred & gt) / union


def eval_selection_2d(
    predictions: dict[str, dict[int, np.ndarray]],
    gt_masks: dict[str, dict[int, np.ndarray]],
) -> EvalReport:
    """Per-query mean IoU over annotated views, averaged into mIoU.

    `predictions` and `gt_masks` map query name -> view_id -> binary mask.
    Ground-truth views missing a prediction are skipped with a warning.
    """
    report = EvalReport()
    ious = []
    for query in sorted(gt_masks):
        views = gt_masks[query]
        pred_views = predictions.get(query, {})
        for view_id in sorted(set(pred_views) - set(views)):
            logger.warning("query '%s': view %d has no ground truth, skipping",
                           query, view_id)
        per_view = []
        for view_id in sorted(views):
            if view_id not in pred_views:
                logger.warning("query '%s': no prediction for view %d, skipping",
                               query, view_id)
                continue
            per_view.append(mask_iou(pred_views[view_id], views[view_id]))
        if not per_view:
            logger.warning("query '%s' has no comparable views", query)
            continue
        q_iou = float(np.mean(per_view))
        report.per_item[query] = {"iou": q_iou, "views": len(per_view)}
        ious.append(q_iou)
    report.miou = float(np.mean(ious)) if ious else 0.0
    return report


def transfer_labels(
    gt_points: np.ndarray,
    gaussian_centers: np.ndarray,
    gaussian_labels: np.ndarray,
    *,
    radius: float = DEFAULT_TRANSFER_RADIUS,
) -> np.ndarray:
    """Each ground-truth point takes the label of the nearest Gaussian center
    within `radius`, else UNLABELED."""
    if len(gt_points) == 0:
        raise DataError("ground-truth point cloud is empty")
    out = np.full(len(gt_points), UNLABELED, dtype=np.int64)
    if len(gaussian_centers) == 0:
        return out
    tree = cKDTree(gaussian_centers)
    dist, idx = tree.query(gt_points, k=1)
    within = dist <= radius
    out[within] = gaussian_labels[idx[within]]
    return out


def eval_segmentation_3d(
    gaussian_labels: np.ndarray,
    gaussian_centers: np.ndarray,
    gt_points: np.ndarray,
    gt_labels: np.ndarray,
    class_names: list[str],
    *,
    radius: float = DEFAULT_TRANSFER_RADIUS,
) -> EvalReport:
    """Per-class IoU and accuracy over the ground-truth points.

    Labels are class indices into `class_names`; UNLABELED predictions count
    against every ground-truth class they cover.
    """
    pred = transfer_labels(
        gt_points, gaussian_centers, gaussian_labels, radius=radius
    )
    gt = np.asarray(gt_labels, dtype=np.int64)
    report = EvalReport(config={"radius": radius})
    ious, accs = [], []
    for cls, name in enumerate(class_names):
        gt_c = gt == cls
        pred_c = pred == cls
        if not gt_c.any() and not pred_c.any():
            continue  # absent from both: excluded from the mean
        tp = int(np.count_nonzero(gt_c & pred_c))
        fp = int(np.count_nonzero(~gt_c & pred_c))
        fn = int(np.count_nonzero(gt_c & ~pred_c))
        iou = tp / (tp + fp + fn) if (tp + fp + fn) else 0.0
        acc = tp / int(np.count_nonzero(gt_c)) if gt_c.any() else 0.0
        report.per_item[name] = {
            "iou": iou, "acc": acc, "tp": tp, "fp": fp, "fn": fn,
        }
        ious.append(iou)
        accs.append(acc)
    report.miou = float(np.mean(ious)) if ious else 0.0
    report.macc = float(np.mean(accs)) if accs else 0.0
    return report
