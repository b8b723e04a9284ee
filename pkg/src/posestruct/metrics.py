"""Object Keypoint Similarity and AP/AR evaluation.

Follows the COCO keypoint protocol: greedy highest-score matching per image,
101-point precision/recall interpolation, thresholds 0.50:0.05:0.95, and the
standard area bands (medium (32^2, 96^2], large > 96^2).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .topology import Pose, Visibility

# Per-keypoint falloff constants of the COCO evaluation protocol
# (nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles).
COCO_SIGMAS = np.array(
    [
        0.026, 0.025, 0.025, 0.035, 0.035,
        0.079, 0.079, 0.072, 0.072, 0.062, 0.062,
        0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
    ],
    dtype=np.float64,
)

_MEDIUM_RANGE = (32.0**2, 96.0**2)

_DEFAULT_THRESHOLDS = tuple(0.50 + 0.05 * i for i in range(10))

_RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class EvalResult:
    """AP/AR summary; every value lies in [0, 1].

    Area-banded APs are 0 when no ground truth falls in the band.
    """

    ap: float
    ap50: float
    ap75: float
    ap_medium: float
    ap_large: float
    ar50: float

    def as_dict(self) -> dict[str, float]:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "ar50": self.ar50,
        }


def oks(
    pred: Pose,
    gt: Pose,
    gt_area: float,
    sigmas: np.ndarray | None = None,
) -> float:
    """Object Keypoint Similarity between one prediction and one ground truth.

    Mean over labeled ground-truth keypoints of
    exp(-d_i^2 / (2 * area * (2 sigma_i)^2)); unlabeled keypoints count in
    neither numerator nor denominator.

    Raises:
        ValueError: non-positive area, no labeled ground-truth keypoint, or a
            sigma vector of the wrong length.
    """
    if gt_area <= 0.0:
        raise ValueError("gt_area must be positive")
    k = gt.num_keypoints
    if sigmas is None:
        sigmas = COCO_SIGMAS
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.shape != (k,):
        raise ValueError(f"expected {k} sigmas, got shape {sigmas.shape}")

    labeled = gt.visibility != Visibility.NOT_LABELED
    if not labeled.any():
        raise ValueError("OKS is undefined without labeled ground-truth keypoints")

    d2 = np.sum((pred.keypoints - gt.keypoints) ** 2, axis=1)
    kappa2 = (2.0 * sigmas) ** 2
    terms = np.exp(-d2[labeled] / (2.0 * gt_area * kappa2[labeled]))
    return float(terms.mean())


def _interpolated_ap(tp: np.ndarray, num_gt: int) -> float:
    """101-point interpolated AP from per-detection hit flags in score order."""
    if num_gt == 0:
        return 0.0
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    recall = cum_tp / num_gt
    precision = cum_tp / (cum_tp + cum_fp)
    # envelope: precision at recall r is the best precision at recall >= r
    for i in range(precision.size - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    idx = np.searchsorted(recall, _RECALL_POINTS, side="left")
    pr = np.where(idx < precision.size, precision[np.minimum(idx, precision.size - 1)], 0.0)
    return float(pr.mean())


def _match_threshold(
    image_ids: list,
    per_image: dict,
    order: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """Greedy per-image matching; returns the matched global gt index or -1
    for every prediction, in global descending-score order."""
    matched = np.full(order.size, -1, dtype=np.int64)
    taken: dict = {}
    for rank, pred_idx in enumerate(order):
        img, row = image_ids[pred_idx]
        entry = per_image[img]
        oks_row = entry["oks"][row]
        used = taken.setdefault(img, set())
        best_gt, best_oks = -1, -1.0
        for col in range(len(entry["gt_index"])):
            if col in used:
                continue
            value = oks_row[col]
            if value >= threshold and value > best_oks:
                best_oks = value
                best_gt = col
        if best_gt >= 0:
            used.add(best_gt)
            matched[rank] = entry["gt_index"][best_gt]
    return matched


def evaluate(
    preds: Sequence[tuple[object, Pose, float]],
    gts: Sequence[tuple[object, Pose, float]],
    thresholds: Sequence[float] | None = None,
    sigmas: np.ndarray | None = None,
) -> EvalResult:
    """COCO-style AP/AR over (image_id, pose, score) predictions.

    Predictions are matched greedily in descending score to the unmatched
    ground truth with the highest OKS at or above each threshold, within the
    same image.  Duplicate entries are evaluated as-is (no deduplication).

    Raises:
        ValueError: non-finite scores or thresholds not sorted ascending.
    """
    if thresholds is None:
        thresholds = _DEFAULT_THRESHOLDS
    thresholds = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    if any(not np.isfinite(score) for _, _, score in preds):
        raise ValueError("prediction scores must be finite")

    # Global prediction order: descending score, stable on input order.
    scores = np.array([score for _, _, score in preds], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")

    gt_area = np.array([area for _, _, area in gts], dtype=np.float64)
    gt_medium = (gt_area > _MEDIUM_RANGE[0]) & (gt_area <= _MEDIUM_RANGE[1])
    gt_large = gt_area > _MEDIUM_RANGE[1]

    # Per-image OKS matrices, computed once and reused for every threshold.
    per_image: dict = {}
    image_ids: list = []
    for pred_idx, (img, _, _) in enumerate(preds):
        entry = per_image.setdefault(img, {"pred_rows": [], "gt_index": []})
        image_ids.append((img, len(entry["pred_rows"])))
        entry["pred_rows"].append(pred_idx)
    for gt_idx, (img, _, _) in enumerate(gts):
        entry = per_image.setdefault(img, {"pred_rows": [], "gt_index": []})
        entry["gt_index"].append(gt_idx)
    for img, entry in per_image.items():
        matrix = np.zeros((len(entry["pred_rows"]), len(entry["gt_index"])))
        for row, pred_idx in enumerate(entry["pred_rows"]):
            for col, gt_idx in enumerate(entry["gt_index"]):
                matrix[row, col] = oks(
                    preds[pred_idx][1], gts[gt_idx][1], gts[gt_idx][2], sigmas
                )
        entry["oks"] = matrix

    bands = {
        "all": np.ones(len(gts), dtype=bool),
        "medium": gt_medium,
        "large": gt_large,
    }

    needed = sorted(set(thresholds) | {0.50, 0.75})
    ap_at: dict[float, dict[str, float]] = {}
    ar50 = 0.0
    for t in needed:
        matched = _match_threshold(image_ids, per_image, order, t)
        ap_at[t] = {}
        for band, in_band in bands.items():
            keep = (matched < 0) | in_band[np.maximum(matched, 0)]
            tp = (matched >= 0) & in_band[np.maximum(matched, 0)]
            ap_at[t][band] = _interpolated_ap(tp[keep], int(in_band.sum()))
        if t == 0.50 and len(gts) > 0:
            ar50 = float(np.sum(matched >= 0)) / len(gts)

    return EvalResult(
        ap=float(np.mean([ap_at[t]["all"] for t in thresholds])) if thresholds else 0.0,
        ap50=ap_at[0.50]["all"],
        ap75=ap_at[0.75]["all"],
        ap_medium=float(np.mean([ap_at[t]["medium"] for t in thresholds])) if thresholds else 0.0,
        ap_large=float(np.mean([ap_at[t]["large"] for t in thresholds])) if thresholds else 0.0,
        ar50=ar50,
    )
