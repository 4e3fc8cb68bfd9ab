"""Layout evaluation: segmentation, corner, and depth-map metrics.

Instance labels are arbitrary, so segmentation and corner metrics match
predictions to ground truth by optimal assignment before scoring.
Depth ratio thresholds use strict comparison (ratio < 1.25**j counts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyOverlap, ShapeMismatch
from .geometry import SENTINEL, CameraIntrinsics, DepthMap, SegmentationMap


@dataclass(frozen=True)
class MetricReport:
    e_pix: float        # %
    e_cor: float        # %
    e_3d_cor: float     # meters (mean over matched corners)
    unmatched_3d: int
    rms: float          # meters
    rel: float
    log10: float
    delta1: float
    delta2: float
    delta3: float

    def __post_init__(self):
        if not (self.delta1 <= self.delta2 <= self.delta3):
            raise ValueError("delta fractions must be non-decreasing")

    def as_dict(self) -> dict:
        return {
            "e_pix": self.e_pix, "e_cor": self.e_cor,
            "e_3d_cor": self.e_3d_cor, "unmatched_3d": self.unmatched_3d,
            "rms": self.rms, "rel": self.rel, "log10": self.log10,
            "delta1": self.delta1, "delta2": self.delta2, "delta3": self.delta3,
        }


def pixel_error(pred_seg: SegmentationMap, gt_seg: SegmentationMap,
                fixed_labels: bool = False) -> float:
    """Mislabeled-pixel percentage under the best label bijection.

    The optimal assignment on the label confusion matrix absorbs the
    arbitrary numbering of predicted instances; unassigned (sentinel)
    pixels only ever match other sentinel pixels.  With fixed_labels the
    matching is forced to identity (datasets with fixed semantic label
    ids).
    """
    if pred_seg.labels.shape != gt_seg.labels.shape:
        raise ShapeMismatch(
            f"{pred_seg.labels.shape} vs {gt_seg.labels.shape}")
    pred = pred_seg.labels.ravel()
    gt = gt_seg.labels.ravel()
    n = pred.size
    if fixed_labels:
        return float((pred != gt).mean() * 100.0)

    agree = int((pred == gt)[(pred == SENTINEL) | (gt == SENTINEL)].sum())
    both = (pred != SENTINEL) & (gt != SENTINEL)
    pred_labels = np.unique(pred[both])
    gt_labels = np.unique(gt[both])
    if pred_labels.size and gt_labels.size:
        confusion = np.zeros((pred_labels.size, gt_labels.size), dtype=np.int64)
        pi = np.searchsorted(pred_labels, pred[both])
        gi = np.searchsorted(gt_labels, gt[both])
        np.add.at(confusion, (pi, gi), 1)
        rows, cols = linear_sum_assignment(confusion, maximize=True)
        agree += int(confusion[rows, cols].sum())
    return float((n - agree) / n * 100.0)


def _corner_positions(corners) -> np.ndarray:
    out = np.zeros((len(corners), 3))
    for i, c in enumerate(corners):
        if hasattr(c, "u"):
            out[i] = (c.u, c.v, c.z)
        else:
            out[i] = (c[0], c[1], c[2] if len(c) > 2 else 0.0)
    return out


def corner_error_2d(pred_corners, gt_corners, image_size) -> float:
    """Corner location error, % of the image diagonal.

    Pred and gt corners are matched one-to-one by minimal total
    Euclidean distance; every unmatched corner on either side costs one
    full diagonal.  The sum is divided by max(|gt|, 1).
    """
    width, height = image_size
    diag = math.hypot(width, height)
    pred = _corner_positions(pred_corners)[:, :2]
    gt = _corner_positions(gt_corners)[:, :2]
    if len(gt) == 0 and len(pred) == 0:
        return 0.0
    matched_cost = 0.0
    n_matched = 0
    if len(gt) and len(pred):
        cost = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=-1)
        rows, cols = linear_sum_assignment(cost)
        matched_cost = float(cost[rows, cols].sum())
        n_matched = len(rows)
    unmatched = (len(gt) - n_matched) + (len(pred) - n_matched)
    total = matched_cost + diag * unmatched
    return float(total / max(len(gt), 1) / diag * 100.0)


def corner_error_3d(pred_corners, gt_corners, cam: CameraIntrinsics):
    """Mean camera-frame distance between optimally matched 3D corners.

    (u, v, Z) corners are back-projected with the intrinsics; corners
    left unmatched by the cardinality difference are excluded from the
    mean and returned as a count.
    """
    def lift(corners):
        arr = _corner_positions(corners)
        x = (arr[:, 0] - cam.u0) * arr[:, 2] / cam.fx
        y = (arr[:, 1] - cam.v0) * arr[:, 2] / cam.fy
        return np.stack([x, y, arr[:, 2]], axis=-1)

    pred = lift(pred_corners)
    gt = lift(gt_corners)
    if len(gt) == 0 or len(pred) == 0:
        return 0.0, len(gt) + len(pred)
    cost = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    mean_dist = float(cost[rows, cols].mean())
    unmatched = (len(gt) - len(rows)) + (len(pred) - len(rows))
    return mean_dist, unmatched


def depth_metrics(pred: DepthMap, gt: DepthMap):
    """(rms, rel, log10, delta1, delta2, delta3) over jointly valid pixels."""
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatch(f"{pred.values.shape} vs {gt.values.shape}")
    mask = pred.mask & gt.mask
    if not mask.any():
        raise EmptyOverlap("no jointly valid depth pixels")
    z = pred.values[mask]
    z_star = gt.values[mask]
    rms = float(np.sqrt(np.mean((z - z_star) ** 2)))
    rel = float(np.mean(np.abs(z - z_star) / z_star))
    log10 = float(np.mean(np.abs(np.log10(z) - np.log10(z_star))))
    ratio = np.maximum(z / z_star, z_star / z)
    deltas = tuple(float((ratio < 1.25 ** j).mean()) for j in (1, 2, 3))
    return (rms, rel, log10) + deltas


def evaluate_layout(pred_seg, gt_seg, pred_corners, gt_corners,
                    pred_depth: Optional[DepthMap], gt_depth: Optional[DepthMap],
                    cam: CameraIntrinsics) -> MetricReport:
    """Full per-image report; depth metrics are zero/perfect when absent."""
    e_pix = pixel_error(pred_seg, gt_seg)
    e_cor = corner_error_2d(pred_corners, gt_corners, (cam.width, cam.height))
    e3, unmatched = corner_error_3d(pred_corners, gt_corners, cam)
    if pred_depth is not None and gt_depth is not None:
        rms, rel, log10, d1, d2, d3 = depth_metrics(pred_depth, gt_depth)
    else:
        rms = rel = log10 = 0.0
        d1 = d2 = d3 = 1.0
    return MetricReport(e_pix, e_cor, e3, unmatched, rms, rel, log10, d1, d2, d3)


def aggregate_reports(reports) -> MetricReport:
    """Unweighted per-image mean of every metric (counts summed)."""
    if not reports:
        raise ValueError("nothing to aggregate")
    mean = lambda key: float(np.mean([getattr(r, key) for r in reports]))
    return MetricReport(
        e_pix=mean("e_pix"), e_cor=mean("e_cor"), e_3d_cor=mean("e_3d_cor"),
        unmatched_3d=int(sum(r.unmatched_3d for r in reports)),
        rms=mean("rms"), rel=mean("rel"), log10=mean("log10"),
        delta1=mean("delta1"), delta2=mean("delta2"), delta3=mean("delta3"))
