"""Structure constraint loss, Gaussian targets, and the combined objective.

The constraint loss compares predicted and ground-truth skeleton edges: a
weighted squared difference of the edge vectors (the length term) plus one
minus the cosine of the angle between them (the angle term), summed over
every edge whose ground-truth endpoints are both labeled.  The analytic
gradient with respect to the predicted coordinates is returned alongside.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decode import Heatmap
from .topology import EdgeWeights, Pose, SkeletonTopology, Visibility

# Edges shorter than this (in px) have an undefined angle; their angle term
# is defined as 0 (cos := 1) and contributes no gradient.
DEGENERATE_EDGE_EPS = 1e-6


@dataclass
class LossValue:
    """Loss breakdown plus gradient w.r.t. the predicted coordinates."""

    total: float
    length_term: float
    angle_term: float
    grad: np.ndarray  # (K, 2)


@dataclass
class HeatmapTarget:
    """Rendered Gaussian training target: (K, height, width) values in [0, 1].

    ``off_grid`` lists keypoint indices whose center fell outside the grid;
    their channels are still rendered (values stay valid), this is a warning.
    """

    data: np.ndarray
    sigma: float
    off_grid: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)


def constraint_loss(
    pred: Pose,
    gt: Pose,
    weights: EdgeWeights,
    topology: SkeletonTopology,
    *,
    use_length: bool = True,
    use_angle: bool = True,
) -> LossValue:
    """Edge-wise structure loss between a predicted and a ground-truth pose.

    Per active edge (both ground-truth endpoints labeled)::

        lambda * ||e_pred - e_gt||^2  +  (1 - cos(e_pred, e_gt))

    The lambda weight scales only the squared-difference term.  Either term
    can be switched off to reproduce the single-constraint ablations.

    Raises:
        ValueError: weight count does not match the topology's edge count,
            or predicted coordinates are not finite.
    """
    if weights.num_edges != topology.num_edges:
        raise ValueError(
            f"{weights.num_edges} weights for {topology.num_edges} edges"
        )
    if not np.all(np.isfinite(pred.keypoints)):
        raise ValueError("predicted coordinates must be finite")

    edges = topology.edge_array()
    k1, k2 = edges[:, 0], edges[:, 1]
    labeled = gt.visibility != Visibility.NOT_LABELED
    active = labeled[k1] & labeled[k2]

    eh = pred.keypoints[k1] - pred.keypoints[k2]  # predicted edge vectors
    ev = gt.keypoints[k1] - gt.keypoints[k2]      # ground-truth edge vectors
    grad = np.zeros_like(pred.keypoints)

    length_term = 0.0
    if use_length:
        diff = eh - ev
        per_edge = weights.lambdas * np.einsum("ij,ij->i", diff, diff)
        length_term = float(per_edge[active].sum())
        g = (2.0 * weights.lambdas * active)[:, None] * diff
        np.add.at(grad, k1, g)
        np.subtract.at(grad, k2, g)

    angle_term = 0.0
    if use_angle:
        neh = np.linalg.norm(eh, axis=1)
        nev = np.linalg.norm(ev, axis=1)
        ok = active & (neh >= DEGENERATE_EDGE_EPS) & (nev >= DEGENERATE_EDGE_EPS)
        safe_neh = np.where(ok, neh, 1.0)
        safe_nev = np.where(ok, nev, 1.0)
        u = eh / safe_neh[:, None]
        v = ev / safe_nev[:, None]
        # 1 - cos written as |v - u|^2 / 2 so identical edge directions give
        # exactly zero and rounding can never push a term negative
        d = v - u
        angle_term = float(
            (0.5 * np.einsum("ij,ij->i", d, d) * ok).sum()
        )
        # d(1 - cos)/d(e_pred) = (cos * u - v) / |e_pred|, expressed through
        # d so the gradient vanishes exactly when the directions coincide
        ud = np.einsum("ij,ij->i", u, d)
        g = (ud[:, None] * u - d) / safe_neh[:, None]
        g *= ok[:, None]
        np.add.at(grad, k1, g)
        np.subtract.at(grad, k2, g)

    return LossValue(
        total=length_term + angle_term,
        length_term=length_term,
        angle_term=angle_term,
        grad=grad,
    )


def constraint_loss_grad_check(
    pred: Pose,
    gt: Pose,
    weights: EdgeWeights,
    topology: SkeletonTopology,
    h: float = 1e-5,
    *,
    use_length: bool = True,
    use_angle: bool = True,
) -> float:
    """Max deviation of the analytic gradient from central finite differences.

    Returns the maximum relative error over all predicted coordinates; where
    the analytic gradient magnitude falls below 1e-8 the absolute error is
    used instead.
    """
    if h <= 0.0:
        raise ValueError("step h must be positive")

    analytic = constraint_loss(
        pred, gt, weights, topology, use_length=use_length, use_angle=use_angle
    ).grad

    worst = 0.0
    xy = pred.keypoints
    for i in range(pred.num_keypoints):
        for j in range(2):
            bumped = xy.copy()
            bumped[i, j] = xy[i, j] + h
            up = constraint_loss(
                Pose(bumped, pred.visibility, pred.confidence),
                gt, weights, topology,
                use_length=use_length, use_angle=use_angle,
            ).total
            bumped[i, j] = xy[i, j] - h
            down = constraint_loss(
                Pose(bumped, pred.visibility, pred.confidence),
                gt, weights, topology,
                use_length=use_length, use_angle=use_angle,
            ).total
            numeric = (up - down) / (2.0 * h)
            err = abs(numeric - analytic[i, j])
            if abs(analytic[i, j]) >= 1e-8:
                err /= abs(analytic[i, j])
            worst = max(worst, err)
    return worst


def render_gaussian_target(
    gt: Pose, width: int, height: int, sigma: float
) -> HeatmapTarget:
    """Unnormalized Gaussian per labeled keypoint; unlabeled channels stay zero.

    Channel k holds exp(-((x - x_k)^2 + (y - y_k)^2) / (2 sigma^2)).  Keypoints
    outside the grid are rendered anyway and reported via ``off_grid``.
    """
    if width < 1 or height < 1:
        raise ValueError("grid must be at least 1x1")
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")

    k = gt.num_keypoints
    data = np.zeros((k, height, width), dtype=np.float32)
    ys, xs = np.mgrid[0:height, 0:width]
    off_grid: list[int] = []
    for ch in range(k):
        if gt.visibility[ch] == Visibility.NOT_LABELED:
            continue
        x, y = gt.keypoints[ch]
        if not (0.0 <= x <= width - 1 and 0.0 <= y <= height - 1):
            off_grid.append(ch)
        d2 = (xs - x) ** 2 + (ys - y) ** 2
        data[ch] = np.exp(-d2 / (2.0 * sigma * sigma))
    return HeatmapTarget(data=data, sigma=sigma, off_grid=tuple(off_grid))


def heatmap_mse(pred: Heatmap, target: HeatmapTarget) -> float:
    """Mean squared difference over all width*height*K cells."""
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"shape mismatch: prediction {pred.data.shape} vs target {target.data.shape}"
        )
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    return float(np.mean(diff * diff))


def combined_loss(original: float, cst: float) -> float:
    """Sum of the base objective and the structure constraint, no extra scaling."""
    if not (np.isfinite(original) and np.isfinite(cst)):
        raise ValueError("loss terms must be finite")
    return float(original) + float(cst)
