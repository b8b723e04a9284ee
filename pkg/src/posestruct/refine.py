"""Constraint-guided pose refinement.

Starting from a decoded pose, gradient descent minimizes a data-fidelity
term (one minus the bilinearly interpolated heatmap evidence under each
joint) plus a weighted structure term that compares the pose's edges with
those of a scale-and-translation-aligned prior skeleton.  Step acceptance
uses backtracking halving, so the objective trace never increases.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .decode import Heatmap
from .loss import constraint_loss
from .topology import EdgeWeights, Pose, SkeletonTopology

# Alignment scales at or below this are treated as degenerate: the structure
# term is dropped for that evaluation instead of flipping the skeleton.
_MIN_ALIGN_SCALE = 1e-9

_MAX_HALVINGS = 20


class PriorMode(enum.Enum):
    AVERAGE_POSE_SCALED = "average_pose_scaled"
    NONE = "none"


@dataclass
class RefineConfig:
    """Gradient-descent settings for :func:`refine_pose`.

    ``confidence_floor`` selects the joints the prior is aligned to;
    ``use_length`` / ``use_angle`` toggle the two structure terms for
    ablation runs.
    """

    steps: int = 60
    step_size: float = 4.0
    structure_weight: float = 1.0
    prior: PriorMode = PriorMode.AVERAGE_POSE_SCALED
    convergence_tol: float = 1e-8
    confidence_floor: float = 0.5
    use_length: bool = True
    use_angle: bool = True

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.convergence_tol <= 0.0:
            raise ValueError("convergence_tol must be positive")
        if self.structure_weight < 0.0:
            raise ValueError("structure_weight must be non-negative")


def _bilinear(channel: np.ndarray, x: float, y: float) -> tuple[float, float, float]:
    """Interpolated value and gradient, clamped at the grid border.

    Outside the grid the value saturates to the border value and the
    corresponding gradient component is zero.
    """
    h, w = channel.shape
    inside_x = 0.0 <= x <= w - 1
    inside_y = 0.0 <= y <= h - 1
    cx = min(max(x, 0.0), float(w - 1))
    cy = min(max(y, 0.0), float(h - 1))

    if w == 1:
        x0, fx = 0, 0.0
    else:
        x0 = min(int(cx), w - 2)
        fx = cx - x0
    if h == 1:
        y0, fy = 0, 0.0
    else:
        y0 = min(int(cy), h - 2)
        fy = cy - y0

    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    v00 = float(channel[y0, x0])
    v10 = float(channel[y0, x1])
    v01 = float(channel[y1, x0])
    v11 = float(channel[y1, x1])

    value = (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11)
    gx = ((1 - fy) * (v10 - v00) + fy * (v11 - v01)) if inside_x else 0.0
    gy = ((1 - fx) * (v01 - v00) + fx * (v11 - v10)) if inside_y else 0.0
    return value, gx, gy


def align_prior(avg_pose: Pose, target: Pose, confidence_floor: float) -> Pose:
    """Least-squares scale + translation of the prior onto confident joints.

    No rotation is fitted.  The closed form minimizes
    sum_i || s * a_i + t - b_i ||^2 over the joints of ``target`` whose
    confidence reaches ``confidence_floor``.

    Raises:
        ValueError: fewer than two confident joints, or the selected prior
            joints are coincident so the scale is undetermined.
    """
    mask = target.confidence >= confidence_floor
    if int(mask.sum()) < 2:
        raise ValueError("prior alignment needs at least two confident joints")

    a = avg_pose.keypoints[mask]
    b = target.keypoints[mask]
    mean_a = a.mean(axis=0)
    mean_b = b.mean(axis=0)
    centered = a - mean_a
    denom = float((centered * centered).sum())
    if denom == 0.0:
        raise ValueError("prior joints are coincident; scale is undetermined")
    s = float((centered * (b - mean_b)).sum()) / denom
    t = mean_b - s * mean_a
    return Pose(s * avg_pose.keypoints + t)


def fill_from_prior(
    pose: Pose, avg_pose: Pose, confidence_floor: float = 0.5
) -> Pose:
    """Seed low-confidence joints at their aligned-prior positions.

    Gradient descent is local: a joint decoded at a garbage position (e.g. a
    zeroed channel decoding to the grid corner) makes the quadratic edge term
    dwarf the heatmap evidence and can capture the whole pose.  Replacing
    such joints with the aligned prior's estimate before refining keeps the
    descent in the right basin.  Visibility and confidence are preserved.

    Raises:
        ValueError: fewer than two joints reach ``confidence_floor``.
    """
    aligned = align_prior(avg_pose, pose, confidence_floor)
    xy = pose.keypoints.copy()
    low = pose.confidence < confidence_floor
    xy[low] = aligned.keypoints[low]
    return Pose(xy, pose.visibility, pose.confidence)


def refine_objective(
    xy: np.ndarray,
    hm: Heatmap,
    topology: SkeletonTopology,
    weights: EdgeWeights,
    cfg: RefineConfig,
    avg_pose: Pose | None = None,
    conf_mask: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Composite refinement objective and its gradient at coordinates ``xy``.

    data term      D  = sum_k (1 - evidence_k(xy_k))
    structure term L  = constraint_loss(xy, prior(xy)) where prior(xy) is the
                        average pose least-squares aligned (scale+translation)
                        to the confident joints of ``xy``

    Returns D + structure_weight * L and the full gradient, including the
    dependence of the aligned prior's scale on the confident joints.
    """
    k = topology.num_keypoints
    xy = np.asarray(xy, dtype=np.float64).reshape(k, 2)
    grad = np.zeros_like(xy)

    total = 0.0
    for ch in range(k):
        value, gx, gy = _bilinear(hm.data[ch], xy[ch, 0], xy[ch, 1])
        total += 1.0 - value
        grad[ch, 0] -= gx
        grad[ch, 1] -= gy

    w = cfg.structure_weight
    structure_on = (
        w > 0.0
        and cfg.prior is PriorMode.AVERAGE_POSE_SCALED
        and avg_pose is not None
        and conf_mask is not None
        and int(np.sum(conf_mask)) >= 2
    )
    if not structure_on:
        return total, grad

    a = avg_pose.keypoints
    a_conf = a[conf_mask]
    mean_a = a_conf.mean(axis=0)
    centered = a_conf - mean_a
    denom = float((centered * centered).sum())
    if denom == 0.0:
        return total, grad
    p_conf = xy[conf_mask]
    s = float((centered * (p_conf - p_conf.mean(axis=0))).sum()) / denom
    if s <= _MIN_ALIGN_SCALE:
        return total, grad

    t = p_conf.mean(axis=0) - s * mean_a
    prior = Pose(s * a + t)
    cst = constraint_loss(
        Pose(xy), prior, weights, topology,
        use_length=cfg.use_length, use_angle=cfg.use_angle,
    )
    total += w * cst.total
    grad += w * cst.grad

    # Chain term through the fitted scale: only the length part depends on s
    # (the angle between an edge and a positively scaled copy is constant).
    if cfg.use_length:
        edges = topology.edge_array()
        delta_a = a[edges[:, 0]] - a[edges[:, 1]]
        eh = xy[edges[:, 0]] - xy[edges[:, 1]]
        diff = eh - s * delta_a
        dl_ds = -2.0 * float(
            (weights.lambdas[:, None] * diff * delta_a).sum()
        )
        grad[conf_mask] += w * dl_ds * centered / denom

    return total, grad


def refine_pose(
    init: Pose,
    hm: Heatmap,
    topology: SkeletonTopology,
    weights: EdgeWeights,
    cfg: RefineConfig,
    avg_pose: Pose | None = None,
) -> tuple[Pose, list[float]]:
    """Gradient descent on the refinement objective, starting from ``init``.

    Each step tries ``cfg.step_size`` and halves it (at most 20 times) until
    the objective decreases; if no decrease can be found, or an accepted step
    improves by less than ``cfg.convergence_tol``, descent stops.  The
    returned trace of objective values is therefore monotone non-increasing.

    With ``structure_weight == 0`` the result depends only on the heatmap.
    When the prior is ``AVERAGE_POSE_SCALED`` but ``init`` has fewer than two
    joints at ``cfg.confidence_floor``, the prior falls back to ``NONE`` with
    a warning.

    Returns the refined pose (visibility and confidence carried over from
    ``init``) and the objective trace.
    """
    if cfg.structure_weight < 0.0:
        raise ValueError("structure_weight must be non-negative")
    if hm.num_channels != topology.num_keypoints:
        raise ValueError(
            f"heatmap has {hm.num_channels} channels, topology expects "
            f"{topology.num_keypoints}"
        )
    if not np.all(np.isfinite(init.keypoints)):
        raise ValueError("initial pose coordinates must be finite")

    conf_mask: np.ndarray | None = None
    if cfg.structure_weight > 0.0 and cfg.prior is PriorMode.AVERAGE_POSE_SCALED:
        if avg_pose is None:
            raise ValueError("prior AVERAGE_POSE_SCALED requires an average pose")
        mask = init.confidence >= cfg.confidence_floor
        if int(mask.sum()) < 2:
            warnings.warn(
                "fewer than two confident joints; refining without a structure prior",
                stacklevel=2,
            )
        else:
            conf_mask = mask

    xy = init.keypoints.copy()
    value, grad = refine_objective(xy, hm, topology, weights, cfg, avg_pose, conf_mask)
    trace = [value]

    for _ in range(cfg.steps):
        if not np.any(grad):
            break
        step = cfg.step_size
        accepted = None
        for _ in range(_MAX_HALVINGS + 1):
            candidate = xy - step * grad
            cand_value, cand_grad = refine_objective(
                candidate, hm, topology, weights, cfg, avg_pose, conf_mask
            )
            if cand_value < value:
                accepted = (candidate, cand_value, cand_grad)
                break
            step *= 0.5
        if accepted is None:
            break
        xy, new_value, grad = accepted
        improvement = value - new_value
        value = new_value
        trace.append(value)
        if improvement < cfg.convergence_tol:
            break

    return Pose(xy, init.visibility, init.confidence), trace
