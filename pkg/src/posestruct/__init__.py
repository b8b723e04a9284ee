"""Skeleton structure constraints for 2D pose estimation."""

from .decode import (
    COCO_GROUPING_ORDER,
    Heatmap,
    KeypointCandidate,
    decode_argmax,
    decode_soft_argmax,
    decode_topn,
    group_by_tags,
)
from .loss import (
    HeatmapTarget,
    LossValue,
    combined_loss,
    constraint_loss,
    constraint_loss_grad_check,
    heatmap_mse,
    render_gaussian_target,
)
from .metrics import COCO_SIGMAS, EvalResult, evaluate, oks
from .refine import (
    PriorMode,
    RefineConfig,
    align_prior,
    fill_from_prior,
    refine_objective,
    refine_pose,
)
from .topology import (
    COCO_KEYPOINT_NAMES,
    EdgeWeights,
    Normalization,
    Pose,
    SkeletonTopology,
    Visibility,
    WeightScheme,
    build_coco_skeleton,
    canonical_pose,
    compute_average_pose,
    compute_edge_weights,
)

__version__ = "0.1.0"

__all__ = [
    "COCO_GROUPING_ORDER",
    "COCO_KEYPOINT_NAMES",
    "COCO_SIGMAS",
    "EdgeWeights",
    "EvalResult",
    "Heatmap",
    "HeatmapTarget",
    "KeypointCandidate",
    "LossValue",
    "Normalization",
    "Pose",
    "PriorMode",
    "RefineConfig",
    "SkeletonTopology",
    "Visibility",
    "WeightScheme",
    "align_prior",
    "build_coco_skeleton",
    "canonical_pose",
    "combined_loss",
    "compute_average_pose",
    "compute_edge_weights",
    "constraint_loss",
    "constraint_loss_grad_check",
    "decode_argmax",
    "decode_soft_argmax",
    "decode_topn",
    "evaluate",
    "fill_from_prior",
    "group_by_tags",
    "heatmap_mse",
    "oks",
    "refine_objective",
    "refine_pose",
    "render_gaussian_target",
]
