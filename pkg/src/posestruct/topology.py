"""Skeleton graph definitions, pose containers, and edge-weight schemes.

The skeleton is an undirected graph over keypoints.  Edge weights scale the
per-edge length penalty of the structure loss; they are derived from the
edge lengths of an average pose so that long bones (thigh, upper arm) can
count for more than short facial links.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Visibility(enum.IntEnum):
    """COCO-style keypoint visibility flags."""

    NOT_LABELED = 0
    LABELED_INVISIBLE = 1
    LABELED_VISIBLE = 2


class WeightScheme(enum.Enum):
    """How per-edge lambdas are derived from average-pose edge lengths."""

    UNIFORM = "uniform"
    INVERSE_LENGTH = "inverse_length"
    PROPORTIONAL_LENGTH = "proportional_length"


class Normalization(enum.Enum):
    """Per-instance normalization applied before averaging poses."""

    NONE = "none"
    HIP_TORSO = "hip_torso"


@dataclass
class Pose:
    """A single person's keypoints in pixel coordinates.

    Attributes:
        keypoints: (K, 2) array of (x, y) coordinates.
        visibility: (K,) array of ``Visibility`` flags.  Defaults to all
            ``LABELED_VISIBLE``.
        confidence: (K,) array of scores in [0, 1].  Defaults to 1 for
            labeled keypoints and 0 for unlabeled ones.
    """

    keypoints: np.ndarray
    visibility: np.ndarray | None = None
    confidence: np.ndarray | None = None

    def __post_init__(self) -> None:
        kp = np.array(self.keypoints, dtype=np.float64)
        if kp.ndim != 2 or kp.shape[1] != 2:
            raise ValueError(f"keypoints must have shape (K, 2), got {kp.shape}")
        self.keypoints = kp
        k = kp.shape[0]

        if self.visibility is None:
            vis = np.full(k, int(Visibility.LABELED_VISIBLE), dtype=np.int64)
        else:
            vis = np.array(self.visibility, dtype=np.int64)
        if vis.shape != (k,):
            raise ValueError(f"visibility must have shape ({k},), got {vis.shape}")
        if not np.all(np.isin(vis, [0, 1, 2])):
            raise ValueError("visibility flags must be 0, 1 or 2")
        self.visibility = vis

        if self.confidence is None:
            conf = np.where(vis != Visibility.NOT_LABELED, 1.0, 0.0)
        else:
            conf = np.array(self.confidence, dtype=np.float64)
        if conf.shape != (k,):
            raise ValueError(f"confidence must have shape ({k},), got {conf.shape}")
        if np.any(conf < 0.0) or np.any(conf > 1.0) or not np.all(np.isfinite(conf)):
            raise ValueError("confidence values must lie in [0, 1]")
        self.confidence = conf

        labeled = vis != Visibility.NOT_LABELED
        if not np.all(np.isfinite(kp[labeled])):
            raise ValueError("labeled keypoints must have finite coordinates")

    @property
    def num_keypoints(self) -> int:
        return self.keypoints.shape[0]

    @property
    def labeled_mask(self) -> np.ndarray:
        """Boolean mask of keypoints that carry a label (visible or not)."""
        return self.visibility != Visibility.NOT_LABELED

    def is_fully_labeled(self) -> bool:
        return bool(np.all(self.labeled_mask))


@dataclass(frozen=True)
class SkeletonTopology:
    """Undirected keypoint graph with left/right mirror structure.

    ``symmetric_pairs`` holds index pairs *into the edge list* that mirror
    each other (e.g. left and right forearm).  Edges whose mirror image is
    themselves (eye-eye, shoulder-shoulder, hip-hip) appear in no pair.
    """

    keypoint_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    symmetric_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        k = len(self.keypoint_names)
        seen: set[frozenset[int]] = set()
        for a, b in self.edges:
            if not (0 <= a < k and 0 <= b < k):
                raise ValueError(f"edge ({a}, {b}) references a keypoint outside [0, {k})")
            if a == b:
                raise ValueError(f"self-loop edge ({a}, {b}) is not allowed")
            key = frozenset((a, b))
            if key in seen:
                raise ValueError(f"duplicate edge ({a}, {b})")
            seen.add(key)

        e = len(self.edges)
        used: set[int] = set()
        for i, j in self.symmetric_pairs:
            if not (0 <= i < e and 0 <= j < e):
                raise ValueError(f"symmetric pair ({i}, {j}) references a missing edge")
            if i == j:
                raise ValueError(f"symmetric pair ({i}, {j}) must name two distinct edges")
            if i in used or j in used:
                raise ValueError(f"edge in pair ({i}, {j}) already belongs to another pair")
            used.update((i, j))

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoint_names)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def index(self, name: str) -> int:
        try:
            return self.keypoint_names.index(name)
        except ValueError:
            raise ValueError(f"unknown keypoint {name!r}; known: {list(self.keypoint_names)}") from None

    def edge_array(self) -> np.ndarray:
        """Edges as an (E, 2) int array."""
        return np.asarray(self.edges, dtype=np.int64)

    def edge_vectors(self, pose: Pose) -> np.ndarray:
        """(E, 2) array of keypoint[k1] - keypoint[k2] per edge."""
        e = self.edge_array()
        return pose.keypoints[e[:, 0]] - pose.keypoints[e[:, 1]]

    def edge_lengths(self, pose: Pose) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors(pose), axis=1)

    def mirror_classes(self) -> list[tuple[int, ...]]:
        """Edge-index groups sharing one weight: pairs first, then singletons."""
        classes: list[tuple[int, ...]] = [tuple(p) for p in self.symmetric_pairs]
        paired = {i for p in self.symmetric_pairs for i in p}
        classes.extend((i,) for i in range(self.num_edges) if i not in paired)
        return classes

    def edge_name(self, edge_index: int) -> str:
        a, b = self.edges[edge_index]
        return f"{self.keypoint_names[a]}-{self.keypoint_names[b]}"


@dataclass
class EdgeWeights:
    """Per-edge lambdas under a given scheme."""

    scheme: WeightScheme
    lambdas: np.ndarray

    def __post_init__(self) -> None:
        lam = np.array(self.lambdas, dtype=np.float64)
        if lam.ndim != 1:
            raise ValueError("lambdas must be a 1-D array")
        if np.any(lam < 0.0) or not np.all(np.isfinite(lam)):
            raise ValueError("lambdas must be finite and non-negative")
        self.lambdas = lam

    @property
    def num_edges(self) -> int:
        return self.lambdas.shape[0]


COCO_KEYPOINT_NAMES: tuple[str, ...] = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

# 19 connections of the COCO person category, 0-based.
_COCO_EDGES: tuple[tuple[int, int], ...] = (
    (15, 13),  # 0  left ankle  - left knee
    (13, 11),  # 1  left knee   - left hip
    (16, 14),  # 2  right ankle - right knee
    (14, 12),  # 3  right knee  - right hip
    (11, 12),  # 4  hip - hip
    (5, 11),   # 5  left shoulder  - left hip
    (6, 12),   # 6  right shoulder - right hip
    (5, 6),    # 7  shoulder - shoulder
    (5, 7),    # 8  left shoulder  - left elbow
    (6, 8),    # 9  right shoulder - right elbow
    (7, 9),    # 10 left elbow  - left wrist
    (8, 10),   # 11 right elbow - right wrist
    (1, 2),    # 12 eye - eye
    (0, 1),    # 13 nose - left eye
    (0, 2),    # 14 nose - right eye
    (1, 3),    # 15 left eye  - left ear
    (2, 4),    # 16 right eye - right ear
    (3, 5),    # 17 left ear  - left shoulder
    (4, 6),    # 18 right ear - right shoulder
)

_COCO_SYMMETRIC_PAIRS: tuple[tuple[int, int], ...] = (
    (0, 2),    # ankle-knee
    (1, 3),    # knee-hip
    (5, 6),    # shoulder-hip
    (8, 9),    # shoulder-elbow
    (10, 11),  # elbow-wrist
    (13, 14),  # nose-eye
    (15, 16),  # eye-ear
    (17, 18),  # ear-shoulder
)

LEFT_HIP, RIGHT_HIP = 11, 12
LEFT_SHOULDER, RIGHT_SHOULDER = 5, 6


def build_coco_skeleton() -> SkeletonTopology:
    """The canonical 17-keypoint, 19-edge COCO person skeleton."""
    return SkeletonTopology(
        keypoint_names=COCO_KEYPOINT_NAMES,
        edges=_COCO_EDGES,
        symmetric_pairs=_COCO_SYMMETRIC_PAIRS,
    )


# Hand-authored upright figure used by the synthetic experiment and as a
# refinement prior when no dataset average is available.  Hip midpoint at the
# origin, torso (shoulder midpoint to hip midpoint) of length 1, y grows
# downward as in image coordinates.
_CANONICAL_XY: tuple[tuple[float, float], ...] = (
    (0.000, -1.35),   # nose
    (0.065, -1.42),   # left_eye
    (-0.065, -1.42),  # right_eye
    (0.200, -1.38),   # left_ear
    (-0.200, -1.38),  # right_ear
    (0.320, -1.00),   # left_shoulder
    (-0.320, -1.00),  # right_shoulder
    (0.520, -0.55),   # left_elbow
    (-0.520, -0.55),  # right_elbow
    (0.600, -0.10),   # left_wrist
    (-0.600, -0.10),  # right_wrist
    (0.160, 0.00),    # left_hip
    (-0.160, 0.00),   # right_hip
    (0.200, 0.75),    # left_knee
    (-0.200, 0.75),   # right_knee
    (0.220, 1.45),    # left_ankle
    (-0.220, 1.45),   # right_ankle
)


def canonical_pose() -> Pose:
    """A synthetic upright average-like pose, torso length 1, hips at origin."""
    return Pose(np.array(_CANONICAL_XY, dtype=np.float64))


def _normalize_instance(
    kp: np.ndarray,
    normalization: Normalization,
    hip_indices: tuple[int, int],
    shoulder_indices: tuple[int, int],
) -> np.ndarray | None:
    if normalization is Normalization.NONE:
        return kp
    hip_mid = 0.5 * (kp[hip_indices[0]] + kp[hip_indices[1]])
    shoulder_mid = 0.5 * (kp[shoulder_indices[0]] + kp[shoulder_indices[1]])
    torso = float(np.linalg.norm(shoulder_mid - hip_mid))
    if torso <= 0.0:
        return None
    return (kp - hip_mid) / torso


def compute_average_pose(
    annotations: Sequence[Pose],
    normalization: Normalization = Normalization.HIP_TORSO,
    *,
    hip_indices: tuple[int, int] = (LEFT_HIP, RIGHT_HIP),
    shoulder_indices: tuple[int, int] = (LEFT_SHOULDER, RIGHT_SHOULDER),
) -> Pose:
    """Mean pose over fully labeled instances after per-instance normalization.

    With ``HIP_TORSO`` each instance is translated so its hip midpoint sits at
    the origin and scaled so its torso length is 1 before averaging; instances
    with a degenerate (zero-length) torso are excluded.  Only instances with
    every keypoint labeled contribute.

    Raises:
        ValueError: empty input, or no usable fully-labeled instance.
    """
    if len(annotations) == 0:
        raise ValueError("cannot average an empty annotation list")

    stacks: list[np.ndarray] = []
    k = annotations[0].num_keypoints
    for pose in annotations:
        if pose.num_keypoints != k:
            raise ValueError("all poses must have the same keypoint count")
        if not pose.is_fully_labeled():
            continue
        norm = _normalize_instance(pose.keypoints, normalization, hip_indices, shoulder_indices)
        if norm is not None:
            stacks.append(norm)
    if not stacks:
        raise ValueError("no fully-labeled instance available to average")

    mean = np.mean(np.stack(stacks, axis=0), axis=0)
    return Pose(mean)


def compute_edge_weights(
    avg_pose: Pose,
    topology: SkeletonTopology,
    scheme: WeightScheme,
    *,
    symmetric_average: bool = True,
) -> EdgeWeights:
    """Per-edge lambdas from the average pose's edge lengths.

    uniform:              lambda = 1
    inverse_length:       lambda = 1 - |e| / max|e|
    proportional_length:  lambda = |e| / max|e|

    Mirror-image edge pairs are then replaced by their pair mean unless
    ``symmetric_average`` is disabled.

    Raises:
        ValueError: avg_pose not fully labeled, or a zero-length edge makes
            the length ratio undefined.
    """
    if avg_pose.num_keypoints != topology.num_keypoints:
        raise ValueError(
            f"average pose has {avg_pose.num_keypoints} keypoints, "
            f"topology expects {topology.num_keypoints}"
        )
    if not avg_pose.is_fully_labeled():
        raise ValueError("average pose must have every keypoint labeled")

    lengths = topology.edge_lengths(avg_pose)
    if np.any(lengths == 0.0):
        bad = int(np.argmax(lengths == 0.0))
        raise ValueError(f"zero-length edge {topology.edge_name(bad)} in average pose")

    if scheme is WeightScheme.UNIFORM:
        lam = np.ones_like(lengths)
    elif scheme is WeightScheme.INVERSE_LENGTH:
        lam = 1.0 - lengths / lengths.max()
    elif scheme is WeightScheme.PROPORTIONAL_LENGTH:
        lam = lengths / lengths.max()
    else:
        raise ValueError(f"unknown weight scheme {scheme!r}")

    if symmetric_average:
        for i, j in topology.symmetric_pairs:
            mean = 0.5 * (lam[i] + lam[j])
            lam[i] = mean
            lam[j] = mean

    return EdgeWeights(scheme=scheme, lambdas=lam)
