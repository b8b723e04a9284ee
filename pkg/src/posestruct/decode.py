"""Keypoint extraction from heatmaps.

Covers the single-person path (global argmax with quarter-pixel refinement),
the differentiable path (soft-argmax), and the multi-person bottom-up path
(per-channel Top-N peaks plus tag-based grouping into person instances).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import Pose, Visibility


@dataclass
class Heatmap:
    """K-channel scalar field stored as a (K, height, width) float32 array."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"heatmap data must be (K, height, width), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("heatmap values must be finite")
        self.data = data

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, width: int, height: int, num_channels: int) -> "Heatmap":
        return cls(np.zeros((num_channels, height, width), dtype=np.float32))


@dataclass
class KeypointCandidate:
    """One detected peak: keypoint type, sub-pixel position, score, identity tag."""

    keypoint_type: int
    position: tuple[float, float]
    score: float
    tag: float = 0.0


# Channel visiting order for grouping a 17-keypoint COCO pose: high-confidence
# torso anchors seed the groups, limbs extend them, the face joins last.
COCO_GROUPING_ORDER: tuple[int, ...] = (5, 6, 11, 12, 7, 8, 9, 10, 13, 14, 15, 16, 0, 1, 2, 3, 4)


def _quarter_offset(channel: np.ndarray, x: int, y: int) -> tuple[float, float]:
    """Shift 0.25 px toward the larger neighbor along each axis."""
    h, w = channel.shape
    dx = 0.0
    dy = 0.0
    if 0 < x < w - 1:
        right, left = channel[y, x + 1], channel[y, x - 1]
        if right > left:
            dx = 0.25
        elif left > right:
            dx = -0.25
    if 0 < y < h - 1:
        below, above = channel[y + 1, x], channel[y - 1, x]
        if below > above:
            dy = 0.25
        elif above > below:
            dy = -0.25
    return dx, dy


def decode_argmax(hm: Heatmap, subpixel: bool = True, score_floor: float = 0.0) -> Pose:
    """Per-channel global maximum, optionally with quarter-pixel refinement.

    A channel whose maximum is below ``score_floor`` (or not positive at all)
    yields a keypoint flagged ``LABELED_INVISIBLE``; its position is still the
    argmax cell so downstream code always sees finite coordinates.
    """
    k = hm.num_channels
    xy = np.zeros((k, 2), dtype=np.float64)
    vis = np.full(k, int(Visibility.LABELED_VISIBLE), dtype=np.int64)
    conf = np.zeros(k, dtype=np.float64)

    for ch in range(k):
        channel = hm.data[ch]
        flat = int(np.argmax(channel))
        y, x = divmod(flat, hm.width)
        peak = float(channel[y, x])
        px, py = float(x), float(y)
        if subpixel:
            dx, dy = _quarter_offset(channel, x, y)
            px += dx
            py += dy
        xy[ch] = (px, py)
        conf[ch] = min(max(peak, 0.0), 1.0)
        if peak < score_floor or peak <= 0.0:
            vis[ch] = Visibility.LABELED_INVISIBLE

    return Pose(xy, vis, conf)


def decode_soft_argmax(hm: Heatmap, temperature: float = 1.0) -> Pose:
    """Differentiable decoding: scores-weighted mean of cell coordinates.

    Each channel's non-negative values are raised to the power 1/temperature
    and normalized into weights, so a one-hot channel decodes to exactly its
    hot cell at any temperature and the temperature -> 0 limit recovers the
    argmax cell.  Cells with non-positive score get zero weight.  An all-zero
    channel decodes to the grid centroid with confidence 0.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")

    k = hm.num_channels
    ys, xs = np.mgrid[0 : hm.height, 0 : hm.width]
    xy = np.zeros((k, 2), dtype=np.float64)
    conf = np.zeros(k, dtype=np.float64)

    for ch in range(k):
        channel = hm.data[ch].astype(np.float64)
        positive = channel > 0.0
        if not positive.any():
            xy[ch] = ((hm.width - 1) / 2.0, (hm.height - 1) / 2.0)
            continue
        # power weighting computed in log space so tiny temperatures stay stable
        logw = np.full(channel.shape, -np.inf)
        logw[positive] = np.log(channel[positive]) / temperature
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        xy[ch] = (float((w * xs).sum()), float((w * ys).sum()))
        conf[ch] = min(max(float(channel.max()), 0.0), 1.0)

    return Pose(xy, np.full(k, int(Visibility.LABELED_VISIBLE)), conf)


def decode_topn(
    hm: Heatmap,
    n: int,
    nms_radius: int = 2,
    score_floor: float = 0.0,
    tags: Heatmap | None = None,
) -> list[list[KeypointCandidate]]:
    """Up to ``n`` peaks per channel, greedily NMS-suppressed.

    Cells are visited in descending score (ties: row-major order); a cell is
    kept unless it lies within ``nms_radius`` (Chebyshev distance) of an
    already kept, higher-scoring cell.  Cells scoring below ``score_floor``
    are dropped, so fewer than ``n`` candidates may come back.  When ``tags``
    is given, every candidate carries the tag value at its cell.

    Returns one candidate list per channel, each sorted by descending score.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if nms_radius < 0:
        raise ValueError("nms_radius must be non-negative")
    if tags is not None and tags.data.shape != hm.data.shape:
        raise ValueError("tag map shape must match the heatmap shape")

    out: list[list[KeypointCandidate]] = []
    for ch in range(hm.num_channels):
        channel = hm.data[ch]
        order = np.argsort(-channel, axis=None, kind="stable")
        kept: list[tuple[int, int]] = []
        cands: list[KeypointCandidate] = []
        for flat in order:
            score = float(channel.flat[flat])
            if score < score_floor:
                break
            y, x = divmod(int(flat), hm.width)
            if any(max(abs(x - kx), abs(y - ky)) <= nms_radius for kx, ky in kept):
                continue
            tag = float(tags.data[ch, y, x]) if tags is not None else 0.0
            cands.append(KeypointCandidate(ch, (float(x), float(y)), score, tag))
            kept.append((x, y))
            if len(cands) == n:
                break
        out.append(cands)
    return out


@dataclass
class _Group:
    members: dict[int, KeypointCandidate] = field(default_factory=dict)
    tag_sum: float = 0.0

    @property
    def mean_tag(self) -> float:
        return self.tag_sum / len(self.members)

    def add(self, cand: KeypointCandidate) -> None:
        self.members[cand.keypoint_type] = cand
        self.tag_sum += cand.tag


def group_by_tags(
    candidates: list[list[KeypointCandidate]],
    tag_threshold: float = 1.0,
    num_keypoints: int | None = None,
    order: tuple[int, ...] | None = None,
) -> list[Pose]:
    """Greedy identity grouping of per-channel candidates by tag similarity.

    Channels are visited in a fixed order (torso first for the 17-keypoint
    layout); within a channel candidates go by descending score.  A candidate
    joins the group with the nearest mean tag among groups still missing its
    keypoint type, provided the distance is below ``tag_threshold``; otherwise
    it founds a new group.  Equidistant groups resolve to the earliest founded.

    Returns one Pose per group (founding order); keypoint types a group never
    received are flagged ``NOT_LABELED`` at (0, 0) with confidence 0.
    """
    k = num_keypoints if num_keypoints is not None else len(candidates)
    if order is None:
        order = COCO_GROUPING_ORDER if k == 17 else tuple(range(k))

    groups: list[_Group] = []
    for ch in order:
        for cand in sorted(candidates[ch], key=lambda c: -c.score):
            eligible = [
                (abs(cand.tag - g.mean_tag), gi)
                for gi, g in enumerate(groups)
                if ch not in g.members
            ]
            eligible.sort()
            if eligible and eligible[0][0] < tag_threshold:
                groups[eligible[0][1]].add(cand)
            else:
                fresh = _Group()
                fresh.add(cand)
                groups.append(fresh)

    poses: list[Pose] = []
    for g in groups:
        xy = np.zeros((k, 2), dtype=np.float64)
        vis = np.full(k, int(Visibility.NOT_LABELED), dtype=np.int64)
        conf = np.zeros(k, dtype=np.float64)
        for ch, cand in g.members.items():
            xy[ch] = cand.position
            vis[ch] = Visibility.LABELED_VISIBLE
            conf[ch] = min(max(cand.score, 0.0), 1.0)
        poses.append(Pose(xy, vis, conf))
    return poses
