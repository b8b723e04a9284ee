"""File formats: COCO annotations, results JSON, heatmap binary, weights text.

Loaders reject malformed input instead of coercing it, and every error names
the offending record.  All round-trips are bit-exact: JSON floats use
Python's shortest round-trip repr, heatmaps are raw little-endian float32.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .decode import Heatmap
from .topology import EdgeWeights, Pose, SkeletonTopology, WeightScheme


class AnnotationError(ValueError):
    """Malformed annotation input."""


class ResultsError(ValueError):
    """Malformed results JSON."""


class WeightsFormatError(ValueError):
    """Malformed weights text file."""


class HeatmapIOError(IOError):
    """Malformed heatmap file."""


class BadMagicError(HeatmapIOError):
    pass


class BadVersionError(HeatmapIOError):
    pass


class TruncatedFileError(HeatmapIOError):
    pass


class ImageInfo(NamedTuple):
    image_id: int
    width: int
    height: int


class Instance(NamedTuple):
    image_id: int
    pose: Pose
    area: float
    bbox: tuple[float, float, float, float] | None


@dataclass
class AnnotationSet:
    images: list[ImageInfo]
    instances: list[Instance]


def load_coco_annotations(path: str | Path) -> AnnotationSet:
    """Parse a COCO keypoint annotation file, keeping person instances only.

    Keypoint triples (x, y, v) use v in {0: not labeled, 1: labeled but
    invisible, 2: labeled and visible}.  Instance order is preserved.

    Raises:
        AnnotationError: malformed JSON (reported with its byte offset), a
            missing section, a keypoints array of the wrong length, an
            unknown visibility flag, or an instance pointing at a missing
            image; each error names the offending record.
    """
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise AnnotationError(
            f"{path.name}: malformed JSON at byte offset {exc.pos}: {exc.msg}"
        ) from exc

    for section in ("images", "annotations", "categories"):
        if section not in data or not isinstance(data[section], list):
            raise AnnotationError(f"{path.name}: missing '{section}' array")

    person_ids = set()
    num_keypoints = 17
    for cat in data["categories"]:
        if cat.get("name") == "person":
            person_ids.add(cat["id"])
            if isinstance(cat.get("keypoints"), list) and cat["keypoints"]:
                num_keypoints = len(cat["keypoints"])
    if not person_ids:
        raise AnnotationError(f"{path.name}: no 'person' category")

    images: list[ImageInfo] = []
    known_images = set()
    for img in data["images"]:
        try:
            info = ImageInfo(img["id"], int(img["width"]), int(img["height"]))
        except (KeyError, TypeError) as exc:
            raise AnnotationError(
                f"{path.name}: image record {img.get('id', '?')} lacks id/width/height"
            ) from exc
        images.append(info)
        known_images.add(info.image_id)

    instances: list[Instance] = []
    for ann in data["annotations"]:
        if ann.get("category_id") not in person_ids:
            continue
        ann_id = ann.get("id", "?")
        kps = ann.get("keypoints")
        if not isinstance(kps, list) or len(kps) != 3 * num_keypoints:
            raise AnnotationError(
                f"annotation {ann_id}: keypoints array must have length "
                f"{3 * num_keypoints}, got {0 if not isinstance(kps, list) else len(kps)}"
            )
        image_id = ann.get("image_id")
        if image_id not in known_images:
            raise AnnotationError(f"annotation {ann_id}: unknown image_id {image_id!r}")

        triples = np.asarray(kps, dtype=np.float64).reshape(num_keypoints, 3)
        flags = triples[:, 2]
        if not np.all(np.isin(flags, [0.0, 1.0, 2.0])):
            raise AnnotationError(
                f"annotation {ann_id}: visibility flags must be 0, 1 or 2"
            )
        pose = Pose(triples[:, :2], flags.astype(np.int64))

        if "area" in ann:
            area = float(ann["area"])
        elif "bbox" in ann and len(ann["bbox"]) == 4:
            area = float(ann["bbox"][2]) * float(ann["bbox"][3])
        else:
            raise AnnotationError(f"annotation {ann_id}: neither area nor bbox present")
        bbox = tuple(float(v) for v in ann["bbox"]) if "bbox" in ann else None
        instances.append(Instance(image_id, pose, area, bbox))

    return AnnotationSet(images=images, instances=instances)


def save_results(
    path: str | Path,
    results: Sequence[tuple[object, Pose, float]],
    category_id: int = 1,
) -> None:
    """Write (image_id, pose, score) triples as COCO-style results JSON.

    The flat keypoints array carries (x, y, confidence) per keypoint at full
    precision, so coordinates round-trip bit-exact through ``load_results``.
    """
    entries = []
    for image_id, pose, score in results:
        flat: list[float] = []
        for i in range(pose.num_keypoints):
            flat.extend(
                (float(pose.keypoints[i, 0]), float(pose.keypoints[i, 1]),
                 float(pose.confidence[i]))
            )
        entries.append(
            {
                "image_id": image_id,
                "category_id": category_id,
                "keypoints": flat,
                "score": float(score),
            }
        )
    with open(path, "w") as f:
        json.dump(entries, f)


def load_results(path: str | Path) -> list[tuple[object, Pose, float]]:
    """Read COCO-style results JSON back into (image_id, pose, score) triples.

    The third keypoint slot is stored as per-keypoint confidence (clipped to
    [0, 1] for foreign files carrying visibility flags there); every loaded
    keypoint is flagged visible.

    Raises:
        ResultsError: not a JSON array, bad keypoint array length, or mixed
            category ids.
    """
    path = Path(path)
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ResultsError(
                f"{path.name}: malformed JSON at byte offset {exc.pos}: {exc.msg}"
            ) from exc
    if not isinstance(data, list):
        raise ResultsError(f"{path.name}: expected a JSON array of results")

    seen_categories = set()
    out: list[tuple[object, Pose, float]] = []
    for idx, entry in enumerate(data):
        try:
            kps = entry["keypoints"]
            score = float(entry["score"])
            seen_categories.add(entry["category_id"])
            image_id = entry["image_id"]
        except (KeyError, TypeError) as exc:
            raise ResultsError(f"result {idx}: missing field ({exc})") from exc
        if len(kps) % 3 != 0 or not kps:
            raise ResultsError(f"result {idx}: keypoints length {len(kps)} not a multiple of 3")
        triples = np.asarray(kps, dtype=np.float64).reshape(-1, 3)
        conf = np.clip(triples[:, 2], 0.0, 1.0)
        out.append((image_id, Pose(triples[:, :2], None, conf), score))
    if len(seen_categories) > 1:
        raise ResultsError(f"mixed category ids in results: {sorted(seen_categories)}")
    return out


_HEATMAP_MAGIC = b"SKHM"
_HEATMAP_VERSION = 1
_HEADER = struct.Struct("<4sHIII")  # magic, version u16, then w, h, K as u32


def write_heatmap(path: str | Path, hm: Heatmap) -> None:
    """Binary heatmap file: "SKHM", version 1, w/h/K, little-endian float32
    cells in channel-major, row-major order."""
    header = _HEADER.pack(
        _HEATMAP_MAGIC, _HEATMAP_VERSION, hm.width, hm.height, hm.num_channels
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(hm.data, dtype="<f4").tobytes())


def read_heatmap(path: str | Path) -> Heatmap:
    """Read an "SKHM" heatmap file written by :func:`write_heatmap`.

    Raises:
        BadMagicError / BadVersionError / TruncatedFileError: wrong magic
            bytes, unsupported version, or fewer bytes than the header
            promises.  Trailing bytes raise the base ``HeatmapIOError``.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != _HEATMAP_MAGIC:
        if len(blob) >= 4:
            raise BadMagicError(f"{path.name}: bad magic {blob[:4]!r}")
        raise TruncatedFileError(f"{path.name}: {len(blob)} bytes is too short for a header")
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path.name}: truncated header ({len(blob)} bytes)")
    _, version, width, height, channels = _HEADER.unpack_from(blob)
    if version != _HEATMAP_VERSION:
        raise BadVersionError(f"{path.name}: unsupported version {version}")
    expected = width * height * channels * 4
    payload = blob[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path.name}: expected {expected} data bytes, found {len(payload)}"
        )
    if len(payload) > expected:
        raise HeatmapIOError(f"{path.name}: {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype="<f4").reshape(channels, height, width)
    return Heatmap(data.copy())


def save_weights(
    path: str | Path, topology: SkeletonTopology, weights: EdgeWeights
) -> None:
    """Human-readable key-value text holding the skeleton and its lambdas.

    Floats are written with Python's shortest round-trip repr (full float64
    precision)."""
    if weights.num_edges != topology.num_edges:
        raise ValueError("weight count does not match the topology")
    lines = [
        "posestruct-weights 1",
        f"scheme {weights.scheme.value}",
        f"keypoints {topology.num_keypoints}",
    ]
    lines += [f"keypoint {i} {name}" for i, name in enumerate(topology.keypoint_names)]
    lines.append(f"edges {topology.num_edges}")
    lines += [f"edge {i} {a} {b}" for i, (a, b) in enumerate(topology.edges)]
    lines.append(f"symmetric_pairs {len(topology.symmetric_pairs)}")
    lines += [f"pair {i} {j}" for i, j in topology.symmetric_pairs]
    lines += [f"lambda {i} {float(v)!r}" for i, v in enumerate(weights.lambdas)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_weights(path: str | Path) -> tuple[SkeletonTopology, EdgeWeights]:
    """Read a weights text file back into a topology and its edge weights."""
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("posestruct-weights"):
        raise WeightsFormatError(f"{path.name}: missing format header")

    scheme: WeightScheme | None = None
    names: dict[int, str] = {}
    edges: dict[int, tuple[int, int]] = {}
    pairs: list[tuple[int, int]] = []
    lambdas: dict[int, float] = {}
    for ln in lines[1:]:
        parts = ln.split()
        key = parts[0]
        try:
            if key == "scheme":
                scheme = WeightScheme(parts[1])
            elif key == "keypoint":
                names[int(parts[1])] = parts[2]
            elif key == "edge":
                edges[int(parts[1])] = (int(parts[2]), int(parts[3]))
            elif key == "pair":
                pairs.append((int(parts[1]), int(parts[2])))
            elif key == "lambda":
                lambdas[int(parts[1])] = float(parts[2])
            elif key in ("keypoints", "edges", "symmetric_pairs"):
                continue
            else:
                raise WeightsFormatError(f"{path.name}: unknown key {key!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, WeightsFormatError):
                raise
            raise WeightsFormatError(f"{path.name}: bad line {ln!r}") from exc

    if scheme is None or not names or not edges or len(lambdas) != len(edges):
        raise WeightsFormatError(f"{path.name}: incomplete weights file")
    topology = SkeletonTopology(
        keypoint_names=tuple(names[i] for i in range(len(names))),
        edges=tuple(edges[i] for i in range(len(edges))),
        symmetric_pairs=tuple(pairs),
    )
    weights = EdgeWeights(
        scheme=scheme,
        lambdas=np.array([lambdas[i] for i in range(len(lambdas))]),
    )
    return topology, weights
