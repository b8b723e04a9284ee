import json

import numpy as np
import pytest

from posestruct.topology import (
    Pose,
    WeightScheme,
    build_coco_skeleton,
    canonical_pose,
    compute_edge_weights,
)


@pytest.fixture(scope="session")
def topology():
    return build_coco_skeleton()


@pytest.fixture(scope="session")
def proportional_weights(topology):
    return compute_edge_weights(canonical_pose(), topology, WeightScheme.PROPORTIONAL_LENGTH)


def random_pose(rng, k=17, low=0.0, high=100.0):
    return Pose(rng.uniform(low, high, size=(k, 2)))


def synthetic_annotations(rng, count=25, image_id=1):
    """COCO-format annotation dict built from jittered canonical figures."""
    base = canonical_pose().keypoints
    annotations = []
    for i in range(count):
        torso = rng.uniform(40.0, 80.0)
        offset = rng.uniform(100.0, 400.0, size=2)
        kp = base * torso + offset
        flat = [float(v) for xy in kp for v in (xy[0], xy[1], 2.0)]
        annotations.append(
            {
                "id": i + 1,
                "image_id": image_id,
                "category_id": 1,
                "area": float(np.ptp(kp[:, 0]) * np.ptp(kp[:, 1])),
                "bbox": [
                    float(kp[:, 0].min()),
                    float(kp[:, 1].min()),
                    float(np.ptp(kp[:, 0])),
                    float(np.ptp(kp[:, 1])),
                ],
                "keypoints": flat,
            }
        )
    return {
        "images": [{"id": image_id, "width": 640, "height": 640}],
        "annotations": annotations,
        "categories": [
            {
                "id": 1,
                "name": "person",
                "keypoints": [f"kp{i}" for i in range(17)],
            }
        ],
    }


@pytest.fixture
def annotations_file(tmp_path):
    """Factory writing a synthetic annotation file; returns its path."""

    def write(rng=None, count=25, doc=None):
        if doc is None:
            doc = synthetic_annotations(rng or np.random.default_rng(0), count=count)
        path = tmp_path / "annotations.json"
        path.write_text(json.dumps(doc))
        return path

    return write
