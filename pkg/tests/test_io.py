import json

import numpy as np
import pytest

from posestruct.decode import Heatmap
from posestruct.io import (
    AnnotationError,
    BadMagicError,
    BadVersionError,
    HeatmapIOError,
    ResultsError,
    TruncatedFileError,
    WeightsFormatError,
    load_coco_annotations,
    load_results,
    load_weights,
    read_heatmap,
    save_results,
    save_weights,
    write_heatmap,
)
from posestruct.topology import (
    Pose,
    Visibility,
    WeightScheme,
    build_coco_skeleton,
    canonical_pose,
    compute_edge_weights,
)

from conftest import synthetic_annotations


class TestAnnotations:
    def test_minimal_valid_file(self, annotations_file):
        rng = np.random.default_rng(0)
        path = annotations_file(doc=synthetic_annotations(rng, count=1))
        ann = load_coco_annotations(path)
        assert len(ann.images) == 1
        assert len(ann.instances) == 1
        assert ann.instances[0].pose.is_fully_labeled()

    def test_instance_count_matches_independent_json_count(self, annotations_file):
        """Cross-check the loader against a plain json read of the same file."""
        rng = np.random.default_rng(1)
        path = annotations_file(doc=synthetic_annotations(rng, count=40))
        ann = load_coco_annotations(path)
        with open(path) as f:
            raw = json.load(f)
        person_ids = {c["id"] for c in raw["categories"] if c["name"] == "person"}
        raw_count = sum(1 for a in raw["annotations"] if a["category_id"] in person_ids)
        assert len(ann.instances) == raw_count

    def test_all_unlabeled_instance_retained(self, annotations_file):
        rng = np.random.default_rng(2)
        doc = synthetic_annotations(rng, count=1)
        doc["annotations"][0]["keypoints"] = [0.0, 0.0, 0.0] * 17
        ann = load_coco_annotations(annotations_file(doc=doc))
        assert len(ann.instances) == 1
        assert np.all(ann.instances[0].pose.visibility == Visibility.NOT_LABELED)

    def test_non_person_categories_skipped(self, annotations_file):
        rng = np.random.default_rng(3)
        doc = synthetic_annotations(rng, count=2)
        doc["categories"].append({"id": 2, "name": "bicycle"})
        doc["annotations"].append(
            {"id": 99, "image_id": 1, "category_id": 2, "area": 10.0, "keypoints": [0.0]}
        )
        ann = load_coco_annotations(annotations_file(doc=doc))
        assert len(ann.instances) == 2

    def test_malformed_json_reports_byte_offset(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"images": [1, 2,,]}')
        with pytest.raises(AnnotationError, match="byte offset"):
            load_coco_annotations(path)

    def test_wrong_keypoint_length_names_annotation(self, annotations_file):
        rng = np.random.default_rng(4)
        doc = synthetic_annotations(rng, count=1)
        doc["annotations"][0]["keypoints"] = [1.0, 2.0, 2.0]
        with pytest.raises(AnnotationError, match="annotation 1"):
            load_coco_annotations(annotations_file(doc=doc))

    def test_bad_visibility_flag_rejected(self, annotations_file):
        rng = np.random.default_rng(5)
        doc = synthetic_annotations(rng, count=1)
        doc["annotations"][0]["keypoints"][2] = 7.0
        with pytest.raises(AnnotationError, match="visibility"):
            load_coco_annotations(annotations_file(doc=doc))

    def test_unknown_image_id_rejected(self, annotations_file):
        rng = np.random.default_rng(6)
        doc = synthetic_annotations(rng, count=1)
        doc["annotations"][0]["image_id"] = 42
        with pytest.raises(AnnotationError, match="image_id"):
            load_coco_annotations(annotations_file(doc=doc))

    def test_missing_section_rejected(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text('{"images": [], "annotations": []}')
        with pytest.raises(AnnotationError, match="categories"):
            load_coco_annotations(path)


class TestResults:
    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "results.json"
        save_results(path, [])
        assert load_results(path) == []

    def test_single_subpixel_pose_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        pose = Pose(rng.uniform(0, 100, (17, 2)) + 1 / 3, None, rng.random(17))
        path = tmp_path / "results.json"
        save_results(path, [(9, pose, 0.875)])
        [(image_id, loaded, score)] = load_results(path)
        assert image_id == 9
        assert score == 0.875
        np.testing.assert_array_equal(loaded.keypoints, pose.keypoints)
        np.testing.assert_array_equal(loaded.confidence, pose.confidence)

    def test_many_random_poses_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        results = [
            (int(rng.integers(10000)), Pose(rng.uniform(-500, 500, (17, 2)), None,
                                            rng.random(17)), float(rng.random()))
            for _ in range(2000)
        ]
        path = tmp_path / "results.json"
        save_results(path, results)
        loaded = load_results(path)
        assert len(loaded) == len(results)
        for (i1, p1, s1), (i2, p2, s2) in zip(results, loaded):
            assert i1 == i2 and s1 == s2
            np.testing.assert_array_equal(p1.keypoints, p2.keypoints)
            np.testing.assert_array_equal(p1.confidence, p2.confidence)

    def test_mixed_category_ids_rejected(self, tmp_path):
        path = tmp_path / "results.json"
        pose_flat = [0.0, 0.0, 1.0]
        path.write_text(json.dumps([
            {"image_id": 1, "category_id": 1, "keypoints": pose_flat, "score": 0.5},
            {"image_id": 1, "category_id": 2, "keypoints": pose_flat, "score": 0.5},
        ]))
        with pytest.raises(ResultsError, match="category"):
            load_results(path)

    def test_bad_keypoint_length_rejected(self, tmp_path):
        path = tmp_path / "results.json"
        path.write_text(json.dumps([
            {"image_id": 1, "category_id": 1, "keypoints": [1.0, 2.0], "score": 0.5},
        ]))
        with pytest.raises(ResultsError, match="keypoints"):
            load_results(path)


class TestHeatmapFile:
    def test_minimal_file_is_22_bytes_and_round_trips(self, tmp_path):
        hm = Heatmap(np.array([[[0.5]]], dtype=np.float32))
        path = tmp_path / "tiny.skhm"
        write_heatmap(path, hm)
        assert path.stat().st_size == 4 + 2 + 12 + 4
        back = read_heatmap(path)
        np.testing.assert_array_equal(back.data, hm.data)

    def test_random_heatmap_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        hm = Heatmap(rng.random((17, 48, 64), dtype=np.float32))
        path = tmp_path / "random.skhm"
        write_heatmap(path, hm)
        assert read_heatmap(path).data.tobytes() == hm.data.tobytes()

    def test_channel_major_row_major_layout(self, tmp_path):
        data = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
        path = tmp_path / "layout.skhm"
        write_heatmap(path, Heatmap(data))
        blob = path.read_bytes()
        payload = np.frombuffer(blob[18:], dtype="<f4")
        # cell (channel 1, row 2, col 3) sits at flat index 1*12 + 2*4 + 3
        assert payload[1 * 12 + 2 * 4 + 3] == data[1, 2, 3]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.skhm"
        path.write_bytes(b"NOPE" + bytes(18))
        with pytest.raises(BadMagicError):
            read_heatmap(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.skhm"
        path.write_bytes(b"SKHM" + (99).to_bytes(2, "little") + bytes(12))
        with pytest.raises(BadVersionError):
            read_heatmap(path)

    def test_truncated_payload(self, tmp_path):
        hm = Heatmap(np.ones((2, 4, 4), dtype=np.float32))
        path = tmp_path / "cut.skhm"
        write_heatmap(path, hm)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(TruncatedFileError):
            read_heatmap(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "cut.skhm"
        path.write_bytes(b"SKHM\x01")
        with pytest.raises(TruncatedFileError):
            read_heatmap(path)

    def test_trailing_bytes(self, tmp_path):
        hm = Heatmap(np.ones((1, 2, 2), dtype=np.float32))
        path = tmp_path / "long.skhm"
        write_heatmap(path, hm)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(HeatmapIOError):
            read_heatmap(path)


class TestWeightsFile:
    def test_round_trip(self, tmp_path):
        topology = build_coco_skeleton()
        weights = compute_edge_weights(
            canonical_pose(), topology, WeightScheme.PROPORTIONAL_LENGTH
        )
        path = tmp_path / "weights.txt"
        save_weights(path, topology, weights)
        topo2, w2 = load_weights(path)
        assert topo2 == topology
        assert w2.scheme == weights.scheme
        np.testing.assert_array_equal(w2.lambdas, weights.lambdas)

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "weights.txt"
        path.write_text("not a weights file\n")
        with pytest.raises(WeightsFormatError):
            load_weights(path)
        path.write_text("posestruct-weights 1\nscheme proportional_length\n")
        with pytest.raises(WeightsFormatError):
            load_weights(path)
