import numpy as np
import pytest

from posestruct.topology import (
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

from conftest import random_pose


def _mirror_name(name):
    if name.startswith("left_"):
        return "right_" + name[len("left_"):]
    if name.startswith("right_"):
        return "left_" + name[len("right_"):]
    return name


class TestCocoSkeleton:
    def test_counts(self, topology):
        assert topology.num_keypoints == 17
        assert topology.num_edges == 19

    def test_eye_eye_edge_present(self, topology):
        le = topology.index("left_eye")
        re = topology.index("right_eye")
        assert frozenset((le, re)) in {frozenset(e) for e in topology.edges}

    def test_mirror_closure(self, topology):
        """Derive the mirror pairing from keypoint names alone and compare.

        Mirroring every edge (swap left/right in both endpoint names) must
        map the edge set onto itself: 8 pairs of distinct mirrored edges and
        3 self-mirrored edges (eye-eye, shoulder-shoulder, hip-hip).
        """
        names = topology.keypoint_names
        by_names = {
            frozenset((names[a], names[b])): idx
            for idx, (a, b) in enumerate(topology.edges)
        }

        derived_pairs = set()
        self_mirrored = set()
        for key, idx in by_names.items():
            mirrored = frozenset(_mirror_name(n) for n in key)
            assert mirrored in by_names, f"mirror of edge {set(key)} missing"
            other = by_names[mirrored]
            if other == idx:
                self_mirrored.add(idx)
            else:
                derived_pairs.add(frozenset((idx, other)))

        assert len(derived_pairs) == 8
        assert len(self_mirrored) == 3
        assert 8 * 2 + 3 == topology.num_edges

        declared = {frozenset(p) for p in topology.symmetric_pairs}
        assert declared == derived_pairs

        self_names = {topology.edge_name(i) for i in self_mirrored}
        assert self_names == {
            "left_eye-right_eye",
            "left_shoulder-right_shoulder",
            "left_hip-right_hip",
        }

    @pytest.mark.parametrize(
        "edges, pairs",
        [
            (((0, 0),), ()),                      # self loop
            (((0, 1), (1, 0)), ()),               # duplicate unordered
            (((0, 5),), ()),                      # index out of range
            (((0, 1), (1, 2)), ((0, 0),)),        # pair must be distinct edges
            (((0, 1), (1, 2), (2, 0)), ((0, 1), (1, 2))),  # edge in two pairs
        ],
    )
    def test_invalid_topologies_rejected(self, edges, pairs):
        with pytest.raises(ValueError):
            SkeletonTopology(("a", "b", "c"), edges, pairs)


class TestCanonicalPose:
    def test_shape_and_normalization(self, topology):
        pose = canonical_pose()
        assert pose.num_keypoints == 17
        assert pose.is_fully_labeled()
        hip_mid = 0.5 * (pose.keypoints[11] + pose.keypoints[12])
        shoulder_mid = 0.5 * (pose.keypoints[5] + pose.keypoints[6])
        np.testing.assert_allclose(hip_mid, [0.0, 0.0], atol=1e-12)
        assert np.linalg.norm(shoulder_mid - hip_mid) == pytest.approx(1.0)

    def test_left_right_symmetry(self):
        kp = canonical_pose().keypoints
        names = build_coco_skeleton().keypoint_names
        for i, name in enumerate(names):
            j = names.index(_mirror_name(name))
            np.testing.assert_allclose(kp[i], kp[j] * np.array([-1.0, 1.0]), atol=1e-12)


class TestAveragePose:
    def test_two_identical_poses(self, rng=np.random.default_rng(0)):
        pose = random_pose(rng)
        avg = compute_average_pose([pose, pose], Normalization.NONE)
        np.testing.assert_allclose(avg.keypoints, pose.keypoints)

    def test_single_pose_is_itself_normalized(self):
        pose = canonical_pose()
        scaled = Pose(pose.keypoints * 37.0 + np.array([5.0, -3.0]))
        avg = compute_average_pose([scaled])
        np.testing.assert_allclose(avg.keypoints, pose.keypoints, atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        poses = [random_pose(rng) for _ in range(8)]
        avg1 = compute_average_pose(poses)
        shuffled = [poses[i] for i in rng.permutation(len(poses))]
        avg2 = compute_average_pose(shuffled)
        np.testing.assert_allclose(avg1.keypoints, avg2.keypoints, atol=1e-12)

    def test_only_fully_labeled_contribute(self):
        rng = np.random.default_rng(2)
        full = random_pose(rng)
        vis = np.full(17, int(Visibility.LABELED_VISIBLE))
        vis[3] = Visibility.NOT_LABELED
        partial = Pose(rng.uniform(0, 100, (17, 2)), vis)
        avg = compute_average_pose([full, partial], Normalization.NONE)
        np.testing.assert_allclose(avg.keypoints, full.keypoints)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            compute_average_pose([])

    def test_no_fully_labeled_instance_rejected(self):
        vis = np.zeros(17, dtype=np.int64)
        pose = Pose(np.full((17, 2), np.nan), vis)
        with pytest.raises(ValueError):
            compute_average_pose([pose])


class TestEdgeWeights:
    def test_uniform_all_ones(self, topology):
        w = compute_edge_weights(canonical_pose(), topology, WeightScheme.UNIFORM)
        np.testing.assert_array_equal(w.lambdas, np.ones(19))

    def test_proportional_longest_edge_is_one_pre_averaging(self, topology):
        rng = np.random.default_rng(3)
        for _ in range(10):
            pose = random_pose(rng)
            w = compute_edge_weights(
                pose, topology, WeightScheme.PROPORTIONAL_LENGTH, symmetric_average=False
            )
            assert w.lambdas.max() == pytest.approx(1.0)
            assert np.all(w.lambdas > 0.0)
            assert np.all(w.lambdas <= 1.0)

    def test_inverse_longest_edge_is_zero_pre_averaging(self, topology):
        rng = np.random.default_rng(4)
        pose = random_pose(rng)
        w = compute_edge_weights(
            pose, topology, WeightScheme.INVERSE_LENGTH, symmetric_average=False
        )
        assert w.lambdas.min() == pytest.approx(0.0)

    def test_schemes_sum_to_one_pre_averaging(self, topology):
        rng = np.random.default_rng(5)
        for _ in range(10):
            pose = random_pose(rng)
            inv = compute_edge_weights(
                pose, topology, WeightScheme.INVERSE_LENGTH, symmetric_average=False
            )
            prop = compute_edge_weights(
                pose, topology, WeightScheme.PROPORTIONAL_LENGTH, symmetric_average=False
            )
            np.testing.assert_allclose(inv.lambdas + prop.lambdas, 1.0, atol=1e-12)

    @pytest.mark.parametrize(
        "scheme",
        [WeightScheme.UNIFORM, WeightScheme.INVERSE_LENGTH, WeightScheme.PROPORTIONAL_LENGTH],
    )
    def test_symmetric_pairs_equal_after_averaging(self, topology, scheme):
        rng = np.random.default_rng(6)
        for _ in range(10):
            w = compute_edge_weights(random_pose(rng), topology, scheme)
            for i, j in topology.symmetric_pairs:
                assert w.lambdas[i] == w.lambdas[j]

    def test_uniform_scaling_leaves_ratio_weights_unchanged(self, topology):
        rng = np.random.default_rng(7)
        pose = random_pose(rng)
        scaled = Pose(pose.keypoints * 12.5)
        for scheme in (WeightScheme.INVERSE_LENGTH, WeightScheme.PROPORTIONAL_LENGTH):
            w1 = compute_edge_weights(pose, topology, scheme)
            w2 = compute_edge_weights(scaled, topology, scheme)
            np.testing.assert_allclose(w1.lambdas, w2.lambdas, atol=1e-12)

    def test_zero_length_edge_rejected(self, topology):
        kp = canonical_pose().keypoints.copy()
        kp[1] = kp[2]  # collapse the eye-eye edge
        with pytest.raises(ValueError, match="zero-length"):
            compute_edge_weights(Pose(kp), topology, WeightScheme.PROPORTIONAL_LENGTH)

    def test_partially_labeled_average_pose_rejected(self, topology):
        vis = np.full(17, int(Visibility.LABELED_VISIBLE))
        vis[0] = Visibility.NOT_LABELED
        pose = Pose(canonical_pose().keypoints, vis)
        with pytest.raises(ValueError):
            compute_edge_weights(pose, topology, WeightScheme.UNIFORM)

    def test_negative_lambdas_rejected(self):
        with pytest.raises(ValueError):
            EdgeWeights(WeightScheme.UNIFORM, np.array([1.0, -0.5]))
