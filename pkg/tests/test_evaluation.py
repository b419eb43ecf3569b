import numpy as np
import pytest

from kimodo.constraints import ConstraintSpec, empty_spec
from kimodo.errors import UndefinedMetricError
from kimodo.evaluation import (
    CASE_CATEGORIES,
    build_constraint_test_suite,
    constraint_errors,
    contact_accuracy,
    foot_skate,
    gaussian_frechet_distance,
    motion_statistics,
    pelvis_deviation_p95,
    perturb_spec_rigid,
    surrogate_fid,
)
from kimodo.motion_repr import FeatureLayout, MotionFeatures, encode, rotate_features_yaw, standardize
from kimodo.rotations import rotation_about_axis, matrix_to_rotation_6d, rotation_6d_to_matrix
from kimodo.synthetic import generate_family

from conftest import make_random_motion


class TestFootSkate:
    def test_planted_zero(self, skeleton):
        n = 30
        pos = np.zeros((n, skeleton.n_joints, 3))
        contacts = np.ones((n, 4))
        assert foot_skate(pos, contacts, skeleton, 30.0) == 0.0

    def test_known_translation(self, skeleton):
        n = 30
        pos = np.zeros((n, skeleton.n_joints, 3))
        heel = skeleton.foot_joint_indices[0]
        pos[:, heel, 0] = 0.03 * np.arange(n)  # 3 cm per frame
        contacts = np.zeros((n, 4))
        contacts[:, 0] = 1.0
        got = foot_skate(pos, contacts, skeleton, 30.0)
        assert abs(got - 90.0) < 1e-9  # 0.03 m * 30 fps = 90 cm/s

    def test_empty_contacts(self, skeleton):
        pos = np.random.default_rng(0).normal(size=(10, skeleton.n_joints, 3))
        assert foot_skate(pos, np.zeros((10, 4)), skeleton, 30.0) == 0.0


class TestContactAccuracy:
    def test_identical(self):
        a = np.random.default_rng(1).integers(0, 2, size=(20, 4)).astype(float)
        assert contact_accuracy(a, a) == 1.0

    def test_complement(self):
        a = np.random.default_rng(2).integers(0, 2, size=(20, 4)).astype(float)
        assert contact_accuracy(a, 1.0 - a) == 0.0

    def test_half_flipped(self):
        a = np.zeros((10, 4))
        b = a.copy()
        b[:5] = 1.0
        assert contact_accuracy(a, b) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            contact_accuracy(np.zeros((3, 4)), np.zeros((4, 4)))


@pytest.fixture()
def gt_case(skeleton):
    rng = np.random.default_rng(3)
    clip = generate_family("straight_walk", rng, skeleton)
    feats = encode(clip.raw, skeleton)
    return clip, feats


class TestConstraintErrors:
    def test_exact_match_zero(self, skeleton, gt_case):
        _, feats = gt_case
        layout = FeatureLayout(skeleton.n_joints)
        mask = np.zeros_like(feats.features)
        mask[10, layout.joint_pos] = 1.0
        mask[20, [0, 2]] = 1.0
        j = skeleton.end_effector_indices[0]
        sl = layout.joint_rot_slice(j)
        mask[5, sl] = 1.0
        spec = ConstraintSpec(np.where(mask > 0.5, feats.features, 0.0), mask)
        errs = constraint_errors(feats, spec, skeleton)
        assert errs.full_body_pos_cm == 0.0
        assert errs.root2d_pos_cm == 0.0
        assert errs.ee_rot_deg < 1e-6

    def test_single_point_offset(self, skeleton, gt_case):
        _, feats = gt_case
        layout = FeatureLayout(skeleton.n_joints)
        j = skeleton.end_effector_indices[1]
        sl = layout.joint_pos_slice(j)
        mask = np.zeros_like(feats.features)
        mask[7, sl] = 1.0
        target = np.where(mask > 0.5, feats.features, 0.0)
        target[7, sl.start] += 0.02  # 2 cm on x
        spec = ConstraintSpec(target, mask)
        errs = constraint_errors(feats, spec, skeleton)
        assert abs(errs.ee_pos_cm - 2.0) < 1e-9
        assert errs.full_body_pos_cm is None

    def test_rotation_ten_degrees(self, skeleton, gt_case):
        _, feats = gt_case
        layout = FeatureLayout(skeleton.n_joints)
        j = skeleton.end_effector_indices[0]
        sl = layout.joint_rot_slice(j)
        mask = np.zeros_like(feats.features)
        mask[3, sl] = 1.0
        base = rotation_6d_to_matrix(feats.features[3, sl])
        rot = rotation_about_axis(np.array([0.3, 1.0, -0.2]), np.deg2rad(10.0))
        target = np.where(mask > 0.5, feats.features, 0.0)
        target[3, sl] = matrix_to_rotation_6d(base @ rot)
        spec = ConstraintSpec(target, mask)
        errs = constraint_errors(feats, spec, skeleton)
        assert abs(errs.ee_rot_deg - 10.0) < 1e-6

    def test_rigid_invariance(self, skeleton, gt_case):
        _, feats = gt_case
        layout = FeatureLayout(skeleton.n_joints)
        mask = np.zeros_like(feats.features)
        mask[4, layout.joint_pos] = 1.0
        mask[9, [0, 2]] = 1.0
        target = np.where(mask > 0.5, feats.features, 0.0)
        target[9, 0] += 0.05
        spec = ConstraintSpec(target, mask)
        base = constraint_errors(feats, spec, skeleton)

        yaw, shift = 1.3, np.array([2.0, -1.0])
        feats_r = MotionFeatures(
            rotate_features_yaw(feats.features, yaw, layout), feats.fps, False
        )
        feats_r.features[:, 0] += shift[0]
        feats_r.features[:, 2] += shift[1]
        target_r = rotate_features_yaw(spec.target, yaw, layout)
        target_r[:, 0] += shift[0]
        target_r[:, 2] += shift[1]
        spec_r = ConstraintSpec(np.where(mask > 0.5, target_r, 0.0), mask)
        moved = constraint_errors(feats_r, spec_r, skeleton)
        assert abs(base.root2d_pos_cm - moved.root2d_pos_cm) < 1e-6
        assert abs(base.full_body_pos_cm - moved.full_body_pos_cm) < 1e-6


class TestPelvisDeviation:
    def test_exact_zero_and_single(self, skeleton, gt_case):
        _, feats = gt_case
        layout = FeatureLayout(skeleton.n_joints)
        mask = np.zeros_like(feats.features)
        mask[12, [0, 2]] = 1.0
        # target = achieved pelvis projection -> zero deviation
        pelvis_x = feats.features[12, layout.joint_pos_slice(0).start] + feats.features[12, 0]
        pelvis_z = feats.features[12, layout.joint_pos_slice(0).start + 2] + feats.features[12, 2]
        target = np.zeros_like(feats.features)
        target[12, 0], target[12, 2] = pelvis_x, pelvis_z
        spec = ConstraintSpec(target, mask)
        assert pelvis_deviation_p95(feats, spec, skeleton) < 1e-9
        # single frame at 3 cm
        target[12, 0] = pelvis_x + 0.03
        assert abs(pelvis_deviation_p95(feats, ConstraintSpec(target, mask), skeleton) - 3.0) < 1e-9

    def test_sort_oracle(self, skeleton, gt_case):
        _, feats = gt_case
        layout = FeatureLayout(skeleton.n_joints)
        rng = np.random.default_rng(4)
        n = feats.n_frames
        rows = rng.choice(n, size=50, replace=False)
        mask = np.zeros_like(feats.features)
        mask[rows[:, None], [0, 2]] = 1.0
        target = np.zeros_like(feats.features)
        offsets = rng.normal(scale=0.05, size=(50, 2))
        pelvis_sl = layout.joint_pos_slice(0)
        px = feats.features[rows, pelvis_sl.start] + feats.features[rows, 0]
        pz = feats.features[rows, pelvis_sl.start + 2] + feats.features[rows, 2]
        target[rows, 0] = px + offsets[:, 0]
        target[rows, 2] = pz + offsets[:, 1]
        spec = ConstraintSpec(target, mask)
        got = pelvis_deviation_p95(feats, spec, skeleton)
        # independent sort-based percentile with linear interpolation
        d = np.sort(np.linalg.norm(offsets, axis=1)) * 100.0
        rank = 0.95 * (len(d) - 1)
        lo, hi = int(np.floor(rank)), int(np.ceil(rank))
        expected = d[lo] + (rank - lo) * (d[hi] - d[lo])
        assert abs(got - expected) < 1e-9

    def test_empty_raises(self, skeleton, gt_case):
        _, feats = gt_case
        with pytest.raises(UndefinedMetricError):
            pelvis_deviation_p95(feats, empty_spec(feats.n_frames, feats.width), skeleton)


class TestSurrogateFid:
    def test_same_set_zero_and_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(200, 6))
        b = rng.normal(size=(180, 6)) + 0.3
        assert abs(surrogate_fid(a, a)) < 1e-8
        assert abs(surrogate_fid(a, b) - surrogate_fid(b, a)) < 1e-8

    def test_known_gaussians_closed_form(self):
        rng = np.random.default_rng(6)
        k = 4
        mu1, mu2 = np.zeros(k), np.full(k, 0.5)
        a_chol = np.tril(rng.normal(size=(k, k)) * 0.3) + np.eye(k)
        s1 = a_chol @ a_chol.T
        b_chol = np.tril(rng.normal(size=(k, k)) * 0.3) + 0.8 * np.eye(k)
        s2 = b_chol @ b_chol.T
        x1 = rng.multivariate_normal(mu1, s1, size=100_000)
        x2 = rng.multivariate_normal(mu2, s2, size=100_000)
        closed = gaussian_frechet_distance(mu1, s1, mu2, s2)
        est = surrogate_fid(x1, x2)
        assert abs(est - closed) / closed < 0.02

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            surrogate_fid(np.zeros((1, 3)), np.zeros((5, 3)))


class TestSuiteBuilder:
    def test_grid_coverage(self, skeleton):
        rng = np.random.default_rng(7)
        clips = [generate_family("walk_then_wave", rng, skeleton) for _ in range(3)]
        cases = build_constraint_test_suite(clips, skeleton, rng)
        cats = {c.category for c in cases}
        assert cats == set(CASE_CATEGORIES)
        lengths = {round(c.length_s) for c in cases}
        assert lengths <= {3, 4, 5, 6, 7, 8, 9}
        assert any(c.with_text for c in cases) and any(not c.with_text for c in cases)
        assert any(c.perturbed for c in cases)

    def test_perturbation_exact_rigid_transform(self, skeleton):
        rng = np.random.default_rng(8)
        clip = generate_family("straight_walk", rng, skeleton)
        feats = encode(clip.raw, skeleton)
        layout = FeatureLayout(skeleton.n_joints)
        mask = np.zeros_like(feats.features)
        mask[3, layout.joint_pos] = 1.0
        mask[11, [0, 2]] = 1.0
        spec = ConstraintSpec(np.where(mask > 0.5, feats.features, 0.0), mask)
        c_dir = feats.features[0, 3:5]
        moved, new_dir, yaw, shift = perturb_spec_rigid(spec, c_dir, layout, rng)
        expected = rotate_features_yaw(spec.target, yaw, layout)
        expected[:, 0] += shift[0]
        expected[:, 2] += shift[1]
        expected = np.where(mask > 0.5, expected, 0.0)
        assert np.abs(moved.target - expected).max() < 1e-12
        assert abs(np.linalg.norm(new_dir) - 1.0) < 1e-9


class TestMotionStatistics:
    def test_finite_and_discriminative(self, skeleton):
        rng = np.random.default_rng(9)
        walk = motion_statistics(
            encode(generate_family("straight_walk", rng, skeleton).raw, skeleton), skeleton
        )
        squat = motion_statistics(
            encode(generate_family("squat", rng, skeleton).raw, skeleton), skeleton
        )
        assert np.all(np.isfinite(walk)) and np.all(np.isfinite(squat))
        assert np.linalg.norm(walk - squat) > 0.01
