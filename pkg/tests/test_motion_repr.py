import numpy as np
import pytest

from kimodo.errors import DegenerateHeadingError
from kimodo.motion_repr import (
    CodecConfig,
    FeatureLayout,
    MotionFeatures,
    compute_heading,
    decode,
    denormalize,
    encode,
    fit_normalization,
    heading_angle_difference,
    integrate_local_root,
    label_contacts,
    normalize,
    randomize_heading,
    rotate_features_yaw,
    rotate_motion_yaw,
    smooth_root,
    standardize,
    standardize_features,
    to_local_root,
)
from kimodo.rotations import geodesic_angle, rotation_6d_to_matrix
from kimodo.skeleton import forward_kinematics

from conftest import make_random_motion


def gaussian_conv_oracle(x, sigma_frames, truncate=4.0):
    """Direct replicated-edge convolution with the same kernel scipy builds."""
    radius = int(truncate * sigma_frames + 0.5)
    i = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (i / sigma_frames) ** 2)
    kernel /= kernel.sum()
    padded = np.concatenate([np.full(radius, x[0]), x, np.full(radius, x[-1])])
    return np.convolve(padded, kernel, mode="valid")


class TestSmoothRoot:
    def test_constant_fixed_point(self):
        p = np.tile(np.array([1.0, 0.9, -2.0]), (50, 1))
        assert np.abs(smooth_root(p, 30.0) - p).max() < 1e-12

    def test_y_passthrough(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=(40, 3))
        out = smooth_root(p, 30.0)
        assert np.array_equal(out[:, 1], p[:, 1])

    def test_sway_attenuation_vs_conv_oracle(self):
        fps = 30.0
        t = np.arange(300) / fps
        p = np.stack([1.2 * t, np.full_like(t, 0.9), 0.05 * np.sin(2 * np.pi * t)], axis=1)
        out = smooth_root(p, fps)
        sigma = int(round(0.5 * fps))
        assert np.abs(out[:, 0] - gaussian_conv_oracle(p[:, 0], sigma)).max() < 1e-10
        assert np.abs(out[:, 2] - gaussian_conv_oracle(p[:, 2], sigma)).max() < 1e-10
        # lateral sway of 5 cm at 1 s period attenuates below 1 cm
        mid = out[50:-50, 2]
        assert np.abs(mid).max() < 0.01

    def test_translation_commutes(self):
        rng = np.random.default_rng(1)
        p = rng.normal(size=(80, 3)).cumsum(axis=0) * 0.05
        t = np.array([3.0, 0.0, -1.5])
        lhs = smooth_root(p + t, 30.0)
        rhs = smooth_root(p, 30.0) + t
        assert np.abs(lhs - rhs).max() < 1e-9

    def test_single_frame(self):
        p = np.array([[1.0, 2.0, 3.0]])
        assert np.array_equal(smooth_root(p, 30.0), p)

    def test_sigma_zero_disables(self):
        rng = np.random.default_rng(2)
        p = rng.normal(size=(20, 3))
        assert np.array_equal(smooth_root(p, 30.0, sigma_s=0.0), p)


class TestHeading:
    def test_unit_axis_cases(self, skeleton):
        pos = np.zeros((skeleton.n_joints, 3))
        # v_hips = right - left = (1,0,0)  ->  heading (0,-1)
        pos[skeleton.left_hip_index] = [0.0, 0.9, 0.0]
        pos[skeleton.right_hip_index] = [1.0, 0.9, 0.0]
        assert np.allclose(compute_heading(pos, skeleton), [0.0, -1.0], atol=1e-12)
        # v_hips = (0,0,1)  ->  heading (1,0)
        pos[skeleton.right_hip_index] = [0.0, 0.9, 1.0]
        assert np.allclose(compute_heading(pos, skeleton), [1.0, 0.0], atol=1e-12)

    def test_yaw_rotates_heading(self, skeleton):
        rng = np.random.default_rng(3)
        motion = make_random_motion(rng, skeleton, n_frames=5)
        base = compute_heading(motion.joint_positions[0], skeleton)
        psi0 = np.arctan2(base[1], base[0])
        for theta in (0.3, 1.7, np.pi, 5.0):
            rotated = rotate_motion_yaw(motion, theta)
            h = compute_heading(rotated.joint_positions[0], skeleton)
            psi = np.arctan2(h[1], h[0])
            diff = (psi - psi0 - theta + np.pi) % (2 * np.pi) - np.pi
            assert abs(diff) < 1e-4

    def test_degenerate_raises(self, skeleton):
        pos = np.zeros((skeleton.n_joints, 3))
        pos[skeleton.left_hip_index] = [0.0, 0.0, 0.0]
        pos[skeleton.right_hip_index] = [0.0, 1.0, 0.0]  # vertical hip axis
        with pytest.raises(DegenerateHeadingError):
            compute_heading(pos, skeleton)


class TestEncodeDecode:
    def test_feature_width(self, skeleton):
        assert FeatureLayout(skeleton.n_joints).width == 333

    def test_round_trip(self, skeleton):
        rng = np.random.default_rng(4)
        for _ in range(5):
            motion = standardize(make_random_motion(rng, skeleton))
            feats = encode(motion, skeleton)
            back = decode(feats, skeleton)
            pos_err = np.abs(back.joint_positions - motion.joint_positions).max()
            assert pos_err < 1e-4
            rot_err = geodesic_angle(
                rotation_6d_to_matrix(back.rotations_6d),
                rotation_6d_to_matrix(motion.rotations_6d),
            ).max()
            assert rot_err < 1e-4

    def test_static_pose(self, skeleton):
        rng = np.random.default_rng(5)
        motion = standardize(make_random_motion(rng, skeleton, n_frames=2))
        # freeze: repeat frame 0, feet planted on ground
        pos = np.tile(motion.joint_positions[:1], (30, 1, 1))
        pos[:, :, 1] -= pos[0, list(skeleton.foot_joint_indices), 1].min()
        rot = np.tile(motion.rotations_6d[:1], (30, 1, 1))
        static = standardize(
            type(motion)(fps=30.0, joint_positions=pos, rotations_6d=rot)
        )
        feats = encode(static, skeleton)
        layout = FeatureLayout(skeleton.n_joints)
        root = feats.features[:, layout.root_pos]
        assert np.abs(root - root[0]).max() < 1e-9
        assert np.abs(feats.features[:, layout.joint_vel]).max() < 1e-9
        contacts = feats.features[:, layout.contacts]
        grounded = static.joint_positions[0, list(skeleton.foot_joint_indices), 1] < 0.05
        assert np.array_equal(contacts[0] > 0.5, grounded)

    def test_velocity_channel_self_consistent(self, skeleton):
        rng = np.random.default_rng(6)
        motion = standardize(make_random_motion(rng, skeleton))
        feats = encode(motion, skeleton)
        back = decode(feats, skeleton)
        layout = FeatureLayout(skeleton.n_joints)
        vel = np.empty_like(back.joint_positions)
        vel[:-1] = back.joint_positions[1:] - back.joint_positions[:-1]
        vel[-1] = vel[-2]
        stored = feats.features[:, layout.joint_vel].reshape(feats.n_frames, -1, 3)
        assert np.abs(vel - stored).max() < 1e-6

    def test_unstandardized_rejected(self, skeleton):
        rng = np.random.default_rng(7)
        motion = make_random_motion(rng, skeleton)
        motion.joint_positions[:, :, 0] += 5.0
        with pytest.raises(ValueError):
            encode(motion, skeleton)
        encode(motion, skeleton, standardize_first=True)

    def test_decode_zero_joint_pos_collapses_to_root(self, skeleton):
        layout = FeatureLayout(skeleton.n_joints)
        n = 10
        feats = np.zeros((n, layout.width))
        feats[:, 0] = np.linspace(0, 3, n)  # root x on a line
        feats[:, 2] = np.linspace(0, -1, n)
        feats[:, 4] = 1.0  # unit heading
        feats[:, layout.joint_rot] = np.tile([1, 0, 0, 0, 1, 0], skeleton.n_joints)
        motion = decode(MotionFeatures(feats, 30.0), skeleton)
        expected = np.stack([feats[:, 0], np.zeros(n), feats[:, 2]], axis=1)
        assert np.abs(motion.joint_positions - expected[:, None]).max() < 1e-12

    def test_decode_ignores_contact_channel(self, skeleton):
        rng = np.random.default_rng(8)
        motion = standardize(make_random_motion(rng, skeleton))
        feats = encode(motion, skeleton)
        layout = FeatureLayout(skeleton.n_joints)
        flipped = feats.copy()
        flipped.features[:, layout.contacts] = 1.0 - flipped.features[:, layout.contacts]
        a = decode(feats, skeleton)
        b = decode(flipped, skeleton)
        assert np.array_equal(a.joint_positions, b.joint_positions)
        assert np.array_equal(a.rotations_6d, b.rotations_6d)

    def test_decode_wrong_width(self, skeleton):
        with pytest.raises(ValueError):
            decode(MotionFeatures(np.zeros((4, 100)), 30.0), skeleton)


class TestLocalRoot:
    def test_stationary(self):
        r = np.tile([0.5, 0.9, -0.2, np.cos(0.3), np.sin(0.3)], (20, 1))
        local = to_local_root(r)
        assert np.abs(local.heading_angular_velocity).max() == 0.0
        assert np.abs(local.planar_velocity).max() == 0.0
        assert np.array_equal(local.height, r[:, 1])

    def test_constant_turn_rate(self):
        n = 100
        psi = np.deg2rad(1.0) * np.arange(n)
        r = np.stack(
            [np.zeros(n), np.ones(n), np.zeros(n), np.cos(psi), np.sin(psi)], axis=1
        )
        local = to_local_root(r)
        assert np.abs(local.heading_angular_velocity - np.deg2rad(1.0)).max() < 1e-12

    def test_wrap_crossing(self):
        psi = np.deg2rad(np.array([179.0, -179.0]))
        r = np.stack(
            [np.zeros(2), np.zeros(2), np.zeros(2), np.cos(psi), np.sin(psi)], axis=1
        )
        local = to_local_root(r)
        assert abs(local.heading_angular_velocity[0] - np.deg2rad(2.0)) < 1e-12

    def test_integration_round_trip(self, skeleton):
        rng = np.random.default_rng(9)
        layout = FeatureLayout(skeleton.n_joints)
        for _ in range(5):
            motion = standardize(make_random_motion(rng, skeleton, n_frames=120))
            r_glob = encode(motion, skeleton).features[:, layout.root_glob]
            local = to_local_root(r_glob)
            rec = integrate_local_root(local, r_glob[0])
            assert np.abs(rec[:, [0, 1, 2]] - r_glob[:, [0, 1, 2]]).max() < 1e-4
            ang = np.abs(heading_angle_difference(rec[:, 3:5], r_glob[:, 3:5])).max()
            assert ang < 1e-4

    def test_padding_rule(self):
        rng = np.random.default_rng(10)
        psi = rng.normal(size=6).cumsum() * 0.1
        r = np.stack(
            [rng.normal(size=6), np.ones(6), rng.normal(size=6), np.cos(psi), np.sin(psi)],
            axis=1,
        )
        local = to_local_root(r)
        assert local.heading_angular_velocity[-1] == local.heading_angular_velocity[-2]
        assert np.array_equal(local.planar_velocity[-1], local.planar_velocity[-2])


class TestContacts:
    def test_planted_foot(self, skeleton):
        n = 20
        pos = np.zeros((n, skeleton.n_joints, 3))
        pos[:, :, 1] = 1.0
        heel = skeleton.foot_joint_indices[0]
        pos[:, heel] = [0.3, 0.0, 0.1]
        f = label_contacts(pos, skeleton, 30.0)
        assert np.all(f[:, 0] == 1.0)
        assert np.all(f[:, 1:] == 0.0)

    def test_height_gate(self, skeleton):
        n = 20
        pos = np.zeros((n, skeleton.n_joints, 3))
        pos[:, :, 1] = 1.0  # everything high and static
        f = label_contacts(pos, skeleton, 30.0)
        assert np.all(f == 0.0)

    def test_speed_gate(self, skeleton):
        n = 20
        pos = np.zeros((n, skeleton.n_joints, 3))
        pos[:, :, 1] = 1.0
        heel = skeleton.foot_joint_indices[0]
        t = np.arange(n) / 30.0
        pos[:, heel, 0] = 0.5 * t  # 0.5 m/s
        pos[:, heel, 1] = 0.03
        f = label_contacts(pos, skeleton, 30.0)
        assert np.all(f[:, 0] == 0.0)


class TestStandardize:
    def test_idempotent_and_cancels_offset(self, skeleton):
        rng = np.random.default_rng(11)
        motion = standardize(make_random_motion(rng, skeleton))
        shifted = motion.copy()
        shifted.joint_positions = shifted.joint_positions + np.array([5.0, 0.0, -3.0])
        back = standardize(shifted)
        assert np.abs(back.joint_positions - motion.joint_positions).max() < 1e-6
        twice = standardize(standardize(shifted))
        assert np.abs(twice.joint_positions - back.joint_positions).max() < 1e-12


class TestRandomizeHeading:
    def test_zero_angle_identity(self, skeleton):
        rng = np.random.default_rng(12)
        motion = standardize(make_random_motion(rng, skeleton))
        out = rotate_motion_yaw(motion, 0.0)
        assert np.abs(out.joint_positions - motion.joint_positions).max() < 1e-12

    def test_pi_involution(self, skeleton):
        rng = np.random.default_rng(13)
        motion = standardize(make_random_motion(rng, skeleton))
        out = rotate_motion_yaw(rotate_motion_yaw(motion, np.pi), np.pi)
        assert np.abs(out.joint_positions - motion.joint_positions).max() < 1e-6
        rot_err = geodesic_angle(
            rotation_6d_to_matrix(out.rotations_6d),
            rotation_6d_to_matrix(motion.rotations_6d),
        ).max()
        assert rot_err < 1e-6

    def test_randomized_angle_in_range(self, skeleton):
        rng = np.random.default_rng(14)
        motion = standardize(make_random_motion(rng, skeleton))
        out = randomize_heading(motion, rng)
        # still a valid motion, FK-consistent with rotated rotations
        h = compute_heading(out.joint_positions[0], skeleton)
        assert abs(np.linalg.norm(h) - 1.0) < 1e-9


class TestNormalization:
    def test_degenerate_variance(self, skeleton):
        layout = FeatureLayout(skeleton.n_joints)
        frame = np.ones((50, layout.width)) * 3.0
        feats = MotionFeatures(frame, 30.0)
        stats = fit_normalization([feats])
        assert np.all(stats.std == 1e-4)
        normed = normalize(feats, stats)
        assert np.abs(normed.features).max() < 1e-9

    def test_round_trip(self, skeleton):
        rng = np.random.default_rng(15)
        layout = FeatureLayout(skeleton.n_joints)
        feats = [
            MotionFeatures(rng.normal(size=(30, layout.width)) * 4 + 2, 30.0)
            for _ in range(3)
        ]
        stats = fit_normalization(feats)
        rec = denormalize(normalize(feats[0], stats), stats)
        assert np.abs(rec.features - feats[0].features).max() < 1e-6

    def test_normalized_mean_zero(self, skeleton):
        rng = np.random.default_rng(16)
        layout = FeatureLayout(skeleton.n_joints)
        feats = [
            MotionFeatures(rng.normal(size=(40, layout.width)) * 2 + 1, 30.0)
            for _ in range(4)
        ]
        stats = fit_normalization(feats)
        normed = np.concatenate([normalize(m, stats).features for m in feats])
        assert np.abs(normed.mean(axis=0)).max() < 1e-6

    def test_empty_dataset_raises(self):
        with pytest.raises(ValueError):
            fit_normalization([])


class TestFeatureSpaceAugmentation:
    def test_matches_raw_space(self, skeleton):
        rng = np.random.default_rng(17)
        layout = FeatureLayout(skeleton.n_joints)
        motion = standardize(make_random_motion(rng, skeleton))
        feats = encode(motion, skeleton).features
        delta = 1.234
        via_features = rotate_features_yaw(feats, delta, layout)
        via_raw = encode(rotate_motion_yaw(motion, delta), skeleton).features
        assert np.abs(via_features - via_raw).max() < 1e-6

    def test_standardize_features_matches(self, skeleton):
        rng = np.random.default_rng(18)
        motion = standardize(make_random_motion(rng, skeleton, n_frames=90))
        feats = encode(motion, skeleton).features
        sub = feats[30:].copy()
        std_feats = standardize_features(sub)
        assert abs(std_feats[0, 0]) < 1e-12 and abs(std_feats[0, 2]) < 1e-12
        # only the root x/z track changes
        changed = np.abs(std_feats - sub) > 1e-15
        cols = set(np.nonzero(changed)[1])
        assert cols <= {0, 2}
