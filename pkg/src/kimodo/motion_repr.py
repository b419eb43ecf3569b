"""Motion feature codec.

A motion of N frames over a J-joint skeleton maps to an [N, D] feature array,
D = 9 + 12J, laid out per frame as

    [ root_pos (3) | heading (2) | joint_pos (3J) | joint_vel (3J) |
      joint_rot6d (6J) | contacts (4) ]

- root_pos: pelvis trajectory with heavily smoothed horizontal (x, z)
  components, y passed through.
- heading: unit vector (cos psi, sin psi) from the hip axis.
- joint_pos: x, z relative to the smoothed root of the same frame; y global.
- joint_vel: forward differences of *global* joint positions, meters/frame.
- joint_rot6d: global joint rotations in the 6D encoding.
- contacts: [left heel, left toe, right heel, right toe] flags in [0, 1].

Velocities are per-frame so the encoding is fps-agnostic; fps rides along as
metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import DegenerateHeadingError
from .rotations import (
    heading_rotation,
    matrix_to_rotation_6d,
    rotation_6d_to_matrix,
)
from .skeleton import Skeleton

STD_FLOOR = 1e-4


@dataclass(frozen=True)
class FeatureLayout:
    """Index bookkeeping for the per-frame feature vector of a J-joint skeleton."""

    n_joints: int

    @property
    def width(self) -> int:
        return 9 + 12 * self.n_joints

    @property
    def root_pos(self) -> slice:
        return slice(0, 3)

    @property
    def heading(self) -> slice:
        return slice(3, 5)

    @property
    def joint_pos(self) -> slice:
        return slice(5, 5 + 3 * self.n_joints)

    @property
    def joint_vel(self) -> slice:
        return slice(5 + 3 * self.n_joints, 5 + 6 * self.n_joints)

    @property
    def joint_rot(self) -> slice:
        return slice(5 + 6 * self.n_joints, 5 + 12 * self.n_joints)

    @property
    def contacts(self) -> slice:
        return slice(5 + 12 * self.n_joints, 9 + 12 * self.n_joints)

    @property
    def root_glob(self) -> slice:
        """Global root block [root_pos, heading], width 5."""
        return slice(0, 5)

    @property
    def body(self) -> slice:
        """Everything after the global root block."""
        return slice(5, self.width)

    def joint_pos_slice(self, joint: int) -> slice:
        s = self.joint_pos.start + 3 * joint
        return slice(s, s + 3)

    def joint_vel_slice(self, joint: int) -> slice:
        s = self.joint_vel.start + 3 * joint
        return slice(s, s + 3)

    def joint_rot_slice(self, joint: int) -> slice:
        s = self.joint_rot.start + 6 * joint
        return slice(s, s + 6)


@dataclass
class RawMotion:
    """World-space motion: positions [N,J,3] and global 6D rotations [N,J,6].

    Optional side channels (contacts, smoothed_root, heading) are populated by
    decode() so generated motions keep the model's own root/contact channels.
    """

    fps: float
    joint_positions: np.ndarray
    rotations_6d: np.ndarray
    contacts: np.ndarray | None = None
    smoothed_root: np.ndarray | None = None
    heading: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.joint_positions.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_positions.shape[1]

    def copy(self) -> "RawMotion":
        return RawMotion(
            fps=self.fps,
            joint_positions=self.joint_positions.copy(),
            rotations_6d=self.rotations_6d.copy(),
            contacts=None if self.contacts is None else self.contacts.copy(),
            smoothed_root=None if self.smoothed_root is None else self.smoothed_root.copy(),
            heading=None if self.heading is None else self.heading.copy(),
        )

    def validate(self) -> None:
        n, j = self.joint_positions.shape[:2]
        if n < 2:
            raise ValueError("motion must have at least 2 frames")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.rotations_6d.shape != (n, j, 6):
            raise ValueError("rotations_6d shape mismatch")
        rotation_6d_to_matrix(self.rotations_6d)  # raises on degenerate 6D


@dataclass
class MotionFeatures:
    """[N, D] feature array plus metadata; `normalized` tracks z-scoring."""

    features: np.ndarray
    fps: float
    normalized: bool = False

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def copy(self) -> "MotionFeatures":
        return MotionFeatures(self.features.copy(), self.fps, self.normalized)


@dataclass
class LocalRoot:
    """Per-frame local root: heading angular velocity (rad/frame), planar
    velocity (m/frame), absolute height. Final velocities repeat the
    second-to-last entry."""

    heading_angular_velocity: np.ndarray  # [N]
    planar_velocity: np.ndarray  # [N, 2]
    height: np.ndarray  # [N]

    def as_array(self) -> np.ndarray:
        """[N, 4] stacked as [d_psi, dx, dz, height]."""
        return np.concatenate(
            [
                self.heading_angular_velocity[:, None],
                self.planar_velocity,
                self.height[:, None],
            ],
            axis=1,
        )


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray  # [D]
    std: np.ndarray  # [D], floored at STD_FLOOR

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationStats":
        return cls(
            mean=np.asarray(data["mean"], dtype=np.float64),
            std=np.asarray(data["std"], dtype=np.float64),
        )


@dataclass(frozen=True)
class CodecConfig:
    """Tunables of the encoder; thresholds are recorded here so experiments
    can sweep them. smoothing_sigma_s = 0 disables root smoothing (the
    raw-pelvis-root ablation)."""

    smoothing_sigma_s: float = 0.5
    contact_height_m: float = 0.05
    contact_speed_m_s: float = 0.15

    def to_dict(self) -> dict:
        return {
            "smoothing_sigma_s": self.smoothing_sigma_s,
            "contact_height_m": self.contact_height_m,
            "contact_speed_m_s": self.contact_speed_m_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CodecConfig":
        return cls(**data)


def smooth_root(pelvis_positions: np.ndarray, fps: float, sigma_s: float = 0.5) -> np.ndarray:
    """Low-pass the horizontal pelvis path with a zero-phase Gaussian.

    sigma is sigma_s seconds rounded to whole frames; edges replicate the
    boundary samples. The y component is returned unchanged.
    """
    p = np.asarray(pelvis_positions, dtype=np.float64)
    out = p.copy()
    sigma_frames = int(round(sigma_s * fps))
    if p.shape[0] <= 1 or sigma_frames <= 0:
        return out
    out[:, 0] = gaussian_filter1d(p[:, 0], sigma_frames, mode="nearest")
    out[:, 2] = gaussian_filter1d(p[:, 2], sigma_frames, mode="nearest")
    return out


def compute_heading(joint_positions: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Heading unit vector(s) (cos psi, sin psi) from the hip axis.

    Accepts a single frame [J,3] or a batch [N,J,3]. The heading is the
    normalized ground-plane projection of up x (right_hip - left_hip).
    """
    p = np.asarray(joint_positions, dtype=np.float64)
    single = p.ndim == 2
    if single:
        p = p[None]
    v_hips = p[:, skeleton.right_hip_index] - p[:, skeleton.left_hip_index]
    # e_y x v = (v_z, 0, -v_x); keep the xz components.
    head = np.stack([v_hips[:, 2], -v_hips[:, 0]], axis=1)
    norm = np.linalg.norm(head, axis=1)
    if np.any(norm < 1e-8):
        raise DegenerateHeadingError("hip axis is vertical; heading undefined")
    head = head / norm[:, None]
    return head[0] if single else head


def _heading_with_fallback(positions: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Per-frame heading; degenerate frames reuse the previous frame's value."""
    n = positions.shape[0]
    out = np.empty((n, 2), dtype=np.float64)
    prev = None
    for i in range(n):
        try:
            prev = compute_heading(positions[i], skeleton)
        except DegenerateHeadingError:
            if prev is None:
                raise
        out[i] = prev
    return out


def label_contacts(
    joint_positions: np.ndarray,
    skeleton: Skeleton,
    fps: float,
    config: CodecConfig = CodecConfig(),
) -> np.ndarray:
    """Contact flags [N,4] for the foot joints: low AND slow.

    A joint is in contact when its height is below contact_height_m and its
    speed (forward difference, last frame repeated) is below contact_speed_m_s.
    """
    p = np.asarray(joint_positions, dtype=np.float64)
    feet = p[:, list(skeleton.foot_joint_indices)]  # [N,4,3]
    vel = np.empty_like(feet)
    vel[:-1] = feet[1:] - feet[:-1]
    vel[-1] = vel[-2] if feet.shape[0] > 1 else 0.0
    speed = np.linalg.norm(vel, axis=2) * fps
    low = feet[:, :, 1] < config.contact_height_m
    slow = speed < config.contact_speed_m_s
    return (low & slow).astype(np.float64)


def standardize(raw: RawMotion, sigma_s: float = 0.5) -> RawMotion:
    """Translate horizontally so the smoothed root starts above the origin."""
    out = raw.copy()
    root = smooth_root(raw.joint_positions[:, 0], raw.fps, sigma_s)
    shift = np.array([root[0, 0], 0.0, root[0, 2]])
    out.joint_positions = out.joint_positions - shift
    if out.smoothed_root is not None:
        out.smoothed_root = out.smoothed_root - shift
    return out


def randomize_heading(raw: RawMotion, rng: np.random.Generator) -> RawMotion:
    """Yaw the whole motion about the vertical axis through the origin by a
    uniform random angle. Returns a new motion; input untouched."""
    delta = rng.uniform(0.0, 2.0 * np.pi)
    return rotate_motion_yaw(raw, delta)


def rotate_motion_yaw(raw: RawMotion, delta: float) -> RawMotion:
    """Apply the yaw rotation that advances the heading angle by `delta`."""
    rot = heading_rotation(delta)
    out = raw.copy()
    out.joint_positions = raw.joint_positions @ rot.T
    mats = rotation_6d_to_matrix(raw.rotations_6d)
    out.rotations_6d = matrix_to_rotation_6d(rot @ mats)
    if out.smoothed_root is not None:
        out.smoothed_root = out.smoothed_root @ rot.T
    if out.heading is not None:
        c, s = np.cos(delta), np.sin(delta)
        h = out.heading
        out.heading = np.stack([c * h[:, 0] - s * h[:, 1], s * h[:, 0] + c * h[:, 1]], axis=1)
    return out


def encode(
    raw: RawMotion,
    skeleton: Skeleton,
    config: CodecConfig = CodecConfig(),
    standardize_first: bool = False,
) -> MotionFeatures:
    """RawMotion -> MotionFeatures (unnormalized).

    The input must be standardized (smoothed root above origin at frame 0)
    unless standardize_first is set. Contacts are relabeled with the
    height/speed heuristic unless already present on the motion.
    """
    raw.validate()
    if standardize_first:
        raw = standardize(raw, config.smoothing_sigma_s)
    layout = FeatureLayout(skeleton.n_joints)
    p = raw.joint_positions
    n = raw.n_frames

    root = smooth_root(p[:, 0], raw.fps, config.smoothing_sigma_s)
    if abs(root[0, 0]) > 1e-6 or abs(root[0, 2]) > 1e-6:
        raise ValueError(
            "motion is not standardized; pass standardize_first=True or call standardize()"
        )
    heading = _heading_with_fallback(p, skeleton)

    joint_pos = p.copy()
    joint_pos[:, :, 0] -= root[:, None, 0]
    joint_pos[:, :, 2] -= root[:, None, 2]

    joint_vel = np.empty_like(p)
    joint_vel[:-1] = p[1:] - p[:-1]
    joint_vel[-1] = joint_vel[-2]

    contacts = raw.contacts
    if contacts is None:
        contacts = label_contacts(p, skeleton, raw.fps, config)

    feats = np.empty((n, layout.width), dtype=np.float64)
    feats[:, layout.root_pos] = root
    feats[:, layout.heading] = heading
    feats[:, layout.joint_pos] = joint_pos.reshape(n, -1)
    feats[:, layout.joint_vel] = joint_vel.reshape(n, -1)
    feats[:, layout.joint_rot] = raw.rotations_6d.reshape(n, -1)
    feats[:, layout.contacts] = contacts
    return MotionFeatures(feats, raw.fps, normalized=False)


def decode(features: MotionFeatures, skeleton: Skeleton) -> RawMotion:
    """MotionFeatures (unnormalized) -> RawMotion.

    Positions come straight from the joint_pos block plus the root track (no
    integration); velocities and contacts ride along as side channels.
    """
    if features.normalized:
        raise ValueError("decode expects unnormalized features")
    layout = FeatureLayout(skeleton.n_joints)
    if features.width != layout.width:
        raise ValueError(
            f"feature width {features.width} does not match skeleton ({layout.width})"
        )
    f = features.features
    n = features.n_frames
    root = f[:, layout.root_pos]
    joint_pos = f[:, layout.joint_pos].reshape(n, -1, 3).copy()
    joint_pos[:, :, 0] += root[:, None, 0]
    joint_pos[:, :, 2] += root[:, None, 2]
    return RawMotion(
        fps=features.fps,
        joint_positions=joint_pos,
        rotations_6d=f[:, layout.joint_rot].reshape(n, -1, 6).copy(),
        contacts=f[:, layout.contacts].copy(),
        smoothed_root=root.copy(),
        heading=f[:, layout.heading].copy(),
    )


def heading_angle_difference(h_from: np.ndarray, h_to: np.ndarray) -> np.ndarray:
    """Wrapped angle difference psi_to - psi_from in (-pi, pi] from heading
    vectors (need not be exactly unit)."""
    c0, s0 = h_from[..., 0], h_from[..., 1]
    c1, s1 = h_to[..., 0], h_to[..., 1]
    return np.arctan2(s1 * c0 - c1 * s0, c1 * c0 + s1 * s0)


def to_local_root(r_glob: np.ndarray) -> LocalRoot:
    """Global root block [N,5] -> local root (finite differences).

    The last frame's velocities repeat the second-to-last so the output keeps
    N rows.
    """
    r = np.asarray(r_glob, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != 5:
        raise ValueError(f"expected [N,5] global root, got {r.shape}")
    n = r.shape[0]
    d_psi = np.zeros(n, dtype=np.float64)
    d_xz = np.zeros((n, 2), dtype=np.float64)
    if n > 1:
        d_psi[:-1] = heading_angle_difference(r[:-1, 3:5], r[1:, 3:5])
        d_psi[-1] = d_psi[-2]
        d_xz[:-1] = r[1:, [0, 2]] - r[:-1, [0, 2]]
        d_xz[-1] = d_xz[-2]
    return LocalRoot(heading_angular_velocity=d_psi, planar_velocity=d_xz, height=r[:, 1].copy())


def integrate_local_root(local: LocalRoot, initial: np.ndarray) -> np.ndarray:
    """Invert to_local_root given the frame-0 global root [5]."""
    n = local.height.shape[0]
    psi0 = np.arctan2(initial[4], initial[3])
    psi = np.empty(n, dtype=np.float64)
    psi[0] = psi0
    if n > 1:
        psi[1:] = psi0 + np.cumsum(local.heading_angular_velocity[:-1])
    xz = np.empty((n, 2), dtype=np.float64)
    xz[0] = initial[[0, 2]]
    if n > 1:
        xz[1:] = initial[[0, 2]] + np.cumsum(local.planar_velocity[:-1], axis=0)
    out = np.empty((n, 5), dtype=np.float64)
    out[:, 0] = xz[:, 0]
    out[:, 1] = local.height
    out[:, 2] = xz[:, 1]
    out[:, 3] = np.cos(psi)
    out[:, 4] = np.sin(psi)
    return out


def fit_normalization(dataset: list[MotionFeatures]) -> NormalizationStats:
    """Per-dimension z-score statistics over all frames of a training set."""
    if not dataset:
        raise ValueError("cannot fit normalization on an empty dataset")
    frames = np.concatenate([m.features for m in dataset], axis=0)
    if frames.shape[0] < 2:
        raise ValueError("need at least 2 frames to fit normalization")
    mean = frames.mean(axis=0)
    std = np.maximum(frames.std(axis=0), STD_FLOOR)
    return NormalizationStats(mean=mean, std=std)


def normalize(features: MotionFeatures, stats: NormalizationStats) -> MotionFeatures:
    if features.normalized:
        raise ValueError("features already normalized")
    return MotionFeatures(
        (features.features - stats.mean) / stats.std, features.fps, normalized=True
    )


def denormalize(features: MotionFeatures, stats: NormalizationStats) -> MotionFeatures:
    if not features.normalized:
        raise ValueError("features are not normalized")
    return MotionFeatures(
        features.features * stats.std + stats.mean, features.fps, normalized=False
    )


# Feature-space equivalents of standardize / rotate_motion_yaw. Training uses
# these on cropped sub-sequences; they are exact because horizontal translation
# only enters the root track and yaw acts linearly on every block.


def standardize_features(features: np.ndarray) -> np.ndarray:
    out = features.copy()
    out[:, 0] -= features[0, 0]
    out[:, 2] -= features[0, 2]
    return out


def rotate_features_yaw(features: np.ndarray, delta: float, layout: FeatureLayout) -> np.ndarray:
    """Advance the heading of a feature sequence by `delta` (about the origin)."""
    out = features.copy()
    c, s = np.cos(delta), np.sin(delta)

    def rot2(x, z):
        return c * x - s * z, s * x + c * z

    out[:, 0], out[:, 2] = rot2(features[:, 0], features[:, 2])
    out[:, 3], out[:, 4] = rot2(features[:, 3], features[:, 4])
    n = features.shape[0]
    for block in (layout.joint_pos, layout.joint_vel):
        xyz = features[:, block].reshape(n, -1, 3)
        rx, rz = rot2(xyz[:, :, 0], xyz[:, :, 2])
        rot = np.stack([rx, xyz[:, :, 1], rz], axis=2)
        out[:, block] = rot.reshape(n, -1)
    rot6 = features[:, layout.joint_rot].reshape(n, -1, 2, 3)  # two 3-vectors per joint
    rx, rz = rot2(rot6[..., 0], rot6[..., 2])
    rot6 = np.stack([rx, rot6[..., 1], rz], axis=-1)
    out[:, layout.joint_rot] = rot6.reshape(n, -1)
    return out
