"""Kinematic constraints: sparse target features + binary masks.

A constraint is a pair (target, mask) of [N, D] arrays at feature granularity
plus an optional list of high-level items (the JSON schema used by the service
and UI). Masks are block-consistent: a position constraint covers all 3 dims
of a joint's position block, a rotation constraint its 6 dims, a heading
constraint both heading dims, a contact constraint all 4 flags.

The control mask is stored as a plain float {0,1} ndarray; validate_mask
checks the block structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .motion_repr import FeatureLayout, MotionFeatures, NormalizationStats
from .skeleton import Skeleton


class ConstraintPattern(Enum):
    FULL_BODY_KEYFRAMES = "full_body_keyframes"
    END_EFFECTOR_KEYFRAMES = "end_effector_keyframes"
    ROOT_2D_KEYFRAMES = "root_2d_keyframes"
    ROOT_2D_DENSE_PATH = "root_2d_dense_path"
    FOOT_CONTACT_KEYFRAMES = "foot_contact_keyframes"


ITEM_KINDS = ("waypoint", "dense_path", "full_body_keyframe", "end_effector", "foot_contact")


@dataclass
class ConstraintSpec:
    """Sparse targets + mask; `normalized` mirrors MotionFeatures.normalized.

    Target values are only meaningful where mask == 1. `items` carries the
    high-level description when the spec was built from one (world-unit
    values); specs sampled during training leave it empty but record which
    pattern(s) produced them in `patterns`.
    """

    target: np.ndarray  # [N, D]
    mask: np.ndarray  # [N, D] in {0, 1}
    items: list = field(default_factory=list)
    normalized: bool = False
    patterns: list = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.target.shape[0]

    @property
    def is_empty(self) -> bool:
        return not np.any(self.mask > 0.5)

    def copy(self) -> "ConstraintSpec":
        return ConstraintSpec(
            self.target.copy(), self.mask.copy(), [dict(i) for i in self.items], self.normalized
        )

    def normalize(self, stats: NormalizationStats) -> "ConstraintSpec":
        if self.normalized:
            raise ValueError("spec already normalized")
        target = np.where(self.mask > 0.5, (self.target - stats.mean) / stats.std, 0.0)
        return ConstraintSpec(target, self.mask.copy(), [dict(i) for i in self.items], True)

    def denormalize(self, stats: NormalizationStats) -> "ConstraintSpec":
        if not self.normalized:
            raise ValueError("spec is not normalized")
        target = np.where(self.mask > 0.5, self.target * stats.std + stats.mean, 0.0)
        return ConstraintSpec(target, self.mask.copy(), [dict(i) for i in self.items], False)


def empty_spec(n_frames: int, width: int, normalized: bool = False) -> ConstraintSpec:
    return ConstraintSpec(
        np.zeros((n_frames, width)), np.zeros((n_frames, width)), [], normalized
    )


def impute(x_t: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    """Overwrite x_t with targets where the mask is set (exact elsewhere)."""
    if x_t.shape != spec.target.shape or x_t.shape != spec.mask.shape:
        raise ValueError(
            f"shape mismatch: x {x_t.shape}, target {spec.target.shape}, mask {spec.mask.shape}"
        )
    return np.where(spec.mask > 0.5, spec.target, x_t)


def assemble_input(x_tilde: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Concatenate the imputed motion with its control mask: [N, 2D]."""
    if x_tilde.shape != mask.shape:
        raise ValueError(f"shape mismatch: {x_tilde.shape} vs {mask.shape}")
    return np.concatenate([x_tilde, mask], axis=-1)


def merge_specs(first: ConstraintSpec, second: ConstraintSpec) -> ConstraintSpec:
    """OR the masks; the second spec wins where targets overlap."""
    if first.normalized != second.normalized:
        raise ValueError("cannot merge specs in different spaces")
    mask = np.maximum(first.mask, second.mask)
    target = np.where(second.mask > 0.5, second.target, first.target)
    target = np.where(mask > 0.5, target, 0.0)
    return ConstraintSpec(
        target, mask, first.items + second.items, first.normalized,
        patterns=first.patterns + second.patterns,
    )


def validate_mask(mask: np.ndarray, layout: FeatureLayout) -> None:
    """Check binary values and block consistency; raises ValueError."""
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValueError("mask entries must be 0 or 1")
    blocks = [slice(3, 5)]  # heading
    blocks += [layout.joint_pos_slice(j) for j in range(layout.n_joints)]
    blocks += [layout.joint_rot_slice(j) for j in range(layout.n_joints)]
    blocks += [layout.contacts]
    for b in blocks:
        sub = mask[:, b]
        partial = np.any(sub > 0.5, axis=1) & ~np.all(sub > 0.5, axis=1)
        if np.any(partial):
            raise ValueError(f"mask not block-consistent in columns {b}")
    # 2D root: x and z always together
    xz = mask[:, [0, 2]]
    if np.any((xz[:, 0] > 0.5) != (xz[:, 1] > 0.5)):
        raise ValueError("root x/z must be masked together")


def _truncated_geometric(rng: np.random.Generator, k_max: int, p: float = 0.5) -> int:
    """Keyframe count biased to small values: P(k) ~ (1-p)^(k-1) on [1, k_max]."""
    if k_max <= 1:
        return 1
    weights = (1.0 - p) ** np.arange(k_max)
    weights /= weights.sum()
    return int(rng.choice(np.arange(1, k_max + 1), p=weights))


def max_keyframes(curriculum_progress: float) -> int:
    """Keyframe budget grows linearly from 1 to 20 across phase 2.

    Half-way values round up (ties-away), not banker's rounding.
    """
    progress = min(max(curriculum_progress, 0.0), 1.0)
    return int(np.floor(1.0 + 19.0 * progress + 0.5))


def _sample_one_pattern(
    pattern: ConstraintPattern,
    gt: np.ndarray,
    skeleton: Skeleton,
    layout: FeatureLayout,
    rng: np.random.Generator,
    k_max: int,
) -> ConstraintSpec:
    n = gt.shape[0]
    mask = np.zeros_like(gt)
    k = _truncated_geometric(rng, k_max)
    k = min(k, n)
    frames = rng.choice(n, size=k, replace=False)

    if pattern is ConstraintPattern.FULL_BODY_KEYFRAMES:
        mask[frames, layout.joint_pos] = 1.0
    elif pattern is ConstraintPattern.END_EFFECTOR_KEYFRAMES:
        ees = list(skeleton.end_effector_indices)
        subset = [j for j in ees if rng.random() < 0.5]
        if not subset:
            subset = [ees[rng.integers(len(ees))]]
        mode = rng.integers(3)  # 0 pos, 1 rot, 2 both
        for j in subset:
            pos_s, rot_s = layout.joint_pos_slice(j), layout.joint_rot_slice(j)
            if mode in (0, 2):
                mask[frames[:, None], np.arange(pos_s.start, pos_s.stop)] = 1.0
            if mode in (1, 2):
                mask[frames[:, None], np.arange(rot_s.start, rot_s.stop)] = 1.0
    elif pattern is ConstraintPattern.ROOT_2D_KEYFRAMES:
        mode = rng.integers(3)  # 0 pos, 1 heading, 2 both
        if mode in (0, 2):
            mask[frames[:, None], [0, 2]] = 1.0
        if mode in (1, 2):
            mask[frames[:, None], [3, 4]] = 1.0
    elif pattern is ConstraintPattern.ROOT_2D_DENSE_PATH:
        min_len = min(n, 15)
        length = int(rng.integers(min_len, n + 1))
        start = int(rng.integers(0, n - length + 1))
        rows = np.arange(start, start + length)
        mask[rows[:, None], [0, 2]] = 1.0
        if rng.random() < 0.5:
            mask[rows[:, None], [3, 4]] = 1.0
    elif pattern is ConstraintPattern.FOOT_CONTACT_KEYFRAMES:
        mask[frames, layout.contacts] = 1.0
    else:  # pragma: no cover
        raise ValueError(pattern)

    target = np.where(mask > 0.5, gt, 0.0)
    return ConstraintSpec(target, mask, [], normalized=False, patterns=[pattern.value])


def sample_constraint_pattern(
    gt_features: MotionFeatures | np.ndarray,
    skeleton: Skeleton,
    rng: np.random.Generator,
    curriculum_progress: float,
    none_probability: float = 0.10,
) -> ConstraintSpec:
    """Draw a training constraint from ground truth per the phase-2 recipe.

    At the default none_probability, 10% of draws carry no constraints, 25%
    mix two patterns, the rest use a single pattern (the two-pattern rate
    stays 25/90 of the constrained draws when none_probability changes, as
    the single-phase recipe does). Keyframe counts are biased to small values
    and capped by the linearly growing curriculum budget.

    The returned spec lives in the same space as gt_features (the caller
    normally passes normalized features; the `normalized` flag is copied).
    """
    if isinstance(gt_features, MotionFeatures):
        gt = gt_features.features
        normalized = gt_features.normalized
    else:
        gt = gt_features
        normalized = False
    layout = FeatureLayout(skeleton.n_joints)
    if gt.shape[1] != layout.width:
        raise ValueError("gt feature width does not match skeleton")

    u = rng.random()
    two_threshold = none_probability + (0.25 / 0.90) * (1.0 - none_probability)
    if u < none_probability:
        spec = empty_spec(gt.shape[0], gt.shape[1])
    else:
        k_max = max_keyframes(curriculum_progress)
        patterns = list(ConstraintPattern)
        if u < two_threshold:
            pair = rng.choice(len(patterns), size=2, replace=False)
            a = _sample_one_pattern(patterns[pair[0]], gt, skeleton, layout, rng, k_max)
            b = _sample_one_pattern(patterns[pair[1]], gt, skeleton, layout, rng, k_max)
            spec = merge_specs(a, b)
        else:
            choice = patterns[rng.integers(len(patterns))]
            spec = _sample_one_pattern(choice, gt, skeleton, layout, rng, k_max)
    spec.normalized = normalized
    return spec


def _check_frame(frame: int, n_frames: int, item: dict) -> None:
    if not (0 <= frame < n_frames):
        raise ValueError(f"frame {frame} out of range [0, {n_frames}) in item {item.get('kind')}")


def build_spec_from_items(
    items: list[dict],
    skeleton: Skeleton,
    n_frames: int,
    fps: float,
) -> ConstraintSpec:
    """High-level constraint items -> feature-space spec (unnormalized).

    Item schemas (frames are integer indices at the motion fps):
      waypoint:           {kind, frame, position: [x, z], heading?: [cos, sin]}
      dense_path:         {kind, start_frame, end_frame (inclusive),
                           positions: [[x, z] ...], headings?: [[cos, sin] ...]}
      full_body_keyframe: {kind, frame, positions: [[x, y, z] x J] world}
      end_effector:       {kind, frame, joint, position?: [dx, y, dz],
                           rotation_6d?: [6]}
      foot_contact:       {kind, frame, contacts: [4] in {0,1}}

    Waypoint / path positions are world ground-plane targets for the smoothed
    root. Full-body keyframes are world positions; they also pin the root
    track to the keyframe's pelvis so the root-relative encoding is defined.
    End-effector positions use the feature frame directly: dx/dz relative to
    the smoothed root at that frame, y absolute.
    """
    layout = FeatureLayout(skeleton.n_joints)
    target = np.zeros((n_frames, layout.width))
    mask = np.zeros((n_frames, layout.width))

    def occupied(rows, cols):
        sub = mask[np.asarray(rows)[:, None], np.asarray(cols)]
        return np.any(sub > 0.5)

    for item in items:
        kind = item.get("kind")
        if kind == "waypoint":
            frame = int(item["frame"])
            _check_frame(frame, n_frames, item)
            if occupied([frame], [0, 2]):
                raise ValueError(f"duplicate root constraint at frame {frame}")
            x, z = item["position"]
            target[frame, 0] = x
            target[frame, 2] = z
            mask[frame, [0, 2]] = 1.0
            if item.get("heading") is not None:
                c, s = item["heading"]
                target[frame, 3] = c
                target[frame, 4] = s
                mask[frame, [3, 4]] = 1.0
        elif kind == "dense_path":
            start, end = int(item["start_frame"]), int(item["end_frame"])
            _check_frame(start, n_frames, item)
            _check_frame(end, n_frames, item)
            if end < start:
                raise ValueError("dense_path end_frame before start_frame")
            rows = np.arange(start, end + 1)
            positions = np.asarray(item["positions"], dtype=np.float64)
            if positions.shape != (len(rows), 2):
                raise ValueError(
                    f"dense_path expects {len(rows)} positions, got {positions.shape}"
                )
            if occupied(rows, [0, 2]):
                raise ValueError("dense_path overlaps another root constraint")
            target[rows, 0] = positions[:, 0]
            target[rows, 2] = positions[:, 1]
            mask[rows[:, None], [0, 2]] = 1.0
            if item.get("headings") is not None:
                headings = np.asarray(item["headings"], dtype=np.float64)
                if headings.shape != (len(rows), 2):
                    raise ValueError("dense_path headings length mismatch")
                target[rows, 3] = headings[:, 0]
                target[rows, 4] = headings[:, 1]
                mask[rows[:, None], [3, 4]] = 1.0
        elif kind == "full_body_keyframe":
            frame = int(item["frame"])
            _check_frame(frame, n_frames, item)
            positions = np.asarray(item["positions"], dtype=np.float64)
            if positions.shape != (skeleton.n_joints, 3):
                raise ValueError(
                    f"full_body_keyframe expects [{skeleton.n_joints},3] positions"
                )
            if occupied([frame], [0, 2]):
                raise ValueError(f"duplicate root constraint at frame {frame}")
            pelvis = positions[0]
            target[frame, 0] = pelvis[0]
            target[frame, 1] = pelvis[1]
            target[frame, 2] = pelvis[2]
            mask[frame, [0, 1, 2]] = 1.0
            rel = positions.copy()
            rel[:, 0] -= pelvis[0]
            rel[:, 2] -= pelvis[2]
            target[frame, layout.joint_pos] = rel.reshape(-1)
            mask[frame, layout.joint_pos] = 1.0
        elif kind == "end_effector":
            frame = int(item["frame"])
            _check_frame(frame, n_frames, item)
            joint = skeleton.joint_index(item["joint"])
            if item.get("position") is None and item.get("rotation_6d") is None:
                raise ValueError("end_effector item needs a position and/or rotation")
            if item.get("position") is not None:
                s = layout.joint_pos_slice(joint)
                if np.any(mask[frame, s] > 0.5):
                    raise ValueError(
                        f"duplicate position constraint on {item['joint']} at frame {frame}"
                    )
                target[frame, s] = np.asarray(item["position"], dtype=np.float64)
                mask[frame, s] = 1.0
            if item.get("rotation_6d") is not None:
                s = layout.joint_rot_slice(joint)
                if np.any(mask[frame, s] > 0.5):
                    raise ValueError(
                        f"duplicate rotation constraint on {item['joint']} at frame {frame}"
                    )
                target[frame, s] = np.asarray(item["rotation_6d"], dtype=np.float64)
                mask[frame, s] = 1.0
        elif kind == "foot_contact":
            frame = int(item["frame"])
            _check_frame(frame, n_frames, item)
            target[frame, layout.contacts] = np.asarray(item["contacts"], dtype=np.float64)
            mask[frame, layout.contacts] = 1.0
        else:
            raise ValueError(f"unknown constraint kind: {kind!r}")

    return ConstraintSpec(target, mask, [dict(i) for i in items], normalized=False)


def spec_to_items(spec: ConstraintSpec, skeleton: Skeleton) -> list[dict]:
    """Reconstruct the high-level item list from a feature-space spec.

    Inverse of build_spec_from_items for specs it produced: consecutive runs
    (>= 2 frames) of root constraints become dense paths, singletons become
    waypoints.
    """
    if spec.normalized:
        raise ValueError("spec must be denormalized first")
    layout = FeatureLayout(skeleton.n_joints)
    mask, target = spec.mask, spec.target
    n = spec.n_frames
    items: list[dict] = []

    full_body_frames = set()
    for frame in range(n):
        if np.all(mask[frame, layout.joint_pos] > 0.5):
            full_body_frames.add(frame)
            rel = target[frame, layout.joint_pos].reshape(-1, 3).copy()
            rel[:, 0] += target[frame, 0]
            rel[:, 2] += target[frame, 2]
            items.append(
                {"kind": "full_body_keyframe", "frame": frame, "positions": rel.tolist()}
            )

    root_frames = [
        f for f in range(n) if mask[f, 0] > 0.5 and f not in full_body_frames
    ]
    runs: list[list[int]] = []
    for f in root_frames:
        if runs and runs[-1][-1] == f - 1:
            runs[-1].append(f)
        else:
            runs.append([f])
    for run in runs:
        has_heading = bool(np.all(mask[run, 3] > 0.5))
        if len(run) == 1:
            frame = run[0]
            item = {"kind": "waypoint", "frame": frame,
                    "position": [target[frame, 0], target[frame, 2]]}
            if has_heading:
                item["heading"] = [target[frame, 3], target[frame, 4]]
            items.append(item)
        else:
            item = {
                "kind": "dense_path",
                "start_frame": run[0],
                "end_frame": run[-1],
                "positions": [[target[f, 0], target[f, 2]] for f in run],
            }
            if has_heading:
                item["headings"] = [[target[f, 3], target[f, 4]] for f in run]
            items.append(item)

    for frame in range(n):
        if frame in full_body_frames:
            continue
        for j in range(layout.n_joints):
            pos_s = layout.joint_pos_slice(j)
            rot_s = layout.joint_rot_slice(j)
            has_pos = np.all(mask[frame, pos_s] > 0.5)
            has_rot = np.all(mask[frame, rot_s] > 0.5)
            if not (has_pos or has_rot):
                continue
            item = {"kind": "end_effector", "frame": frame, "joint": skeleton.joint_names[j]}
            if has_pos:
                item["position"] = target[frame, pos_s].tolist()
            if has_rot:
                item["rotation_6d"] = target[frame, rot_s].tolist()
            items.append(item)

    for frame in range(n):
        if np.all(mask[frame, layout.contacts] > 0.5):
            items.append(
                {
                    "kind": "foot_contact",
                    "frame": frame,
                    "contacts": target[frame, layout.contacts].tolist(),
                }
            )
    return items
