"""End-to-end generation: request -> sampling -> decoding -> post-processing.

Post-processing order is foot locking first, then the exact-constraint
refinement, so the refinement can undo any constraint drift the foot edits
introduce. Both passes are near no-ops on already-clean input.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .constraints import ConstraintSpec, build_spec_from_items, empty_spec
from .diffusion import GuidanceWeights, sample
from .errors import ConfigError
from .evaluation import ConstraintErrors, constraint_errors
from .ik import two_bone_ik
from .motion_repr import (
    FeatureLayout,
    MotionFeatures,
    RawMotion,
    decode,
    denormalize,
)
from .rotations import (
    geodesic_angle,
    matrix_to_rotation_6d,
    rotation_6d_to_matrix,
    slerp_matrices,
)
from .skeleton import Skeleton
from . import diffkin

MAX_SEGMENT_SECONDS = 10.0
JUNCTION_KEYFRAMES = 3
DEFAULT_OVERLAP_S = 0.5


@dataclass
class GenerationRequest:
    prompts: list  # [{"text": str, "duration_s": float}]
    constraints: list = field(default_factory=list)  # high-level items
    initial_heading: tuple = (1.0, 0.0)
    guidance: GuidanceWeights = field(default_factory=GuidanceWeights)
    steps: int = 100
    seed: int = 0
    fps: float = 30.0
    foot_lock: bool = True
    exact_constraints: bool = True

    def validate(self) -> None:
        if not self.prompts:
            raise ValueError("at least one prompt segment required")
        for p in self.prompts:
            if p.get("duration_s", 0) <= 0:
                raise ValueError("durations must be positive")
            if p["duration_s"] > MAX_SEGMENT_SECONDS:
                raise ValueError(
                    f"segment duration {p['duration_s']} exceeds {MAX_SEGMENT_SECONDS} s"
                )
        h = np.asarray(self.initial_heading, dtype=np.float64)
        if h.shape != (2,) or abs(np.linalg.norm(h) - 1.0) > 1e-3:
            raise ValueError("initial_heading must be a unit 2-vector")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def to_dict(self) -> dict:
        return {
            "prompts": self.prompts,
            "constraints": self.constraints,
            "initial_heading": list(self.initial_heading),
            "guidance": {"w_text": self.guidance.w_text, "w_constr": self.guidance.w_constr},
            "steps": self.steps,
            "seed": self.seed,
            "fps": self.fps,
            "postprocess": {"foot_lock": self.foot_lock, "exact_constraints": self.exact_constraints},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationRequest":
        guidance = data.get("guidance", {})
        post = data.get("postprocess", {})
        return cls(
            prompts=data["prompts"],
            constraints=data.get("constraints", []),
            initial_heading=tuple(data.get("initial_heading", (1.0, 0.0))),
            guidance=GuidanceWeights(
                w_text=float(guidance.get("w_text", 2.0)),
                w_constr=float(guidance.get("w_constr", 2.0)),
            ),
            steps=int(data.get("steps", 100)),
            seed=int(data.get("seed", 0)),
            fps=float(data.get("fps", 30.0)),
            foot_lock=bool(post.get("foot_lock", True)),
            exact_constraints=bool(post.get("exact_constraints", True)),
        )


@dataclass
class GenerationResult:
    motion: RawMotion
    features: MotionFeatures  # unnormalized feature view of the motion
    errors: ConstraintErrors
    seed: int
    timing_s: float
    segment_boundaries: list
    flags: dict = field(default_factory=dict)


def total_frames_of(request: GenerationRequest, overlap_s: float = DEFAULT_OVERLAP_S) -> int:
    """Output frame count: segment frames minus the junction overlaps."""
    seg = [int(round(p["duration_s"] * request.fps)) for p in request.prompts]
    if len(seg) == 1:
        return seg[0]
    overlap = max(2, int(round(overlap_s * request.fps)))
    return sum(seg) - (len(seg) - 1) * overlap


def validate_request(request: GenerationRequest, skeleton: Skeleton) -> None:
    """Full request validation without running the model (dry-run path)."""
    request.validate()
    if request.constraints:
        build_spec_from_items(
            request.constraints, skeleton, total_frames_of(request), request.fps
        )


class _DenoiserAdapter:
    """Bridges the numpy sampler and the torch model for one generation."""

    def __init__(self, bundle, c_dir: np.ndarray, n_frames: int):
        self.bundle = bundle
        self.c_dir = torch.tensor(np.asarray(c_dir, dtype=np.float32)).unsqueeze(0)
        self.lengths = torch.tensor([n_frames])

    def __call__(self, x_in: np.ndarray, text: np.ndarray | None, t: int) -> np.ndarray:
        model = self.bundle.model
        x = torch.from_numpy(np.ascontiguousarray(x_in, dtype=np.float32)).unsqueeze(0)
        t_tensor = torch.tensor([t])
        text_tensor = None
        if text is not None:
            text_tensor = torch.from_numpy(np.ascontiguousarray(text, dtype=np.float32)).unsqueeze(0)
        with torch.no_grad():
            out = model(x, t_tensor, self.c_dir, text=text_tensor, lengths=self.lengths)
        return out[0].numpy().astype(np.float64)


def _generate_features(
    bundle,
    text: str | None,
    n_frames: int,
    spec: ConstraintSpec | None,
    c_dir: np.ndarray,
    weights: GuidanceWeights,
    steps: int,
    seed: int,
    fps: float,
    final_imputation: bool = True,
) -> MotionFeatures:
    layout = FeatureLayout(bundle.skeleton.n_joints)
    if n_frames > bundle.denoiser_config.max_frames:
        raise ValueError(
            f"{n_frames} frames exceeds the model's max_frames={bundle.denoiser_config.max_frames}"
        )
    adapter = _DenoiserAdapter(bundle, c_dir, n_frames)
    text_embedding = None
    if text and text.strip():
        text_embedding = bundle.embedder.embed(text)
    normalized_spec = spec.normalize(bundle.stats) if spec is not None and not spec.normalized else spec
    out = sample(
        adapter,
        n_frames,
        layout.width,
        bundle.schedule,
        spec=normalized_spec,
        text_embedding=text_embedding,
        weights=weights,
        steps=steps,
        seed=seed,
        fps=fps,
        final_imputation=final_imputation,
    )
    return denormalize(out, bundle.stats)


def reassemble_features(motion: RawMotion, skeleton: Skeleton) -> MotionFeatures:
    """Feature view of an edited motion, reusing its carried root/contact
    channels rather than recomputing them (generated motions own those)."""
    if motion.smoothed_root is None or motion.heading is None or motion.contacts is None:
        raise ValueError("motion is missing generated side channels")
    layout = FeatureLayout(skeleton.n_joints)
    n = motion.n_frames
    feats = np.zeros((n, layout.width))
    feats[:, layout.root_pos] = motion.smoothed_root
    feats[:, layout.heading] = motion.heading
    jp = motion.joint_positions.copy()
    jp[:, :, 0] -= motion.smoothed_root[:, None, 0]
    jp[:, :, 2] -= motion.smoothed_root[:, None, 2]
    feats[:, layout.joint_pos] = jp.reshape(n, -1)
    vel = np.empty_like(motion.joint_positions)
    vel[:-1] = motion.joint_positions[1:] - motion.joint_positions[:-1]
    vel[-1] = vel[-2] if n > 1 else 0.0
    feats[:, layout.joint_vel] = vel.reshape(n, -1)
    feats[:, layout.joint_rot] = motion.rotations_6d.reshape(n, -1)
    feats[:, layout.contacts] = motion.contacts
    return MotionFeatures(feats, motion.fps, normalized=False)


def generate(
    request: GenerationRequest,
    bundle,
    spec_override: ConstraintSpec | None = None,
    final_imputation: bool = True,
) -> GenerationResult:
    """Run the full pipeline for a request (multi-prompt aware).

    final_imputation=False skips the sampler's terminal masked overwrite so
    evaluation reads the denoiser's own constraint following.
    """
    request.validate()
    if bundle.skeleton.skeleton_id != "humanoid27-v1":
        raise ConfigError("bundle skeleton mismatch")
    if len(request.prompts) > 1:
        return sequence_prompts(
            request, bundle, spec_override=spec_override, final_imputation=final_imputation
        )

    t0 = time.time()
    skeleton = bundle.skeleton
    layout = FeatureLayout(skeleton.n_joints)
    n_frames = int(round(request.prompts[0]["duration_s"] * request.fps))
    if spec_override is not None:
        spec = spec_override
        if spec.n_frames != n_frames:
            raise ValueError("spec_override length mismatch")
    elif request.constraints:
        spec = build_spec_from_items(request.constraints, skeleton, n_frames, request.fps)
    else:
        spec = None

    feats = _generate_features(
        bundle,
        request.prompts[0].get("text"),
        n_frames,
        spec,
        np.asarray(request.initial_heading, dtype=np.float64),
        request.guidance,
        request.steps,
        request.seed,
        request.fps,
        final_imputation=final_imputation,
    )
    motion = decode(feats, skeleton)
    flags = {}
    if request.foot_lock:
        motion, lock_flags = foot_lock_postprocess(motion, skeleton)
        flags.update(lock_flags)
    if request.exact_constraints and spec is not None and not spec.is_empty:
        motion, refine_flags = exact_constraint_refine(motion, spec, skeleton)
        flags.update(refine_flags)
    feats_out = reassemble_features(motion, skeleton)
    errors = (
        constraint_errors(feats_out, spec, skeleton)
        if spec is not None
        else ConstraintErrors()
    )
    return GenerationResult(
        motion=motion,
        features=feats_out,
        errors=errors,
        seed=request.seed,
        timing_s=time.time() - t0,
        segment_boundaries=[0, n_frames],
        flags=flags,
    )


def sequence_prompts(
    request: GenerationRequest,
    bundle,
    overlap_s: float = DEFAULT_OVERLAP_S,
    spec_override: ConstraintSpec | None = None,
    final_imputation: bool = True,
) -> GenerationResult:
    """Generate k prompts in sequence with junction keyframes + blending.

    Each segment after the first is generated with its first `overlap`
    frames overlapping the accumulated motion; full-body keyframes copied
    from that tail anchor positions and (through their spacing) the
    accelerations, and the shared frames are cross-faded after generation.
    Output length is the sum of segment frames minus the overlaps.
    """
    request.validate()
    t0 = time.time()
    skeleton = bundle.skeleton
    layout = FeatureLayout(skeleton.n_joints)
    fps = request.fps
    overlap = max(2, int(round(overlap_s * fps)))
    seg_frames = [int(round(p["duration_s"] * fps)) for p in request.prompts]
    total_frames = total_frames_of(request, overlap_s)

    full_spec = None
    if spec_override is not None:
        full_spec = spec_override
    elif request.constraints:
        full_spec = build_spec_from_items(request.constraints, skeleton, total_frames, fps)

    def slice_spec(spec, start, length):
        if spec is None:
            return None
        sub = ConstraintSpec(
            spec.target[start : start + length].copy(),
            spec.mask[start : start + length].copy(),
            [],
            spec.normalized,
        )
        return sub

    boundaries = [0]
    accumulated: MotionFeatures | None = None
    c_dir = np.asarray(request.initial_heading, dtype=np.float64)
    cursor = 0
    for k, (prompt, n_k) in enumerate(zip(request.prompts, seg_frames)):
        seg_spec = slice_spec(full_spec, cursor, n_k)
        if k > 0:
            tail = accumulated.features[-overlap:]
            junction = empty_spec(n_k, layout.width)
            key_rows = sorted({0, overlap // 2, overlap - 1})
            for row in key_rows:
                junction.mask[row, layout.joint_pos] = 1.0
                junction.target[row, layout.joint_pos] = tail[row, layout.joint_pos]
                junction.mask[row, [0, 1, 2, 3, 4]] = 1.0
                junction.target[row, :5] = tail[row, :5]
            if seg_spec is not None:
                from .constraints import merge_specs

                seg_spec = merge_specs(junction, seg_spec)
            else:
                seg_spec = junction
            c_dir = tail[0, 3:5].copy()
        feats = _generate_features(
            bundle,
            prompt.get("text"),
            n_k,
            seg_spec,
            c_dir,
            request.guidance,
            request.steps,
            request.seed + k,
            fps,
            final_imputation=final_imputation,
        )
        if k == 0:
            accumulated = feats
        else:
            acc = accumulated.features
            new = feats.features.copy()
            join = acc.shape[0] - overlap
            blended = acc.copy()
            rot_sl = layout.joint_rot
            for i in range(overlap):
                w = (i + 1) / (overlap + 1)
                row = join + i
                blended[row] = (1 - w) * acc[row] + w * new[i]
                rot_a = rotation_6d_to_matrix(acc[row, rot_sl].reshape(-1, 6))
                rot_b = rotation_6d_to_matrix(new[i, rot_sl].reshape(-1, 6))
                blended[row, rot_sl] = matrix_to_rotation_6d(
                    slerp_matrices(rot_a, rot_b, w)
                ).reshape(-1)
            accumulated = MotionFeatures(
                np.concatenate([blended, new[overlap:]], axis=0), fps, normalized=False
            )
        cursor += n_k - (overlap if k + 1 < len(seg_frames) else 0)
        boundaries.append(accumulated.n_frames)

    motion = decode(accumulated, skeleton)
    flags = {}
    if request.foot_lock:
        motion, lock_flags = foot_lock_postprocess(motion, skeleton)
        flags.update(lock_flags)
    if request.exact_constraints and full_spec is not None and not full_spec.is_empty:
        motion, refine_flags = exact_constraint_refine(motion, full_spec, skeleton)
        flags.update(refine_flags)
    feats_out = reassemble_features(motion, skeleton)
    errors = (
        constraint_errors(feats_out, full_spec, skeleton)
        if full_spec is not None
        else ConstraintErrors()
    )
    return GenerationResult(
        motion=motion,
        features=feats_out,
        errors=errors,
        seed=request.seed,
        timing_s=time.time() - t0,
        segment_boundaries=boundaries,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# post-processing


def _contact_runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous [start, end) runs of a boolean sequence."""
    runs = []
    start = None
    for i, v in enumerate(flags):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(flags)))
    return runs


def foot_lock_postprocess(
    motion: RawMotion, skeleton: Skeleton, blend_frames: int = 3
) -> tuple[RawMotion, dict]:
    """Pin contact-flagged foot joints and re-solve the legs with 2-bone IK.

    Each contiguous predicted-contact interval pins the foot to its
    interval-median position; the ankle target shifts accordingly, the leg
    chain is re-solved (preserving the knee plane), and the edit blends in
    and out over `blend_frames` frames. Unreachable targets clamp to the
    reachable sphere and set the "clamped" flag.
    """
    if motion.contacts is None:
        raise ValueError("motion has no contact channel")
    out = motion.copy()
    n = motion.n_frames
    positions = out.joint_positions
    rotations = rotation_6d_to_matrix(out.rotations_6d)
    flags = {"foot_lock_clamped": False, "foot_lock_edits": 0}

    upper_len = abs(skeleton.rest_offsets[skeleton.joint_index("left_knee")][1])
    lower_len = abs(skeleton.rest_offsets[skeleton.joint_index("left_ankle")][1])

    for side, heel_col, toe_col in (("left", 0, 1), ("right", 2, 3)):
        hip_i = skeleton.joint_index(f"{side}_hip")
        knee_i = skeleton.joint_index(f"{side}_knee")
        ankle_i = skeleton.joint_index(f"{side}_ankle")
        heel_i = skeleton.joint_index(f"{side}_heel")
        toe_i = skeleton.joint_index(f"{side}_toe")

        # FK-consistent foot positions: where the foot will land after the
        # ankle edit, regardless of any position/rotation mismatch in the
        # decoded channels
        fk_heel = positions[:, ankle_i] + np.einsum(
            "nij,j->ni", rotations[:, ankle_i], skeleton.rest_offsets[heel_i]
        )
        fk_toe = fk_heel + np.einsum(
            "nij,j->ni", rotations[:, heel_i], skeleton.rest_offsets[toe_i]
        )
        delta = np.zeros((n, 3))
        weight = np.zeros(n)
        for col, joint, fk_pos in ((heel_col, heel_i, fk_heel), (toe_col, toe_i, fk_toe)):
            contact = motion.contacts[:, col] > 0.5
            for start, end in _contact_runs(contact):
                if end - start < 2:
                    continue
                pin = np.median(positions[start:end, joint], axis=0)
                # pin the flagged interval plus one trailing frame (contact
                # labels drop the final stance frame whose forward difference
                # reaches into the swing, but it is still physically planted);
                # the blend ramp lives on the surrounding swing frames so
                # contact frames never move
                pin_end = min(end + 1, n)
                d_in = pin - fk_pos[start]
                d_out = pin - fk_pos[pin_end - 1]
                for f in range(max(0, start - blend_frames), min(n, pin_end + blend_frames)):
                    if f < start:
                        w = (f - (start - blend_frames) + 1) / (blend_frames + 1)
                        delta[f] += d_in * w
                    elif f >= pin_end:
                        w = (pin_end + blend_frames - f) / (blend_frames + 1)
                        delta[f] += d_out * w
                    else:
                        delta[f] += pin - fk_pos[f]
                    weight[f] += 1.0
                flags["foot_lock_edits"] += 1
        active = weight > 0
        if not np.any(active):
            continue
        delta[active] /= weight[active, None]

        hip_pos = positions[:, hip_i]
        ankle_target = positions[:, ankle_i] + delta
        # knee plane hint from the current pose
        dir_vec = positions[:, ankle_i] - hip_pos
        dir_norm = np.linalg.norm(dir_vec, axis=1, keepdims=True)
        dir_unit = dir_vec / np.where(dir_norm < 1e-9, 1.0, dir_norm)
        knee_off = positions[:, knee_i] - hip_pos
        hint = knee_off - np.sum(knee_off * dir_unit, axis=1, keepdims=True) * dir_unit
        hint_norm = np.linalg.norm(hint, axis=1, keepdims=True)
        fallback = np.stack(
            [motion.heading[:, 0], np.zeros(n), motion.heading[:, 1]], axis=1
        ) if motion.heading is not None else np.tile([1.0, 0.0, 0.0], (n, 1))
        hint = np.where(hint_norm < 1e-6, fallback, hint / np.where(hint_norm < 1e-9, 1.0, hint_norm))

        hip_rot, knee_rot, reached = two_bone_ik(
            hip_pos[active], ankle_target[active], upper_len, lower_len, hint[active]
        )
        if not np.all(reached):
            flags["foot_lock_clamped"] = True
        rotations[active, hip_i] = hip_rot
        rotations[active, knee_i] = knee_rot
        # re-run FK along the leg chain only
        rows = np.nonzero(active)[0]
        positions[rows, knee_i] = (
            positions[rows, hip_i]
            + np.einsum("nij,j->ni", rotations[rows, hip_i], skeleton.rest_offsets[knee_i])
        )
        positions[rows, ankle_i] = (
            positions[rows, knee_i]
            + np.einsum("nij,j->ni", rotations[rows, knee_i], skeleton.rest_offsets[ankle_i])
        )
        positions[rows, heel_i] = (
            positions[rows, ankle_i]
            + np.einsum("nij,j->ni", rotations[rows, ankle_i], skeleton.rest_offsets[heel_i])
        )
        positions[rows, toe_i] = (
            positions[rows, heel_i]
            + np.einsum("nij,j->ni", rotations[rows, heel_i], skeleton.rest_offsets[toe_i])
        )

    out.joint_positions = positions
    out.rotations_6d = matrix_to_rotation_6d(rotations)
    return out, flags


def exact_constraint_refine(
    motion: RawMotion,
    spec: ConstraintSpec,
    skeleton: Skeleton,
    max_iterations: int = 200,
    pos_tol_m: float = 1e-3,
    rot_tol_deg: float = 0.1,
    smoothness: float = 10.0,
    magnitude: float = 0.1,
) -> tuple[RawMotion, dict]:
    """Least-squares cleanup so the motion exactly hits its constraints.

    Optimizes per-frame rigid translation offsets plus per-joint rotation
    perturbations (axis-angle, applied on the left of the global rotations).
    Joint positions move by the translation plus the FK delta the rotation
    tweaks induce, so rotation edits move positions consistently. The
    objective is residual-dominated with an acceleration penalty
    (`smoothness`, second differences) and a small magnitude penalty that
    keeps edits local to the constrained frames.
    """
    if spec.normalized:
        raise ValueError("refine expects an unnormalized spec")
    layout = FeatureLayout(skeleton.n_joints)
    n = motion.n_frames
    j = skeleton.n_joints
    mask, target = spec.mask, spec.target
    flags = {"refine_converged": True, "refine_iterations": 0}

    pos_entries = []  # (frame, joint, target_xyz_feature_frame)
    rot_entries = []  # (frame, joint, target_matrix)
    root_rows = np.nonzero(mask[:, 0] > 0.5)[0]
    for frame in range(n):
        for joint in range(j):
            sl = layout.joint_pos_slice(joint)
            if np.all(mask[frame, sl] > 0.5):
                pos_entries.append((frame, joint, target[frame, sl]))
            rl = layout.joint_rot_slice(joint)
            if np.all(mask[frame, rl] > 0.5):
                rot_entries.append((frame, joint, rotation_6d_to_matrix(target[frame, rl])))
    if not pos_entries and not rot_entries and root_rows.size == 0:
        return motion.copy(), flags

    smoothed_root = motion.smoothed_root
    if smoothed_root is None:
        from .motion_repr import smooth_root

        smoothed_root = smooth_root(motion.joint_positions[:, 0], motion.fps)

    positions = torch.tensor(motion.joint_positions)
    base_rot = torch.tensor(rotation_6d_to_matrix(motion.rotations_6d))
    root_track = torch.tensor(smoothed_root)

    delta_p = torch.zeros(n, 3, dtype=torch.float64, requires_grad=True)
    delta_r = torch.zeros(n, j, 3, dtype=torch.float64, requires_grad=True)

    root_rows_t = torch.tensor(root_rows, dtype=torch.long)
    root_targets = torch.tensor(target[root_rows][:, [0, 2]]) if root_rows.size else None
    pos_f = torch.tensor([e[0] for e in pos_entries], dtype=torch.long)
    pos_j = torch.tensor([e[1] for e in pos_entries], dtype=torch.long)
    pos_t = (
        torch.tensor(np.stack([e[2] for e in pos_entries]))
        if pos_entries
        else torch.zeros(0, 3, dtype=torch.float64)
    )
    rot_f = torch.tensor([e[0] for e in rot_entries], dtype=torch.long)
    rot_j = torch.tensor([e[1] for e in rot_entries], dtype=torch.long)
    rot_t = (
        torch.tensor(np.stack([e[2] for e in rot_entries]))
        if rot_entries
        else torch.zeros(0, 3, 3, dtype=torch.float64)
    )

    def axis_angle_matrices(v: torch.Tensor) -> torch.Tensor:
        theta = v.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        axis = v / theta
        x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
        zeros = torch.zeros_like(x)
        k = torch.stack(
            [
                torch.stack([zeros, -z, y], -1),
                torch.stack([z, zeros, -x], -1),
                torch.stack([-y, x, zeros], -1),
            ],
            dim=-2,
        )
        theta = theta.unsqueeze(-1)
        eye = torch.eye(3, dtype=v.dtype).expand(k.shape)
        return eye + torch.sin(theta) * k + (1 - torch.cos(theta)) * (k @ k)

    base_fk = diffkin.forward_kinematics(skeleton, positions[:, 0], base_rot)

    def current_state():
        rot_all = axis_angle_matrices(delta_r) @ base_rot
        fk_new = diffkin.forward_kinematics(skeleton, positions[:, 0], rot_all)
        pos_new = positions + delta_p.unsqueeze(1) + (fk_new - base_fk)
        root_new = root_track + delta_p
        return rot_all, pos_new, root_new

    def objective():
        rot_all, pos_new, root_new = current_state()
        loss = torch.zeros((), dtype=torch.float64)
        if root_targets is not None:
            res = root_new[root_rows_t][:, [0, 2]] - root_targets
            loss = loss + 1e4 * (res**2).sum()
        if len(pos_entries):
            achieved = pos_new[pos_f, pos_j].clone()
            achieved[:, 0] = achieved[:, 0] - root_new[pos_f, 0]
            achieved[:, 2] = achieved[:, 2] - root_new[pos_f, 2]
            loss = loss + 1e4 * ((achieved - pos_t) ** 2).sum()
        if len(rot_entries):
            res = rot_all[rot_f, rot_j] - rot_t
            loss = loss + 1e4 * (res**2).sum()
        for var in (delta_p, delta_r.reshape(n, -1)):
            if n > 2:
                accel = var[2:] - 2 * var[1:-1] + var[:-2]
                loss = loss + smoothness * (accel**2).sum()
            loss = loss + magnitude * (var**2).sum()
        return loss

    def residuals() -> tuple[float, float]:
        with torch.no_grad():
            rot_all, pos_new, root_new = current_state()
            worst_pos = 0.0
            if root_targets is not None:
                worst_pos = max(
                    worst_pos,
                    float((root_new[root_rows_t][:, [0, 2]] - root_targets).norm(dim=1).max()),
                )
            if len(pos_entries):
                achieved = pos_new[pos_f, pos_j].clone()
                achieved[:, 0] -= root_new[pos_f, 0]
                achieved[:, 2] -= root_new[pos_f, 2]
                worst_pos = max(worst_pos, float((achieved - pos_t).norm(dim=1).max()))
            worst_rot = 0.0
            if len(rot_entries):
                ang = geodesic_angle(
                    rot_all[rot_f, rot_j].numpy(), rot_t.numpy()
                )
                worst_rot = float(np.degrees(ang).max())
        return worst_pos, worst_rot

    worst_pos, worst_rot = residuals()
    if worst_pos < pos_tol_m and worst_rot < rot_tol_deg:
        return motion.copy(), flags

    optimizer = torch.optim.LBFGS(
        [delta_p, delta_r], lr=0.8, max_iter=20, tolerance_grad=1e-12, tolerance_change=1e-14
    )

    def closure():
        optimizer.zero_grad()
        loss = objective()
        loss.backward()
        return loss

    iterations = 0
    while iterations < max_iterations:
        optimizer.step(closure)
        iterations += 20
        worst_pos, worst_rot = residuals()
        if worst_pos < pos_tol_m and worst_rot < rot_tol_deg:
            break
    flags["refine_iterations"] = iterations
    flags["refine_converged"] = worst_pos < pos_tol_m and worst_rot < rot_tol_deg
    flags["refine_worst_pos_m"] = worst_pos
    flags["refine_worst_rot_deg"] = worst_rot

    with torch.no_grad():
        rot_all, pos_new, root_new = current_state()
    out = motion.copy()
    out.joint_positions = pos_new.numpy()
    out.rotations_6d = matrix_to_rotation_6d(rot_all.numpy())
    out.smoothed_root = root_new.numpy()
    return out, flags
