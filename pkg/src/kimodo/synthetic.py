"""Procedural motion dataset: parametric families with template texts.

Every clip is built rotation-first: torso/arm curves and IK-derived leg
rotations are assembled per frame and positions come from one forward
kinematics pass, so positions and rotations are exactly consistent. Stance
feet are world-fixed during stance by construction (the IK reaches an anchored
ankle target), which gives the dataset a near-zero foot-skate floor.

Families: straight_walk, arc_walk, turn_in_place, stand_wave, squat, reach,
side_step, walk_then_wave. Splits hold out whole families so the test set
contains only unseen behaviors.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .ik import two_bone_ik
from .motion_repr import RawMotion, encode, smooth_root, standardize
from .rotations import heading_rotation, matrix_to_rotation_6d, rotation_6d_to_matrix, slerp_matrices
from .skeleton import Skeleton, canonical_skeleton, forward_kinematics
from .training import TrainItem

FAMILIES = (
    "straight_walk",
    "arc_walk",
    "turn_in_place",
    "stand_wave",
    "squat",
    "reach",
    "side_step",
    "walk_then_wave",
)

PARAM_RANGES = {
    "speed": (0.5, 1.8),  # m/s
    "turn_radius": (0.5, 6.0),  # m
    "duration_s": (3.0, 10.0),
}

_TEXTS = {
    "straight_walk": [
        "A person walks forward{adv}.",
        "A person walks in a straight line{adv}.",
        "A person strolls ahead{adv}.",
        "Someone walks forwards{adv}.",
    ],
    "arc_walk": [
        "A person walks in a curve to the {side}.",
        "A person walks along an arc turning {side}.",
        "Someone walks forward while curving to the {side}.",
        "A person follows a curved path to the {side}.",
    ],
    "turn_in_place": [
        "A person turns around in place to the {side}.",
        "A person rotates on the spot towards the {side}.",
        "Someone turns their body {side} without walking.",
    ],
    "stand_wave": [
        "A person stands and waves their right hand.",
        "A person waves with the right arm.",
        "Someone stands in place waving hello.",
        "A person greets by waving their hand.",
    ],
    "squat": [
        "A person squats down and stands back up.",
        "A person performs squats.",
        "Someone bends their knees into a squat and rises.",
        "A person does a squatting exercise.",
    ],
    "reach": [
        "A person reaches forward with their right arm.",
        "A person extends an arm to reach for something.",
        "Someone reaches out in front of them.",
        "A person stretches their right hand forwards.",
    ],
    "side_step": [
        "A person side steps to the {side}.",
        "A person steps sideways to the {side}.",
        "Someone shuffles {side}ward while facing forward.",
    ],
    "walk_then_wave": [
        "A person walks forward then waves.",
        "A person walks ahead and then waves their hand.",
        "Someone walks forwards, stops, then waves.",
    ],
}

_FINE_TEXTS = {
    "straight_walk": "A person walks forward{adv}.",
    "arc_walk": "A person walks curving to the {side}.",
    "turn_in_place": "A person turns in place to the {side}.",
    "stand_wave": "A person waves their right hand.",
    "squat": "A person squats.",
    "reach": "A person reaches forward.",
    "side_step": "A person steps to the {side}.",
    "walk_then_wave": None,  # composed from segments
}


@dataclass
class Segment:
    start_frame: int
    end_frame: int  # exclusive
    fine_text: str

    def to_dict(self):
        return {"start_frame": self.start_frame, "end_frame": self.end_frame, "fine_text": self.fine_text}


@dataclass
class MotionClip:
    clip_id: str
    family: str
    style: str
    split: str
    raw: RawMotion
    overview_text: str
    paraphrases: list[str]
    segments: list[Segment]
    planted_contacts: np.ndarray | None = None  # [N, 4] generator truth
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# curve helpers


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


REST_S = 0.9  # standing margin at both clip ends
RAMP_S = 0.5


def _speed_profile(n: int, fps: float, ramp_s: float = RAMP_S, rest_s: float = REST_S) -> np.ndarray:
    """0 -> 1 -> 0 profile: standing rest margins, then smoothstep ramps.

    The rest margins keep the ends outside the root-smoothing kernel's reach,
    so smoothed-root displacement matches the integrated path closed form.
    """
    t = np.arange(n) / fps
    total = n / fps
    rest = min(rest_s, total / 4.0)
    ramp = min(ramp_s, total / 6.0)
    up = _smoothstep((t - rest) / ramp)
    down = _smoothstep((total - rest - t) / ramp)
    return np.minimum(up, down)


def profile_travel_s(duration_s: float, ramp_s: float = RAMP_S, rest_s: float = REST_S) -> float:
    """Closed-form integral of _speed_profile in seconds of travel at speed 1."""
    rest = min(rest_s, duration_s / 4.0)
    ramp = min(ramp_s, duration_s / 6.0)
    return duration_s - 2.0 * rest - ramp


def _integrate_path(speed: np.ndarray, psi: np.ndarray, fps: float) -> np.ndarray:
    """Plane path from per-frame speed (m/s) along heading psi."""
    step = speed / fps
    dx = step * np.cos(psi)
    dz = step * np.sin(psi)
    out = np.zeros((len(speed), 2))
    out[1:, 0] = np.cumsum(dx[:-1])
    out[1:, 1] = np.cumsum(dz[:-1])
    return out


# ---------------------------------------------------------------------------
# body assembly


@dataclass
class _BodyCurves:
    """Inputs to the FK assembly, all per frame."""

    pelvis_xz: np.ndarray  # [N, 2] pelvis ground path (before sway)
    psi: np.ndarray  # [N] heading angle
    pelvis_y: np.ndarray  # [N]
    sway: np.ndarray  # [N] lateral sway along the heading normal, meters
    left_swing: np.ndarray  # [N] arm swing angle, rad (forward positive)
    right_swing: np.ndarray
    right_fore_extra: np.ndarray | None = None  # [N,3,3] extra forearm rotation
    right_upper_extra: np.ndarray | None = None  # [N,3,3] extra upper-arm rotation
    gait: dict | None = None  # None -> feet planted for the whole clip


def _arm_rotation(psi: np.ndarray, swing: np.ndarray, hang_sign: float) -> np.ndarray:
    """Global rotation for a hanging arm with forward swing.

    hang_sign is -1 for the left arm (rest offsets point -z), +1 for right.
    """
    n = len(psi)
    c, s = np.cos(swing), np.sin(swing)
    zeros, ones = np.zeros(n), np.ones(n)
    swing_rot = np.stack(
        [
            np.stack([c, -s, zeros], -1),
            np.stack([s, c, zeros], -1),
            np.stack([zeros, zeros, ones], -1),
        ],
        axis=-2,
    )
    a = -hang_sign * np.pi / 2.0
    hang = np.array(
        [[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]]
    )
    return heading_rotation(psi) @ swing_rot @ hang


def _plan_feet(
    skeleton: Skeleton,
    pelvis_xz: np.ndarray,
    psi: np.ndarray,
    fps: float,
    gait: dict | None,
) -> tuple[dict, np.ndarray]:
    """Foothold schedule: per-foot heel position, yaw and contact per frame.

    Returns ({"left"/"right": (heel_pos [N,3], yaw [N])}, planted [N,4]).
    Planted contact excludes the final stance frame before a swing so that
    forward-difference velocities at labeled frames are exactly zero.
    """
    n = len(psi)
    half_width = 0.11
    out = {}
    planted = np.zeros((n, 4))

    def nominal(foot_sign: float, frame: float) -> tuple[np.ndarray, float]:
        i = int(np.clip(frame, 0, n - 1))
        yaw = psi[i]
        offset = np.array([-0.02, foot_sign * half_width])
        c, s = np.cos(yaw), np.sin(yaw)
        world = pelvis_xz[i] + np.array(
            [c * offset[0] - s * offset[1], s * offset[0] + c * offset[1]]
        )
        return world, yaw

    for foot_i, (name, sign) in enumerate((("left", -1.0), ("right", 1.0))):
        heel = np.zeros((n, 3))
        yaw = np.zeros(n)
        contact = np.zeros(n)
        if gait is None:
            world, fyaw = nominal(sign, 0)
            heel[:, 0], heel[:, 2] = world[0], world[1]
            yaw[:] = fyaw
            contact[:] = 1.0
        else:
            cycle = int(round(gait["cycle_s"] * fps))
            duty = gait["duty"]
            lift = gait["lift"]
            stance_len = max(int(round(cycle * duty)), 2)
            phase = 0 if name == "left" else cycle // 2
            # stance intervals [start, start + stance_len)
            starts = list(range(phase - cycle, n + cycle, cycle))
            stances = []
            for st in starts:
                mid = st + stance_len / 2.0
                world, fyaw = nominal(sign, mid)
                stances.append((st, st + stance_len, world, fyaw))
            for k, (st, en, world, fyaw) in enumerate(stances):
                lo, hi = max(st, 0), min(en, n)
                if lo < hi:
                    heel[lo:hi, 0], heel[lo:hi, 2] = world[0], world[1]
                    yaw[lo:hi] = fyaw
                    contact[lo:hi] = 1.0
                    if en < n:  # swing follows: drop the boundary frame
                        contact[hi - 1] = 0.0
                # swing to the next stance
                if k + 1 < len(stances):
                    nst, _, nworld, nyaw = stances[k + 1]
                    s_lo, s_hi = max(en, 0), min(nst, n)
                    if s_lo >= s_hi:
                        continue
                    span = nst - (en - 1)
                    for f in range(s_lo, s_hi):
                        u = (f - (en - 1)) / span
                        w = _smoothstep(np.array(u))
                        heel[f, 0] = world[0] + (nworld[0] - world[0]) * w
                        heel[f, 2] = world[1] + (nworld[1] - world[1]) * w
                        heel[f, 1] = lift * np.sin(np.pi * np.clip(u, 0, 1))
                        dpsi = (nyaw - fyaw + np.pi) % (2 * np.pi) - np.pi
                        yaw[f] = fyaw + dpsi * w
        out[name] = (heel, yaw)
        planted[:, 2 * foot_i] = contact  # heel
        planted[:, 2 * foot_i + 1] = contact  # toe
    return out, planted


def _assemble(skeleton: Skeleton, curves: _BodyCurves, fps: float) -> tuple[RawMotion, np.ndarray]:
    """Build rotations from curves, run FK once, return motion + contacts."""
    n = len(curves.psi)
    j = skeleton.n_joints
    psi = curves.psi
    torso = heading_rotation(psi)  # [N,3,3]

    normal = np.stack([-np.sin(psi), np.cos(psi)], axis=1)
    pelvis_xz = curves.pelvis_xz + normal * curves.sway[:, None]
    pelvis = np.stack([pelvis_xz[:, 0], curves.pelvis_y, pelvis_xz[:, 1]], axis=1)

    rotations = np.tile(np.eye(3), (n, j, 1, 1))
    names = skeleton.joint_names
    torso_joints = [i for i, nm in enumerate(names) if nm in (
        "pelvis", "spine_01", "spine_02", "spine_03", "chest", "neck", "head",
        "left_clavicle", "right_clavicle")]
    for i in torso_joints:
        rotations[:, i] = torso

    left_arm = _arm_rotation(psi, curves.left_swing, hang_sign=-1.0)
    right_upper = _arm_rotation(psi, curves.right_swing, hang_sign=+1.0)
    if curves.right_upper_extra is not None:
        right_upper = curves.right_upper_extra @ right_upper
    right_fore = right_upper
    if curves.right_fore_extra is not None:
        right_fore = curves.right_fore_extra @ right_fore
    for nm in ("left_shoulder", "left_elbow", "left_wrist", "left_hand"):
        rotations[:, skeleton.joint_index(nm)] = left_arm
    rotations[:, skeleton.joint_index("right_shoulder")] = right_upper
    for nm in ("right_elbow", "right_wrist", "right_hand"):
        rotations[:, skeleton.joint_index(nm)] = right_fore

    feet, planted = _plan_feet(skeleton, pelvis_xz, psi, fps, curves.gait)

    heel_offset = skeleton.rest_offsets[skeleton.joint_index("left_heel")]
    upper_len = abs(skeleton.rest_offsets[skeleton.joint_index("left_knee")][1])
    lower_len = abs(skeleton.rest_offsets[skeleton.joint_index("left_ankle")][1])
    hint = np.stack([np.cos(psi), np.zeros(n), np.sin(psi)], axis=1)

    for side, hip_name in (("left", "left_hip"), ("right", "right_hip")):
        heel_pos, foot_yaw = feet[side]
        foot_rot = heading_rotation(foot_yaw)
        ankle_target = heel_pos - np.einsum("nij,j->ni", foot_rot, heel_offset)
        hip_idx = skeleton.joint_index(hip_name)
        hip_pos = pelvis + np.einsum("nij,j->ni", torso, skeleton.rest_offsets[hip_idx])
        hip_rot, knee_rot, reached = two_bone_ik(
            hip_pos, ankle_target, upper_len, lower_len, hint
        )
        rotations[:, hip_idx] = hip_rot
        rotations[:, skeleton.joint_index(f"{side}_knee")] = knee_rot
        for nm in (f"{side}_ankle", f"{side}_heel", f"{side}_toe"):
            rotations[:, skeleton.joint_index(nm)] = foot_rot

    positions = forward_kinematics(skeleton, pelvis, rotations, validate=False)
    motion = RawMotion(
        fps=fps,
        joint_positions=positions,
        rotations_6d=matrix_to_rotation_6d(rotations),
    )
    return motion, planted


# ---------------------------------------------------------------------------
# families


def _adaptive_pelvis_height(speed: float, gait: dict, skeleton: Skeleton) -> float:
    """Tallest pelvis height that keeps stance ankles reachable with margin."""
    upper = abs(skeleton.rest_offsets[skeleton.joint_index("left_knee")][1])
    lower = abs(skeleton.rest_offsets[skeleton.joint_index("left_ankle")][1])
    reach = upper + lower - 0.012
    ankle_y = 0.06
    horizontal = speed * gait["duty"] * gait["cycle_s"] / 2.0 + 0.05
    vertical = np.sqrt(max(reach**2 - horizontal**2, 0.15))
    return min(0.93, vertical + ankle_y + 0.07)


def _default_gait() -> dict:
    return {"cycle_s": 0.9, "duty": 0.62, "lift": 0.08}


def _walk_curves(n, fps, speed, psi, rng, gait=None):
    gait = gait or _default_gait()
    profile = _speed_profile(n, fps)
    speeds = speed * profile
    pelvis_xz = _integrate_path(speeds, psi, fps)
    t = np.arange(n) / fps
    h0 = _adaptive_pelvis_height(speed, gait, canonical_skeleton())
    bob = 0.012 * np.cos(4 * np.pi * t / gait["cycle_s"]) * profile
    sway = 0.028 * np.sin(2 * np.pi * t / gait["cycle_s"]) * profile
    swing_amp = 0.25 + 0.15 * min(speed, 1.5)
    swing = swing_amp * np.sin(2 * np.pi * t / gait["cycle_s"]) * profile
    return _BodyCurves(
        pelvis_xz=pelvis_xz,
        psi=psi,
        pelvis_y=h0 + bob,
        sway=sway,
        left_swing=swing,
        right_swing=-swing,
        gait=gait,
    )


def _family_straight_walk(rng, fps, skeleton):
    speed = float(rng.uniform(0.5, 1.5))
    duration = float(rng.uniform(4.0, 9.0))
    n = int(round(duration * fps))
    psi = np.zeros(n)
    curves = _walk_curves(n, fps, speed, psi, rng)
    adv = " slowly" if speed < 0.8 else (" quickly" if speed > 1.25 else "")
    params = {"speed": speed, "duration_s": duration, "adv": adv}
    return curves, params, {"adv": adv}


def _family_arc_walk(rng, fps, skeleton):
    speed = float(rng.uniform(0.6, 1.3))
    radius = float(rng.uniform(1.0, 4.0))
    left = bool(rng.random() < 0.5)
    duration = float(rng.uniform(4.0, 9.0))
    n = int(round(duration * fps))
    profile = _speed_profile(n, fps)
    omega = (speed / radius) * (-1.0 if left else 1.0)
    psi = np.concatenate([[0.0], np.cumsum(omega * profile[:-1] / fps)])
    curves = _walk_curves(n, fps, speed, psi, rng)
    side = "left" if left else "right"
    return curves, {"speed": speed, "turn_radius": radius, "duration_s": duration, "side": side}, {"side": side}


def _family_turn_in_place(rng, fps, skeleton):
    angle = float(rng.uniform(np.pi / 2, 1.5 * np.pi)) * (1 if rng.random() < 0.5 else -1)
    duration = float(rng.uniform(3.0, 6.0))
    n = int(round(duration * fps))
    t = np.arange(n) / fps
    psi = angle * _smoothstep((t - 0.5) / (duration - 1.2))
    gait = {"cycle_s": 0.8, "duty": 0.6, "lift": 0.085}
    curves = _BodyCurves(
        pelvis_xz=np.zeros((n, 2)),
        psi=psi,
        pelvis_y=np.full(n, 0.92),
        sway=0.01 * np.sin(2 * np.pi * t / gait["cycle_s"]),
        left_swing=np.zeros(n),
        right_swing=np.zeros(n),
        gait=gait,
    )
    side = "left" if angle > 0 else "right"
    return curves, {"angle": angle, "duration_s": duration, "side": side}, {"side": side}


def _stand_base(n, fps):
    t = np.arange(n) / fps
    return _BodyCurves(
        pelvis_xz=np.zeros((n, 2)),
        psi=np.zeros(n),
        pelvis_y=np.full(n, 0.93) + 0.004 * np.sin(2 * np.pi * 0.4 * t),
        sway=0.004 * np.sin(2 * np.pi * 0.3 * t),
        left_swing=np.zeros(n),
        right_swing=np.zeros(n),
        gait=None,
    )


def _axis_rot(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    from .rotations import rotation_about_axis

    return rotation_about_axis(np.tile(axis, (len(angles), 1)), angles)


def _family_stand_wave(rng, fps, skeleton):
    duration = float(rng.uniform(3.0, 6.0))
    n = int(round(duration * fps))
    t = np.arange(n) / fps
    curves = _stand_base(n, fps)
    envelope = _smoothstep(t / 0.7) * _smoothstep((duration - t) / 0.7)
    # raise about the facing axis so the arm swings up sideways
    raise_angle = -2.4 * envelope
    curves.right_upper_extra = _axis_rot(np.array([1.0, 0.0, 0.0]), raise_angle)
    wave = 0.5 * np.sin(2 * np.pi * 1.6 * t) * envelope
    curves.right_fore_extra = _axis_rot(np.array([1.0, 0.0, 0.0]), wave)
    return curves, {"duration_s": duration}, {}


def _family_squat(rng, fps, skeleton):
    duration = float(rng.uniform(3.0, 7.0))
    reps = max(1, int(duration // 2.5))
    depth = float(rng.uniform(0.2, 0.3))
    n = int(round(duration * fps))
    t = np.arange(n) / fps
    curves = _stand_base(n, fps)
    phase = np.clip(reps * t / duration, 0, reps)
    dip = 0.5 * (1 - np.cos(2 * np.pi * phase))  # 0..1..0 per rep
    curves.pelvis_y = 0.92 - depth * dip
    lean = 0.5 * dip  # arms raise forward as counterbalance
    curves.left_swing = lean
    curves.right_swing = lean
    return curves, {"duration_s": duration, "depth": depth, "reps": reps}, {}


def _family_reach(rng, fps, skeleton):
    duration = float(rng.uniform(3.0, 6.0))
    n = int(round(duration * fps))
    t = np.arange(n) / fps
    curves = _stand_base(n, fps)
    out = _smoothstep(t / 1.0) * _smoothstep((duration - t) / 1.0)
    height = float(rng.uniform(1.0, 1.5))
    curves.right_swing = out * height
    return curves, {"duration_s": duration, "reach_height": height}, {}


def _family_side_step(rng, fps, skeleton):
    speed = float(rng.uniform(0.5, 0.7))
    left = bool(rng.random() < 0.5)
    duration = float(rng.uniform(3.0, 6.0))
    n = int(round(duration * fps))
    profile = _speed_profile(n, fps)
    step = speed * profile / fps
    pelvis_xz = np.zeros((n, 2))
    pelvis_xz[1:, 1] = np.cumsum(step[:-1]) * (-1.0 if left else 1.0)
    t = np.arange(n) / fps
    gait = {"cycle_s": 0.8, "duty": 0.6, "lift": 0.08}
    curves = _BodyCurves(
        pelvis_xz=pelvis_xz,
        psi=np.zeros(n),
        pelvis_y=np.full(n, 0.9),
        sway=0.015 * np.sin(2 * np.pi * t / gait["cycle_s"]),
        left_swing=np.zeros(n),
        right_swing=np.zeros(n),
        gait=gait,
    )
    side = "left" if left else "right"
    return curves, {"speed": speed, "duration_s": duration, "side": side}, {"side": side}


def _family_walk_then_wave(rng, fps, skeleton):
    walk_s = float(rng.uniform(2.5, 5.0))
    wave_s = float(rng.uniform(2.0, 4.0))
    speed = float(rng.uniform(0.6, 1.2))
    n_walk = int(round(walk_s * fps))
    n_wave = int(round(wave_s * fps))
    n = n_walk + n_wave
    profile = np.zeros(n)
    profile[:n_walk] = _speed_profile(n_walk, fps)
    psi = np.zeros(n)
    curves = _walk_curves(n, fps, speed, psi, rng)
    # zero motion in the wave phase
    speeds = speed * profile
    curves.pelvis_xz = _integrate_path(speeds, psi, fps)
    t = np.arange(n) / fps
    gait = curves.gait
    moving = profile
    curves.sway = 0.028 * np.sin(2 * np.pi * t / gait["cycle_s"]) * moving
    swing_amp = 0.25 + 0.15 * min(speed, 1.5)
    swing = swing_amp * np.sin(2 * np.pi * t / gait["cycle_s"]) * moving
    curves.left_swing = swing
    curves.right_swing = -swing
    h0 = _adaptive_pelvis_height(speed, gait, skeleton)
    curves.pelvis_y = h0 + 0.012 * np.cos(4 * np.pi * t / gait["cycle_s"]) * moving
    # wave in the second part
    t_wave = np.clip(t - walk_s, 0.0, None)
    envelope = _smoothstep(t_wave / 0.7) * _smoothstep((walk_s + wave_s - t) / 0.7)
    curves.right_upper_extra = _axis_rot(np.array([1.0, 0.0, 0.0]), -2.4 * envelope)
    curves.right_fore_extra = _axis_rot(
        np.array([1.0, 0.0, 0.0]), 0.5 * np.sin(2 * np.pi * 1.6 * t_wave) * envelope
    )
    params = {"speed": speed, "walk_s": walk_s, "wave_s": wave_s, "n_walk": n_walk}
    return curves, params, {}


_BUILDERS = {
    "straight_walk": _family_straight_walk,
    "arc_walk": _family_arc_walk,
    "turn_in_place": _family_turn_in_place,
    "stand_wave": _family_stand_wave,
    "squat": _family_squat,
    "reach": _family_reach,
    "side_step": _family_side_step,
    "walk_then_wave": _family_walk_then_wave,
}


def validate_params(params: dict) -> None:
    for key, (lo, hi) in PARAM_RANGES.items():
        if key in params and not (lo <= params[key] <= hi):
            raise ValueError(f"param {key}={params[key]} outside [{lo}, {hi}]")


def generate_family(
    family: str,
    rng: np.random.Generator,
    skeleton: Skeleton | None = None,
    fps: float = 30.0,
    clip_id: str = "",
) -> MotionClip:
    """Sample one clip of the given family; raises on unknown family/params."""
    if family not in _BUILDERS:
        raise ValueError(f"unknown family {family!r}")
    skeleton = skeleton or canonical_skeleton()
    curves, params, slots = _BUILDERS[family](rng, fps, skeleton)
    validate_params(params)
    params["cycle_frames"] = (
        int(round(curves.gait["cycle_s"] * fps)) if curves.gait is not None else 0
    )
    motion, planted = _assemble(skeleton, curves, fps)
    motion = standardize(motion)

    templates = _TEXTS[family]
    texts = [t.format(**slots) for t in templates]
    idx = int(rng.integers(len(texts)))
    overview = texts[idx]
    paraphrases = texts[:idx] + texts[idx + 1 :]

    n = motion.n_frames
    if family == "walk_then_wave":
        split_frame = params["n_walk"]
        segments = [
            Segment(0, split_frame, _FINE_TEXTS["straight_walk"].format(adv="")),
            Segment(split_frame, n, _FINE_TEXTS["stand_wave"]),
        ]
    else:
        segments = [Segment(0, n, _FINE_TEXTS[family].format(**slots))]

    style = "slow" if params.get("speed", 1.0) < 0.8 else ("brisk" if params.get("speed", 1.0) > 1.25 else "neutral")
    return MotionClip(
        clip_id=clip_id or f"{family}-{rng.integers(1 << 31)}",
        family=family,
        style=style,
        split="train",
        raw=motion,
        overview_text=overview,
        paraphrases=paraphrases,
        segments=segments,
        planted_contacts=planted,
        params=params,
    )


def _strip_subject(text: str) -> str:
    for prefix in ("A person ", "Someone "):
        if text.startswith(prefix):
            return text[len(prefix):]
    return text


def stitch_clips(
    a: MotionClip, b: MotionClip, rng: np.random.Generator, skeleton: Skeleton | None = None,
    overlap_s: float = 0.5,
) -> MotionClip:
    """Concatenate b after a with a rigid re-base and a cross-faded overlap."""
    skeleton = skeleton or canonical_skeleton()
    if a.raw.fps != b.raw.fps:
        raise ValueError("fps mismatch")
    fps = a.raw.fps
    overlap = max(2, int(round(overlap_s * fps)))
    overlap = min(overlap, a.raw.n_frames // 2, b.raw.n_frames // 2)

    from .motion_repr import compute_heading, rotate_motion_yaw, heading_angle_difference

    join = a.raw.n_frames - overlap
    h_a = compute_heading(a.raw.joint_positions[join], skeleton)
    h_b = compute_heading(b.raw.joint_positions[0], skeleton)
    delta = float(heading_angle_difference(h_b[None], h_a[None])[0])
    b_rot = rotate_motion_yaw(b.raw, delta)
    shift = a.raw.joint_positions[join, 0] - b_rot.joint_positions[0, 0]
    shift[1] = 0.0
    b_pos = b_rot.joint_positions + shift

    n_out = a.raw.n_frames + b.raw.n_frames - overlap
    positions = np.zeros((n_out, skeleton.n_joints, 3))
    positions[:join] = a.raw.joint_positions[:join]
    rot_a = rotation_6d_to_matrix(a.raw.rotations_6d)
    rot_b = rotation_6d_to_matrix(b_rot.rotations_6d)
    rotations = np.zeros((n_out, skeleton.n_joints, 3, 3))
    rotations[:join] = rot_a[:join]
    for i in range(overlap):
        w = (i + 1) / (overlap + 1)
        positions[join + i] = (1 - w) * a.raw.joint_positions[join + i] + w * b_pos[i]
        rotations[join + i] = slerp_matrices(rot_a[join + i], rot_b[i], w)
    positions[a.raw.n_frames :] = b_pos[overlap:]
    rotations[a.raw.n_frames :] = rot_b[overlap:]

    raw = RawMotion(fps=fps, joint_positions=positions, rotations_6d=matrix_to_rotation_6d(rotations))
    raw = standardize(raw)
    overview = f"{a.overview_text.rstrip('.')} then {_strip_subject(b.overview_text)}"
    segments = [Segment(s.start_frame, min(s.end_frame, join), s.fine_text) for s in a.segments]
    offset = a.raw.n_frames - overlap
    segments += [
        Segment(s.start_frame + offset, min(s.end_frame + offset, n_out), s.fine_text)
        for s in b.segments
    ]
    return MotionClip(
        clip_id=f"stitch-{a.clip_id}-{b.clip_id}",
        family=f"{a.family}+{b.family}",
        style="stitched",
        split=a.split,
        raw=raw,
        overview_text=overview,
        paraphrases=[],
        segments=segments,
        planted_contacts=None,
    )


# ---------------------------------------------------------------------------
# dataset build + sampling


@dataclass
class DataConfig:
    n_clips: int = 2000
    fps: float = 30.0
    families: tuple = FAMILIES
    holdout_families: tuple = ("walk_then_wave",)
    seed: int = 0
    # draw probabilities: full clip / sub-clip / stitched / paraphrased clip
    mixture: tuple = (0.35, 0.35, 0.15, 0.15)
    stitch_pool_fraction: float = 0.15

    def to_dict(self):
        d = dict(self.__dict__)
        d["families"] = list(self.families)
        d["holdout_families"] = list(self.holdout_families)
        d["mixture"] = list(self.mixture)
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("families", "holdout_families", "mixture"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass
class DatasetManifest:
    version: int
    seed: int
    fps: float
    holdout_families: list
    clips: list  # dicts: clip_id, family, split, n_frames, file
    family_counts: dict

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def generate_clips(config: DataConfig, skeleton: Skeleton | None = None) -> list[MotionClip]:
    """Deterministically generate the full clip list for a config."""
    skeleton = skeleton or canonical_skeleton()
    rng = np.random.default_rng(config.seed)
    clips = []
    for i in range(config.n_clips):
        family = config.families[i % len(config.families)]
        clip = generate_family(family, rng, skeleton, config.fps, clip_id=f"{family}-{i:05d}")
        clip.split = "test" if family in config.holdout_families else "train"
        clips.append(clip)
    return clips


def build_dataset(config: DataConfig, out_dir: str, skeleton: Skeleton | None = None) -> DatasetManifest:
    """Generate clips, write them in the exchange format, write the manifest."""
    from .motion_io import save_motion_binary

    skeleton = skeleton or canonical_skeleton()
    os.makedirs(os.path.join(out_dir, "clips"), exist_ok=True)
    clips = generate_clips(config, skeleton)
    entries = []
    counts: dict[str, int] = {}
    for clip in clips:
        rel = os.path.join("clips", f"{clip.clip_id}.kmb")
        save_motion_binary(
            os.path.join(out_dir, rel),
            clip.raw,
            skeleton.skeleton_id,
            extra={
                "clip_id": clip.clip_id,
                "family": clip.family,
                "style": clip.style,
                "split": clip.split,
                "overview_text": clip.overview_text,
                "paraphrases": clip.paraphrases,
                "segments": [s.to_dict() for s in clip.segments],
            },
        )
        counts[clip.family] = counts.get(clip.family, 0) + 1
        entries.append(
            {
                "clip_id": clip.clip_id,
                "family": clip.family,
                "split": clip.split,
                "n_frames": clip.raw.n_frames,
                "file": rel,
            }
        )
    manifest = DatasetManifest(
        version=1,
        seed=config.seed,
        fps=config.fps,
        holdout_families=list(config.holdout_families),
        clips=entries,
        family_counts=counts,
    )
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest.to_dict(), f, indent=1)
    return manifest


class DatasetSampler:
    """Training-time draw over full clips / sub-clips / stitched / paraphrases.

    Works from in-memory clips; encoding happens once at construction. The
    stitch pool is prebuilt deterministically from the sampler seed.
    """

    def __init__(
        self,
        clips: list[MotionClip],
        skeleton: Skeleton,
        codec_config=None,
        mixture=(0.35, 0.35, 0.15, 0.15),
        stitch_pool_fraction: float = 0.15,
        seed: int = 0,
        split: str = "train",
    ):
        from .motion_repr import CodecConfig

        self.skeleton = skeleton
        self.codec_config = codec_config or CodecConfig()
        self.mixture = np.asarray(mixture, dtype=np.float64)
        self.mixture = self.mixture / self.mixture.sum()
        self.clips = [c for c in clips if c.split == split]
        if not self.clips:
            raise ValueError(f"no clips in split {split!r}")
        self.features = [
            encode(c.raw, skeleton, self.codec_config, standardize_first=True).features
            for c in self.clips
        ]
        rng = np.random.default_rng(seed)
        n_stitch = max(1, int(len(self.clips) * stitch_pool_fraction))
        self.stitched: list[tuple[np.ndarray, str, int]] = []
        if self.mixture[2] > 0:
            for _ in range(n_stitch):
                ia, ib = rng.integers(len(self.clips)), rng.integers(len(self.clips))
                merged = stitch_clips(self.clips[ia], self.clips[ib], rng, skeleton)
                feats = encode(
                    merged.raw, skeleton, self.codec_config, standardize_first=True
                ).features
                self.stitched.append(
                    (feats, merged.overview_text, self._cycle_frames(self.clips[ia]))
                )

    @staticmethod
    def _cycle_frames(clip: MotionClip) -> int:
        return int(clip.params.get("cycle_frames", 0))

    def sample_item(self, rng: np.random.Generator) -> TrainItem:
        kind = rng.choice(4, p=self.mixture)
        i = int(rng.integers(len(self.clips)))
        clip = self.clips[i]
        cycle = self._cycle_frames(clip)
        if kind == 2 and self.stitched:
            feats, text, stitch_cycle = self.stitched[int(rng.integers(len(self.stitched)))]
            return TrainItem(
                features=feats, text=text, source="stitched", phase_frames=stitch_cycle
            )
        if kind == 1 and clip.segments:
            seg = clip.segments[int(rng.integers(len(clip.segments)))]
            feats = self.features[i][seg.start_frame : seg.end_frame]
            if feats.shape[0] < 2:
                feats = self.features[i]
            # segments tile from frame 0, so a segment starting mid-clip came
            # from a family whose second action is stationary; alignment by
            # the clip cycle stays valid for the gaited first segment
            seg_cycle = cycle if seg.start_frame % max(cycle, 1) == 0 else 0
            return TrainItem(
                features=feats, text=seg.fine_text, source="subclip", phase_frames=seg_cycle
            )
        if kind == 3 and clip.paraphrases:
            text = clip.paraphrases[int(rng.integers(len(clip.paraphrases)))]
            return TrainItem(
                features=self.features[i], text=text, source="paraphrase", phase_frames=cycle
            )
        return TrainItem(
            features=self.features[i], text=clip.overview_text, source="clip", phase_frames=cycle
        )
