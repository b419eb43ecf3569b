"""Analytic two-bone IK (hip-knee-ankle), vectorized over frames.

Solves for global hip and knee rotations that place the ankle at a target,
bending the knee in the plane spanned by the hip-ankle axis and a hint
direction (the character's facing for gait, or the current knee offset when
editing an existing pose). Unreachable targets are clamped to the reachable
sphere and reported.
"""

from __future__ import annotations

import numpy as np

REACH_MARGIN = 1e-4


def _normalize(v: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    bad = norm[..., 0] < 1e-9
    safe = np.where(norm < 1e-9, 1.0, norm)
    out = v / safe
    if np.any(bad):
        if fallback is None:
            raise ValueError("cannot normalize zero vector")
        out[bad] = fallback
    return out


def _frame_from(y_col: np.ndarray, z_hint: np.ndarray) -> np.ndarray:
    """Right-handed rotation with given y column and z close to z_hint."""
    y = _normalize(y_col)
    z = z_hint - np.sum(z_hint * y, axis=-1, keepdims=True) * y
    z = _normalize(z, fallback=np.array([0.0, 0.0, 1.0]))
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=-1)


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of v about unit axis by per-row angles."""
    c = np.cos(angle)[..., None]
    s = np.sin(angle)[..., None]
    return v * c + np.cross(axis, v) * s + axis * np.sum(axis * v, axis=-1, keepdims=True) * (1 - c)


def two_bone_ik(
    hip_pos: np.ndarray,
    ankle_target: np.ndarray,
    upper_len: float,
    lower_len: float,
    bend_hint: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Global hip/knee rotations reaching the ankle target.

    Args:
        hip_pos: [N, 3] hip joint world positions.
        ankle_target: [N, 3] desired ankle world positions.
        bend_hint: [N, 3] direction the knee should bend towards.

    Returns:
        (hip_rotations [N,3,3], knee_rotations [N,3,3], reached [N] bool).
        Rotations assume the rest offsets point straight down (0, -len, 0).
    """
    hip_pos = np.atleast_2d(np.asarray(hip_pos, dtype=np.float64))
    ankle_target = np.atleast_2d(np.asarray(ankle_target, dtype=np.float64))
    bend_hint = np.atleast_2d(np.asarray(bend_hint, dtype=np.float64))

    delta = ankle_target - hip_pos
    dist = np.linalg.norm(delta, axis=-1)
    d_min = abs(upper_len - lower_len) + REACH_MARGIN
    d_max = upper_len + lower_len - REACH_MARGIN
    reached = (dist >= d_min) & (dist <= d_max)
    d = np.clip(dist, d_min, d_max)
    direction = _normalize(delta, fallback=np.array([0.0, -1.0, 0.0]))

    cos_alpha = (upper_len**2 + d**2 - lower_len**2) / (2.0 * upper_len * d)
    alpha = np.arccos(np.clip(cos_alpha, -1.0, 1.0))

    axis = np.cross(direction, _normalize(bend_hint))
    axis = _normalize(axis, fallback=np.array([0.0, 0.0, 1.0]))

    knee_dir = _rotate_about(direction, axis, alpha)
    knee_pos = hip_pos + upper_len * knee_dir
    effective_target = hip_pos + d[..., None] * direction
    lower_dir = _normalize(effective_target - knee_pos)

    hip_rot = _frame_from(-knee_dir, axis)
    knee_rot = _frame_from(-lower_dir, axis)
    return hip_rot, knee_rot, reached
