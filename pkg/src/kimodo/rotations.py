"""Rotation utilities: 6D encoding, yaw/heading helpers, geodesic distance.

The 6D encoding stores the first two columns of a rotation matrix; decoding
runs Gram-Schmidt and completes the third column with a cross product, so any
pair of non-degenerate vectors maps to a valid rotation. All functions are
vectorized over leading dimensions.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidRotationError


def matrix_to_rotation_6d(matrices: np.ndarray) -> np.ndarray:
    """[... , 3, 3] rotation matrices -> [... , 6] (first two columns)."""
    m = np.asarray(matrices, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected [...,3,3] matrices, got {m.shape}")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rotation_6d_to_matrix(d6: np.ndarray) -> np.ndarray:
    """[... , 6] -> [... , 3, 3] via Gram-Schmidt orthonormalization.

    Raises ValueError when the first vector is (near) zero or the two vectors
    are (near) parallel, which makes the encoding non-decodable.
    """
    d6 = np.asarray(d6, dtype=np.float64)
    if d6.shape[-1] != 6:
        raise ValueError(f"expected [...,6], got {d6.shape}")
    a1 = d6[..., :3]
    a2 = d6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < 1e-8):
        raise ValueError("6d rotation has near-zero first vector")
    b1 = a1 / n1
    a2_perp = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2_perp, axis=-1, keepdims=True)
    if np.any(n2 < 1e-8):
        raise ValueError("6d rotation has (near) parallel vectors")
    b2 = a2_perp / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def validate_rotation_matrices(matrices: np.ndarray, tol: float = 1e-5) -> None:
    """Raise InvalidRotationError unless all matrices are orthonormal, det=+1."""
    m = np.asarray(matrices, dtype=np.float64)
    eye = np.eye(3)
    err = np.abs(np.einsum("...ij,...ik->...jk", m, m) - eye).max()
    if err > tol:
        raise InvalidRotationError(f"matrices not orthonormal: max |R^T R - I| = {err:.2e}")
    det = np.linalg.det(m)
    if np.abs(det - 1.0).max() > tol * 10:
        raise InvalidRotationError(f"matrices not proper rotations: det range [{det.min()}, {det.max()}]")


def geodesic_angle(r_a: np.ndarray, r_b: np.ndarray) -> np.ndarray:
    """Angle (rad) of the relative rotation between two matrix stacks."""
    rel_trace = np.einsum("...ij,...ij->...", r_a, r_b)
    cos = np.clip((rel_trace - 1.0) / 2.0, -1.0, 1.0)
    return np.arccos(cos)


def heading_rotation(psi: np.ndarray | float) -> np.ndarray:
    """Rotation about +y that advances the heading angle by psi.

    Maps the rest facing direction (1, 0, 0) to (cos psi, 0, sin psi). For
    a scalar input returns [3,3]; for [N] input returns [N,3,3].
    """
    psi = np.asarray(psi, dtype=np.float64)
    c, s = np.cos(psi), np.sin(psi)
    zeros = np.zeros_like(c)
    ones = np.ones_like(c)
    rows = np.stack(
        [
            np.stack([c, zeros, -s], axis=-1),
            np.stack([zeros, ones, zeros], axis=-1),
            np.stack([s, zeros, c], axis=-1),
        ],
        axis=-2,
    )
    return rows


def axis_angle_to_matrix(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula, [...,3] axis-angle vectors -> [...,3,3]."""
    v = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < 1e-12
    axis = np.where(small, 0.0, v / np.where(small, 1.0, theta))
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zeros = np.zeros_like(x)
    k = np.stack(
        [
            np.stack([zeros, -z, y], axis=-1),
            np.stack([z, zeros, -x], axis=-1),
            np.stack([-y, x, zeros], axis=-1),
        ],
        axis=-2,
    )
    theta = theta[..., None]
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_about_axis(axis: np.ndarray, angle: float | np.ndarray) -> np.ndarray:
    """Rotation of `angle` radians about a (unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    return axis_angle_to_matrix(axis * np.asarray(angle)[..., None])


def slerp_matrices(r_a: np.ndarray, r_b: np.ndarray, t: np.ndarray | float) -> np.ndarray:
    """Geodesic interpolation between rotation matrix stacks at weight t."""
    from scipy.spatial.transform import Rotation

    shape = np.broadcast_shapes(r_a.shape, r_b.shape)
    ra = np.broadcast_to(r_a, shape).reshape(-1, 3, 3)
    rb = np.broadcast_to(r_b, shape).reshape(-1, 3, 3)
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), shape[:-2]).reshape(-1)
    qa = Rotation.from_matrix(ra)
    qb = Rotation.from_matrix(rb)
    rel = qa.inv() * qb
    rotvec = rel.as_rotvec() * t_arr[:, None]
    out = (qa * Rotation.from_rotvec(rotvec)).as_matrix()
    return out.reshape(shape)
