"""Articulated skeleton definition and forward kinematics.

Rotations throughout the package are *global* (world-frame) per joint, so FK
needs no chaining of rotations: a joint sits at its parent's position plus
the parent's global rotation applied to the joint's rest offset.

Conventions: meters, +y up, ground plane xz, rest pose faces +x.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .rotations import validate_rotation_matrices

SKELETON_FORMAT_VERSION = 1
CANONICAL_SKELETON_ID = "humanoid27-v1"


@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy with rest offsets.

    parent_index uses -1 for the root; parents always precede children.
    foot_joint_indices are ordered [left heel, left toe, right heel, right toe]
    to match the contact-flag channel.
    """

    skeleton_id: str
    joint_names: tuple[str, ...]
    parent_index: tuple[int, ...]
    rest_offsets: np.ndarray  # [J, 3]
    left_hip_index: int
    right_hip_index: int
    foot_joint_indices: tuple[int, int, int, int]
    end_effector_indices: tuple[int, ...]
    _name_to_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        j = len(self.joint_names)
        if len(self.parent_index) != j or self.rest_offsets.shape != (j, 3):
            raise ValueError("inconsistent skeleton field sizes")
        if self.parent_index[0] != -1 or any(p < 0 for p in self.parent_index[1:]):
            raise ValueError("parent_index must have exactly one root at index 0")
        if any(p >= i for i, p in enumerate(self.parent_index) if i > 0):
            raise ValueError("parents must precede children")
        if len(self.foot_joint_indices) != 4:
            raise ValueError("exactly 4 foot joints required")
        object.__setattr__(self, "_name_to_index", {n: i for i, n in enumerate(self.joint_names)})

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def joint_index(self, name: str) -> int:
        try:
            return self._name_to_index[name]
        except KeyError:
            raise ValueError(f"unknown joint name: {name!r}") from None

    def to_dict(self) -> dict:
        return {
            "version": SKELETON_FORMAT_VERSION,
            "skeleton_id": self.skeleton_id,
            "joint_names": list(self.joint_names),
            "parent_index": list(self.parent_index),
            "rest_offsets": self.rest_offsets.tolist(),
            "left_hip_index": self.left_hip_index,
            "right_hip_index": self.right_hip_index,
            "foot_joint_indices": list(self.foot_joint_indices),
            "end_effector_indices": list(self.end_effector_indices),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Skeleton":
        if data.get("version") != SKELETON_FORMAT_VERSION:
            raise ValueError(f"unsupported skeleton format version: {data.get('version')}")
        return cls(
            skeleton_id=data["skeleton_id"],
            joint_names=tuple(data["joint_names"]),
            parent_index=tuple(data["parent_index"]),
            rest_offsets=np.asarray(data["rest_offsets"], dtype=np.float64),
            left_hip_index=data["left_hip_index"],
            right_hip_index=data["right_hip_index"],
            foot_joint_indices=tuple(data["foot_joint_indices"]),
            end_effector_indices=tuple(data["end_effector_indices"]),
        )


def canonical_skeleton() -> Skeleton:
    """The bundled 27-joint humanoid (heel/toe feet, hand end effectors)."""
    text = resources.files("kimodo").joinpath("assets/skeleton_humanoid27.json").read_text()
    return Skeleton.from_dict(json.loads(text))


def load_skeleton(path: str) -> Skeleton:
    with open(path) as f:
        return Skeleton.from_dict(json.load(f))


def save_skeleton(skeleton: Skeleton, path: str) -> None:
    with open(path, "w") as f:
        json.dump(skeleton.to_dict(), f, indent=1)


def forward_kinematics(
    skeleton: Skeleton,
    root_position: np.ndarray,
    global_rotations: np.ndarray,
    validate: bool = True,
) -> np.ndarray:
    """World joint positions from root positions and global joint rotations.

    Args:
        root_position: [N, 3] pelvis world positions.
        global_rotations: [N, J, 3, 3] world-frame rotation matrices.
        validate: check orthonormality (1e-5) before computing.

    Returns:
        [N, J, 3] world joint positions; joint 0 equals root_position.
    """
    root_position = np.asarray(root_position, dtype=np.float64)
    global_rotations = np.asarray(global_rotations, dtype=np.float64)
    j = skeleton.n_joints
    if root_position.ndim != 2 or root_position.shape[1] != 3:
        raise ValueError(f"root_position must be [N,3], got {root_position.shape}")
    n = root_position.shape[0]
    if global_rotations.shape != (n, j, 3, 3):
        raise ValueError(
            f"global_rotations must be [{n},{j},3,3], got {global_rotations.shape}"
        )
    if validate:
        validate_rotation_matrices(global_rotations)

    positions = np.empty((n, j, 3), dtype=np.float64)
    positions[:, 0] = root_position
    for joint in range(1, j):
        parent = skeleton.parent_index[joint]
        offset = skeleton.rest_offsets[joint]
        positions[:, joint] = positions[:, parent] + global_rotations[:, parent] @ offset
    return positions
