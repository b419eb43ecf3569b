"""Differentiable (torch) mirrors of the kinematic ops used inside the model.

Numerics intentionally match the numpy implementations in motion_repr /
rotations / skeleton; tests assert agreement. Kept separate so the numpy
modules stay torch-free.
"""

from __future__ import annotations

import torch

from .skeleton import Skeleton


def rotation_6d_to_matrix(d6: torch.Tensor) -> torch.Tensor:
    """[..., 6] -> [..., 3, 3], Gram-Schmidt with clamped norms for stability."""
    a1 = d6[..., :3]
    a2 = d6[..., 3:]
    b1 = a1 / a1.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    a2_perp = a2 - (b1 * a2).sum(dim=-1, keepdim=True) * b1
    b2 = a2_perp / a2_perp.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def local_root_from_global(
    r_glob: torch.Tensor, lengths: torch.Tensor | None = None
) -> torch.Tensor:
    """Global root block [..., N, 5] -> local root [..., N, 4].

    Output channels are [heading angular velocity, planar velocity x/z,
    height]. Velocities at frame n use the consecutive difference at
    min(n, L-2) for a sample of valid length L, which both implements the
    pad-by-repetition rule at the final frame and keeps padded frames from
    leaking into real ones in padded batches. The heading difference uses
    atan2 on the raw (cos, sin) pairs with a detached magnitude
    normalization so gradients stay bounded for unnormalized predictions.
    """
    n = r_glob.shape[-2]
    if n == 1:
        zeros = torch.zeros_like(r_glob[..., :3])
        return torch.cat([zeros, r_glob[..., 1:2]], dim=-1)
    c = r_glob[..., 3]
    s = r_glob[..., 4]
    c0, s0 = c[..., :-1], s[..., :-1]
    c1, s1 = c[..., 1:], s[..., 1:]
    y = s1 * c0 - c1 * s0
    x = c1 * c0 + s1 * s0
    scale = torch.sqrt(x * x + y * y).detach().clamp_min(1e-4)
    d_psi = torch.atan2(y / scale, x / scale)  # [..., N-1]
    d_xz = r_glob[..., 1:, [0, 2]] - r_glob[..., :-1, [0, 2]]  # [..., N-1, 2]

    frame_idx = torch.arange(n, device=r_glob.device)
    if lengths is None:
        idx = frame_idx.clamp(max=n - 2)
        idx = idx.expand(r_glob.shape[:-2] + (n,))
    else:
        last = (lengths - 2).clamp(min=0)
        idx = torch.minimum(frame_idx.unsqueeze(0), last.unsqueeze(1))
        idx = idx.reshape(r_glob.shape[:-2] + (n,))
    d_psi = torch.gather(d_psi, -1, idx)
    d_xz = torch.gather(d_xz, -2, idx.unsqueeze(-1).expand(idx.shape + (2,)))

    height = r_glob[..., 1]
    return torch.cat([d_psi.unsqueeze(-1), d_xz, height.unsqueeze(-1)], dim=-1)


def forward_kinematics(
    skeleton: Skeleton, root_position: torch.Tensor, global_rotations: torch.Tensor
) -> torch.Tensor:
    """FK over [..., J, 3, 3] global rotations and [..., 3] root positions."""
    offsets = torch.as_tensor(
        skeleton.rest_offsets, dtype=global_rotations.dtype, device=global_rotations.device
    )
    positions: list[torch.Tensor] = [root_position]
    for joint in range(1, skeleton.n_joints):
        parent = skeleton.parent_index[joint]
        rot = global_rotations[..., parent, :, :]
        positions.append(positions[parent] + torch.matmul(rot, offsets[joint]))
    return torch.stack(positions, dim=-2)
