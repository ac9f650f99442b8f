"""Torch counterparts of the numpy rotation / FK routines.

These mirror rotations.rot6d_to_matrix_safe, matrix_to_rot6d and
kinematics.fk_transforms exactly (same conventions, same fallback
behavior) but stay differentiable and batched for training.
"""

import math

import numpy as np
import torch

from ..skeleton import NUM_JOINTS

_DEGENERATE_TOL = 1e-8


def matrix_from_rot6d(r, fallback_counter=None):
    """Decode 6D rotations (..., 6) to matrices (..., 3, 3), torch.

    Gram-Schmidt on the two stored columns; degenerate rows (zero or
    parallel vectors) decode to the identity instead of raising so the
    op is safe inside a training step. fallback_counter, when given, is
    a one-element list incremented by the number of rows that fell back.
    Gradients flow through the non-degenerate path only.
    """
    a = r[..., 0:3]
    b = r[..., 3:6]
    na = torch.linalg.vector_norm(a, dim=-1, keepdim=True)
    bad_a = na < _DEGENERATE_TOL
    c1 = a / torch.clamp(na, min=_DEGENERATE_TOL)
    b_perp = b - (c1 * b).sum(dim=-1, keepdim=True) * c1
    nb = torch.linalg.vector_norm(b_perp, dim=-1, keepdim=True)
    bad_b = nb < _DEGENERATE_TOL
    c2 = b_perp / torch.clamp(nb, min=_DEGENERATE_TOL)
    bad = (bad_a | bad_b)[..., 0, None]
    if bad.any():
        e1 = torch.zeros_like(c1)
        e1[..., 0] = 1.0
        e2 = torch.zeros_like(c2)
        e2[..., 1] = 1.0
        c1 = torch.where(bad, e1, c1)
        c2 = torch.where(bad, e2, c2)
        if fallback_counter is not None:
            fallback_counter[0] += int(bad.sum().item())
    c3 = torch.cross(c1, c2, dim=-1)
    return torch.stack([c1, c2, c3], dim=-1)


def rot6d_from_matrix(m):
    """Encode rotation matrices (..., 3, 3) as first-two-column 6-vectors."""
    return torch.cat([m[..., :, 0], m[..., :, 1]], dim=-1)


def fk_positions(gamma, phi, psi, skel, fallback_counter=None):
    """Global joint positions (..., 22, 3) from pose parameter tensors.

    gamma (..., 3), phi (..., 6), psi (..., 21, 6). Matches the numpy
    fk_transforms positions: children sit at
    parent_pos + R_global(parent) @ rest_offset(child).
    """
    r_root = matrix_from_rot6d(phi, fallback_counter)
    r_local = matrix_from_rot6d(psi, fallback_counter)
    offsets = torch.as_tensor(
        np.asarray(skel.rest_offsets), dtype=gamma.dtype, device=gamma.device
    )
    pos = [gamma]
    rot = [r_root]
    for j in range(1, NUM_JOINTS):
        p = skel.parents[j]
        rot.append(rot[p] @ r_local[..., j - 1, :, :])
        pos.append(pos[p] + (rot[p] @ offsets[j]))
    return torch.stack(pos, dim=-2)


def timestep_embedding(t, dim, max_period=10000.0):
    """Sinusoidal embeddings (B, dim) of integer diffusion steps t (B,)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period)
        * torch.arange(half, dtype=torch.float32, device=t.device)
        / half
    )
    angles = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(angles), torch.sin(angles)], dim=-1)
    if dim % 2:
        emb = torch.nn.functional.pad(emb, (0, 1))
    return emb
