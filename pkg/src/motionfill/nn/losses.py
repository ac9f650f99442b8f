"""Training objective: feature reconstruction + FK joint and velocity terms."""

import torch

from .torchops import fk_positions

_GAMMA = slice(66, 69)
_PHI = slice(69, 75)
_PSI = slice(75, 201)


def feature_fk(features, skel, fallback_counter=None):
    """FK joint positions (..., 22, 3) of feature tensors (..., 201).

    Consumes the parameter blocks (gamma, phi, psi) and ignores the
    stored joint block; degenerate rotation rows fall back to the
    identity so the op is safe on raw network output.
    """
    gamma = features[..., _GAMMA]
    phi = features[..., _PHI]
    psi = features[..., _PSI].reshape(features.shape[:-1] + (21, 6))
    return fk_positions(gamma, phi, psi, skel, fallback_counter)


def training_losses(
    x0,
    x0_hat,
    skel,
    normalizer=None,
    lambda_joints=2.0,
    lambda_vel=10.0,
    joints_source="fk",
    fallback_counter=None,
):
    """(L, L_simple, L_joints, L_vel) for a batch of feature windows.

    L_simple is the element MSE in the space of the given tensors (pass
    the normalizer when they are normalized; FK then runs on the
    denormalized features). L_joints is the mean squared joint position
    error (summed over xyz), L_vel the same on frame-difference
    velocities, and L = L_simple + lambda_joints*L_joints +
    lambda_vel*L_vel. joints_source selects FK of the parameter blocks
    ("fk") or the stored joint block ("stored") for the position terms.
    """
    l_simple = torch.mean((x0_hat - x0) ** 2)
    if normalizer is not None:
        x0 = normalizer.invert(x0)
        x0_hat = normalizer.invert(x0_hat)
    if joints_source == "fk":
        p_ref = feature_fk(x0, skel, fallback_counter)
        p_hat = feature_fk(x0_hat, skel, fallback_counter)
    elif joints_source == "stored":
        p_ref = x0[..., :66].reshape(x0.shape[:-1] + (22, 3))
        p_hat = x0_hat[..., :66].reshape(x0_hat.shape[:-1] + (22, 3))
    else:
        raise ValueError(f"unknown joints_source {joints_source!r}")
    l_joints = ((p_hat - p_ref) ** 2).sum(dim=-1).mean()
    v_hat = torch.diff(p_hat, dim=-3)
    v_ref = torch.diff(p_ref, dim=-3)
    l_vel = ((v_hat - v_ref) ** 2).sum(dim=-1).mean()
    loss = l_simple + lambda_joints * l_joints + lambda_vel * l_vel
    return loss, l_simple, l_joints, l_vel
