"""Pose parameters, the 201-D pose feature, and forward kinematics.

A pose is (root translation gamma, root orientation phi as a 6D
rotation, 21 local 6D rotations psi). The flat feature layout is

    [ global joints J (22*3) | gamma (3) | phi (6) | psi (21*6) ]  -> 201

with J stored in world coordinates, so feature[0:3] repeats gamma.
All functions broadcast over leading batch dimensions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .rotations import matrix_to_rot6d, rot6d_to_matrix, yaw_matrix
from .skeleton import NUM_JOINTS

FEATURE_DIM = 201
_J_END = NUM_JOINTS * 3            # 66
_GAMMA_END = _J_END + 3            # 69
_PHI_END = _GAMMA_END + 6          # 75


@dataclass
class PoseParams:
    gamma: np.ndarray  # (..., 3)
    phi: np.ndarray    # (..., 6)
    psi: np.ndarray    # (..., 21, 6)


@dataclass
class MotionSequence:
    """N x 201 feature track at a fixed frame rate, tied to a skeleton."""

    frames: np.ndarray
    skeleton: object
    fps: int = 30
    shape: np.ndarray = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != FEATURE_DIM:
            raise SchemaError(f"frames must be N x {FEATURE_DIM}, got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise SchemaError("a motion needs at least 2 frames")

    def __len__(self):
        return self.frames.shape[0]


def fk_transforms(pose, skel):
    """Global joint positions (..., 22, 3) and rotations (..., 22, 3, 3).

    Root position is gamma; each child sits at
    parent_pos + R_global(parent) @ rest_offset(child), and global
    rotations accumulate parent @ local down the tree.
    """
    r_root = rot6d_to_matrix(pose.phi)
    r_local = rot6d_to_matrix(pose.psi)
    batch = r_root.shape[:-2]
    pos = np.zeros(batch + (NUM_JOINTS, 3))
    rot = np.zeros(batch + (NUM_JOINTS, 3, 3))
    pos[..., 0, :] = pose.gamma
    rot[..., 0, :, :] = r_root
    for j in range(1, NUM_JOINTS):
        p = skel.parents[j]
        rot[..., j, :, :] = rot[..., p, :, :] @ r_local[..., j - 1, :, :]
        pos[..., j, :] = pos[..., p, :] + np.einsum(
            "...ij,j->...i", rot[..., p, :, :], skel.rest_offsets[j]
        )
    return pos, rot


def forward_kinematics(pose, skel):
    return fk_transforms(pose, skel)[0]


def pose_attached_points(points, frame_joints, skel, fk_pos, fk_rot):
    """Rigidly carry T-pose surface points with their bones' FK frames.

    points: (P, 3) T-pose positions; frame_joints: (P,) joint index each
    point is attached to; fk_pos/fk_rot: (..., 22, 3) and (..., 22, 3, 3).
    Returns (..., P, 3).
    """
    from .skeleton import rest_joints

    rest = rest_joints(skel)
    local = points - rest[frame_joints]                     # (P, 3)
    rot = fk_rot[..., frame_joints, :, :]                   # (..., P, 3, 3)
    return fk_pos[..., frame_joints, :] + np.einsum("...ij,...j->...i", rot, local)


def pose_pack(pose, joints):
    """Concatenate (pose, joints) into flat 201-D features.

    joints[..., 0, :] must equal gamma within 1e-6 (the root joint is
    the root translation).
    """
    joints = np.asarray(joints, dtype=np.float64)
    gamma = np.asarray(pose.gamma, dtype=np.float64)
    if np.max(np.abs(joints[..., 0, :] - gamma)) > 1e-6:
        raise ValueError("joints[0] must equal root translation gamma")
    batch = joints.shape[:-2]
    return np.concatenate(
        [
            joints.reshape(batch + (_J_END,)),
            gamma,
            np.asarray(pose.phi, dtype=np.float64),
            np.asarray(pose.psi, dtype=np.float64).reshape(batch + (126,)),
        ],
        axis=-1,
    )


def pose_unpack(feature):
    """Split features (..., 201) into (PoseParams, joints (..., 22, 3)).

    Raises SchemaError for wrong length and for rotation blocks that do
    not decode to valid rotations (e.g. an all-zero feature).
    """
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape[-1] != FEATURE_DIM:
        raise SchemaError(f"expected {FEATURE_DIM}-D features, got {feature.shape}")
    batch = feature.shape[:-1]
    joints = feature[..., :_J_END].reshape(batch + (NUM_JOINTS, 3))
    pose = PoseParams(
        gamma=feature[..., _J_END:_GAMMA_END],
        phi=feature[..., _GAMMA_END:_PHI_END],
        psi=feature[..., _PHI_END:].reshape(batch + (21, 6)),
    )
    rot6d_to_matrix(pose.phi)  # validity check, raises on degenerate input
    rot6d_to_matrix(pose.psi)
    return pose, joints


def feature_joints(feature):
    """The stored global-joint block of features (..., 201) as (..., 22, 3)."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape[-1] != FEATURE_DIM:
        raise SchemaError(f"expected {FEATURE_DIM}-D features, got {feature.shape}")
    return feature[..., :_J_END].reshape(feature.shape[:-1] + (NUM_JOINTS, 3))


def fk_joints_of_features(feature, skel):
    """FK joint positions recomputed from the parameter blocks of features."""
    pose, _ = pose_unpack(feature)
    return forward_kinematics(pose, skel)


def apply_rigid(feature, yaw, translation):
    """Features under the gravity-preserving rigid map p -> R_yaw p + t.

    Joint positions and gamma transform as points, the root orientation
    picks up the yaw on the left, and local joint rotations are
    untouched. FK consistency of the feature is preserved.
    """
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape[-1] != FEATURE_DIM:
        raise SchemaError(f"expected {FEATURE_DIM}-D features, got {feature.shape}")
    r = yaw_matrix(yaw)
    t = np.asarray(translation, dtype=np.float64)
    batch = feature.shape[:-1]
    out = feature.copy()
    joints = feature[..., :_J_END].reshape(batch + (NUM_JOINTS, 3))
    out[..., :_J_END] = (joints @ r.T + t).reshape(batch + (_J_END,))
    out[..., _J_END:_GAMMA_END] = feature[..., _J_END:_GAMMA_END] @ r.T + t
    r_root = rot6d_to_matrix(feature[..., _GAMMA_END:_PHI_END])
    out[..., _GAMMA_END:_PHI_END] = matrix_to_rot6d(r @ r_root)
    return out
