"""Body-anchored basis-point-set features for keyframe scene context.

64 anchors are picked once by farthest-point sampling over a dense
T-pose capsule-surface sampling. Each anchor is rigidly attached to the
bone that generated it; at a keyframe the anchors ride the posed bones
and the feature is, per anchor, the offset to the nearest scene point.
Anchor order is fixed by the FPS selection, which keeps features
comparable across frames and runs.
"""

from dataclasses import dataclass

import numpy as np

from .kinematics import fk_transforms, pose_attached_points
from .skeleton import canonical_surface_points_with_bones, farthest_point_sampling

NUM_ANCHORS = 64
SURFACE_SAMPLES = 4096


@dataclass(frozen=True)
class AnchorSet:
    points: np.ndarray        # (64, 3) T-pose positions, FPS order
    frame_joints: np.ndarray  # (64,) joint whose FK frame carries each anchor


def canonical_anchors(skel, n_surface=SURFACE_SAMPLES, n_anchors=NUM_ANCHORS, seed=0):
    pts, frames = canonical_surface_points_with_bones(skel, n_surface, seed)
    idx = farthest_point_sampling(pts, n_anchors, seed)
    return AnchorSet(points=pts[idx], frame_joints=frames[idx])


def posed_anchors(pose, skel, anchors):
    """Anchor world positions (..., 64, 3) at the given pose(s)."""
    pos, rot = fk_transforms(pose, skel)
    return pose_attached_points(anchors.points, anchors.frame_joints, skel, pos, rot)


def bps_features(keyframe_pose, skel, anchors, index):
    """Per-anchor offsets (..., 64, 3): nearest scene point minus anchor."""
    world = posed_anchors(keyframe_pose, skel, anchors)
    nearest, _, _ = index.query(world)
    return nearest - world
