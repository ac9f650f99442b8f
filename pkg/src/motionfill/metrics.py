"""Evaluation battery: FID, foot skating, jerk/accel, MJPE, collisions.

All motion metrics read joint positions through forward kinematics of
the parameter blocks, so they measure what the body actually does
rather than what the (possibly inconsistent) joint feature block says.
The one exception is the mjpe ``joints="feature"`` readout, kept for
inspecting imputation behavior.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ComparabilityError, SchemaError
from .geometry import NearestPointIndex, box_params_from_group, build_spatial_index
from .kinematics import (
    feature_joints,
    fk_transforms,
    forward_kinematics,
    pose_attached_points,
    pose_unpack,
)
from .skeleton import canonical_surface_points_with_bones, skeleton_hash

COLLISION_EPS = 0.01
CONTACT_HEIGHT = 0.05
COLLISION_POINTS = 4096

FOOT_JOINTS = ("left_ankle", "right_ankle", "left_foot", "right_foot")


def _fk_track(seq):
    pose, _ = pose_unpack(seq.frames)
    return forward_kinematics(pose, seq.skeleton)


# ---------------------------------------------------------------------------
# position error

def mjpe(pred, ref, mask=None, joints="fk"):
    """Mean joint position error in meters over selected frames.

    mask: boolean per-frame selector, or None for the full sequence.
    joints: "fk" compares FK of the parameter blocks (default);
    "feature" compares the stored global-joint blocks directly.
    """
    if len(pred) != len(ref):
        raise SchemaError(f"length mismatch: {len(pred)} vs {len(ref)}")
    if skeleton_hash(pred.skeleton) != skeleton_hash(ref.skeleton):
        raise SchemaError("sequences use different skeletons")
    if joints == "fk":
        jp, jr = _fk_track(pred), _fk_track(ref)
    elif joints == "feature":
        jp, jr = feature_joints(pred.frames), feature_joints(ref.frames)
    else:
        raise ValueError(f"unknown joint readout {joints!r}")
    d = np.linalg.norm(jp - jr, axis=-1)  # (N, 22)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (len(pred),):
            raise SchemaError("mask length mismatch")
        if not mask.any():
            raise ValueError("empty frame selection")
        d = d[mask]
    return float(d.mean())


# ---------------------------------------------------------------------------
# smoothness

def foot_skating(seq, contact_height=CONTACT_HEIGHT):
    """Height-weighted horizontal slide of foot joints during contact.

    Contact frames are those with foot height < H; each contributes the
    horizontal displacement since the previous frame weighted by
    (2 - 2^(h/H)). The mean contribution is scaled by fps to a
    per-second figure. 0 when no foot is ever in contact.
    """
    track = _fk_track(seq)
    feet = [seq.skeleton.index(n) for n in FOOT_JOINTS]
    p = track[:, feet]                                     # (N, 4, 3)
    disp = np.linalg.norm(np.diff(p[..., [0, 2]], axis=0), axis=-1)  # (N-1, 4)
    h = p[1:, :, 1]
    contact = h < contact_height
    if not contact.any():
        return 0.0
    weight = 2.0 - 2.0 ** (h / contact_height)
    return float((disp * weight)[contact].mean() * seq.fps)


def jerk(seq):
    """Mean third-difference magnitude of FK joints, in m/s^3."""
    if len(seq) < 4:
        raise ValueError("jerk needs at least 4 frames")
    d3 = np.diff(_fk_track(seq), n=3, axis=0) * seq.fps**3
    return float(np.linalg.norm(d3, axis=-1).mean())


def accel(seq):
    """Mean second-difference magnitude of FK joints, in m/s^2."""
    if len(seq) < 3:
        raise ValueError("accel needs at least 3 frames")
    d2 = np.diff(_fk_track(seq), n=2, axis=0) * seq.fps**2
    return float(np.linalg.norm(d2, axis=-1).mean())


# ---------------------------------------------------------------------------
# scene collisions

def _box_depths(points, boxes, floor_y):
    """Max penetration depth of each point into any box (or below floor)."""
    depth = np.zeros(points.shape[:-1])
    if floor_y is not None:
        depth = np.maximum(depth, floor_y - points[..., 1])
    for center, half, rot in boxes:
        local = (points - center) @ rot  # rot columns are box axes
        margin = half - np.abs(local)    # positive on all axes iff inside
        depth = np.maximum(depth, margin.min(axis=-1))
    return np.maximum(depth, 0.0)


def scene_penetration_test(scene):
    """Build a depth(points (...,3)) -> (...) function for a scene.

    Uses exact signed tests when the scene decomposes into tagged
    box_mesh groups plus an optional flat floor; otherwise falls back to
    the nearest-surface normal test on the mesh.
    """
    tags = set(scene.tags) if scene.tags else set()
    boxes, floors = [], []
    decomposed = bool(tags)
    for tag in sorted(tags):
        rows = [i for i, t in enumerate(scene.tags) if t == tag]
        tri_y = scene.vertices[scene.triangles[rows]][..., 1]
        if np.ptp(tri_y) < 1e-9:  # flat horizontal group, candidate floor
            floors.append(float(tri_y.flat[0]))
            continue
        params = box_params_from_group(scene, tag)
        if params is None:
            decomposed = False
            break
        boxes.append(params)
    floor_y = floors[0] if len(floors) == 1 else None
    if len(floors) > 1:
        decomposed = False
    if decomposed:
        return lambda pts: _box_depths(np.asarray(pts, dtype=np.float64), boxes, floor_y)
    index = scene if isinstance(scene, NearestPointIndex) else build_spatial_index(scene)
    return index.signed_depth


def collision_metrics(seq, scene, eps=COLLISION_EPS, n_points=COLLISION_POINTS):
    """(frame_ratio, vertex_ratio, penetration_max) of a motion in a scene.

    The body surface is the canonical capsule sampling carried rigidly
    by the bones. A sample point penetrates when its depth inside the
    scene exceeds eps; penetration_max reports the deepest point across
    the sequence regardless of eps.
    """
    if isinstance(scene, NearestPointIndex):
        depth_fn = scene.signed_depth
    else:
        if len(scene.triangles) == 0:
            warnings.warn("collision metrics against an empty scene are all zero")
            return 0.0, 0.0, 0.0
        depth_fn = scene_penetration_test(scene)
    skel = seq.skeleton
    pts, frame_joints = canonical_surface_points_with_bones(skel, n_points, seed=0)
    pose, _ = pose_unpack(seq.frames)
    pos, rot = fk_transforms(pose, skel)
    world = pose_attached_points(pts, frame_joints, skel, pos, rot)  # (N, P, 3)
    depth = depth_fn(world)
    pen = depth > eps
    return (
        float(pen.any(axis=1).mean()),
        float(pen.mean()),
        float(depth.max(initial=0.0)),
    )


# ---------------------------------------------------------------------------
# distribution distance

def fid(features_a, features_b, jitter=1e-6):
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the matrix
    square root computed through eigen-decompositions of symmetrized
    products and ``jitter`` added to both covariance diagonals.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise SchemaError("non-finite features")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise SchemaError(f"feature shape mismatch: {a.shape} vs {b.shape}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    d = a.shape[1]
    cov_a = np.cov(a, rowvar=False).reshape(d, d) + jitter * np.eye(d)
    cov_b = np.cov(b, rowvar=False).reshape(d, d) + jitter * np.eye(d)

    ev_a, vec_a = np.linalg.eigh(cov_a)
    half_a = (vec_a * np.sqrt(np.maximum(ev_a, 0.0))) @ vec_a.T
    inner = half_a @ cov_b @ half_a
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_sqrt = np.sqrt(np.maximum(ev, 0.0)).sum()
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt
    return float(max(value, 0.0))


# ---------------------------------------------------------------------------
# report assembly and serialization

AGGREGATE_FIELDS = (
    "foot_skating",
    "jerk",
    "accel",
    "mjpe_key",
    "mjpe_all",
    "collision_frame_ratio",
    "collision_vertex_ratio",
    "penetration_max",
)


@dataclass
class MetricReport:
    fid: float = float("nan")
    foot_skating: float = float("nan")
    jerk: float = float("nan")
    accel: float = float("nan")
    mjpe_key: float = float("nan")
    mjpe_all: float = float("nan")
    collision_frame_ratio: float = float("nan")
    collision_vertex_ratio: float = float("nan")
    penetration_max: float = float("nan")
    extractor_hash: str = ""
    per_sequence: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("collision_frame_ratio", "collision_vertex_ratio"):
            v = getattr(self, name)
            if np.isfinite(v) and not 0.0 <= v <= 1.0:
                raise SchemaError(f"{name} must lie in [0, 1], got {v}")
        for name in ("fid", "foot_skating", "jerk", "accel", "mjpe_key", "mjpe_all",
                     "penetration_max"):
            v = getattr(self, name)
            if np.isfinite(v) and v < 0:
                raise SchemaError(f"{name} must be non-negative, got {v}")


def aggregate_report(per_sequence, fid_value=float("nan"), extractor_hash=""):
    """Mean the per-sequence rows into a MetricReport."""
    agg = {}
    for name in AGGREGATE_FIELDS:
        vals = [row[name] for row in per_sequence if name in row]
        agg[name] = float(np.mean(vals)) if vals else float("nan")
    return MetricReport(
        fid=fid_value,
        extractor_hash=extractor_hash,
        per_sequence=list(per_sequence),
        **agg,
    )


def assert_comparable(report_a, report_b):
    """FID values only order runs that share a feature extractor."""
    if report_a.extractor_hash != report_b.extractor_hash:
        raise ComparabilityError(
            f"extractor hash mismatch: {report_a.extractor_hash!r} vs "
            f"{report_b.extractor_hash!r}"
        )


def report_to_text(report):
    lines = [f"extractor_hash {report.extractor_hash}"]
    for name in ("fid",) + AGGREGATE_FIELDS:
        lines.append(f"{name} {getattr(report, name)!r}")
    lines.append("per_sequence_table")
    cols = ("id",) + AGGREGATE_FIELDS
    lines.append("\t".join(cols))
    for row in report.per_sequence:
        lines.append(
            "\t".join(
                [str(row.get("id", ""))]
                + [repr(float(row.get(c, float("nan")))) for c in AGGREGATE_FIELDS]
            )
        )
    return "\n".join(lines) + "\n"


def report_from_text(text):
    lines = text.strip().splitlines()
    head = {}
    i = 0
    while i < len(lines) and lines[i] != "per_sequence_table":
        k, _, v = lines[i].partition(" ")
        head[k] = v
        i += 1
    per_seq = []
    if i < len(lines):
        cols = lines[i + 1].split("\t")
        for line in lines[i + 2 :]:
            parts = line.split("\t")
            row = {"id": parts[0]}
            for c, v in zip(cols[1:], parts[1:]):
                row[c] = float(v)
            per_seq.append(row)
    kwargs = {k: float(head[k]) for k in ("fid",) + AGGREGATE_FIELDS if k in head}
    return MetricReport(
        extractor_hash=head.get("extractor_hash", ""),
        per_sequence=per_seq,
        **kwargs,
    )
