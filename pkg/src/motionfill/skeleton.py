"""Canonical 22-joint capsule body: loading, validation, shape, surface.

The skeleton ships as a plain-text config (joint names, parents, rest
offsets in meters, one capsule per bone). Joints follow the usual
22-joint humanoid topology (pelvis root, 5-joint spine/head chain, arms
with collar bones, legs with toe joints). The capsule union stands in
for a skinned mesh everywhere surface geometry is needed.
"""

import hashlib
import importlib.resources
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError

NUM_JOINTS = 22

BODY_SHAPE_LABELS = (
    "root_to_head",
    "shoulder_width",
    "shoulder_to_wrist",
    "hip_width",
    "pelvis_to_feet",
    "chest_thickness",
    "hip_thickness",
)


@dataclass(frozen=True)
class Capsule:
    """Bone capsule with axis from joint ``a`` (parent side) to joint ``b``."""

    a: int
    b: int
    radius: float


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple
    parents: np.ndarray
    rest_offsets: np.ndarray
    capsules: tuple = field(default=())

    def index(self, name):
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise SchemaError(f"skeleton has no joint named {name!r}") from None


def validate_skeleton(skel):
    """Raise SchemaError unless the skeleton satisfies its invariants.

    Parents must be listed in topological order (parent index strictly
    below the child's), which also guarantees a tree rooted at joint 0.
    """
    n = len(skel.joint_names)
    if n != NUM_JOINTS:
        raise SchemaError(f"expected {NUM_JOINTS} joints, got {n}")
    if skel.parents.shape != (n,) or skel.rest_offsets.shape != (n, 3):
        raise SchemaError("parents/rest_offsets shape mismatch")
    if skel.parents[0] != -1:
        raise SchemaError("joint 0 must be the root (parent -1)")
    for j in range(1, n):
        if not 0 <= skel.parents[j] < j:
            raise SchemaError(f"joint {j} parent {skel.parents[j]} breaks topological order")
    if np.any(skel.rest_offsets[0] != 0.0):
        raise SchemaError("root rest offset must be zero")
    if len(set(skel.joint_names)) != n:
        raise SchemaError("duplicate joint names")
    for c in skel.capsules:
        if not (0 <= c.a < n and 0 <= c.b < n):
            raise SchemaError(f"capsule joints out of range: {c}")
        if c.radius <= 0:
            raise SchemaError(f"capsule radius must be positive: {c}")
    return skel


def parse_skeleton(text):
    names, parents, offsets, capsules = {}, {}, {}, []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "joint":
            if len(tok) != 7:
                raise SchemaError(f"bad joint line: {raw!r}")
            i = int(tok[1])
            names[i] = tok[2]
            parents[i] = int(tok[3])
            offsets[i] = [float(v) for v in tok[4:7]]
        elif tok[0] == "capsule":
            if len(tok) != 4:
                raise SchemaError(f"bad capsule line: {raw!r}")
            capsules.append(Capsule(int(tok[1]), int(tok[2]), float(tok[3])))
        else:
            raise SchemaError(f"unknown skeleton record {tok[0]!r}")
    n = len(names)
    if sorted(names) != list(range(n)):
        raise SchemaError("joint indices must be 0..n-1 without gaps")
    skel = Skeleton(
        joint_names=tuple(names[i] for i in range(n)),
        parents=np.array([parents[i] for i in range(n)], dtype=np.int64),
        rest_offsets=np.array([offsets[i] for i in range(n)], dtype=np.float64),
        capsules=tuple(capsules),
    )
    return validate_skeleton(skel)


def load_skeleton(path):
    with open(path) as f:
        return parse_skeleton(f.read())


_canonical = None


def canonical_skeleton():
    """The packaged default skeleton (loaded once and cached)."""
    global _canonical
    if _canonical is None:
        text = (
            importlib.resources.files("motionfill")
            .joinpath("data/canonical_skeleton.txt")
            .read_text()
        )
        _canonical = parse_skeleton(text)
    return _canonical


def skeleton_text(skel):
    """Canonical serialization, the basis for skeleton_hash."""
    lines = []
    for i, name in enumerate(skel.joint_names):
        ox, oy, oz = (float(v) for v in skel.rest_offsets[i])
        lines.append(f"joint {i} {name} {skel.parents[i]} {ox!r} {oy!r} {oz!r}")
    for c in skel.capsules:
        lines.append(f"capsule {c.a} {c.b} {float(c.radius)!r}")
    return "\n".join(lines) + "\n"


def skeleton_hash(skel):
    return hashlib.sha256(skeleton_text(skel).encode()).hexdigest()[:16]


def rest_joints(skel):
    """T-pose global joint positions (22, 3): cumulative rest offsets."""
    pos = np.zeros((len(skel.joint_names), 3))
    for j in range(1, len(skel.joint_names)):
        pos[j] = pos[skel.parents[j]] + skel.rest_offsets[j]
    return pos


def extract_body_shape(skel):
    """Seven body-shape scalars from T-pose joints and capsule thickness.

    Layout (see BODY_SHAPE_LABELS): root-to-head, shoulder width,
    shoulder-to-wrist, hip width, pelvis-to-feet (mean over both feet),
    chest thickness, hip thickness. Thickness = 2x the radius of the
    spine capsule ending at spine3 (chest) or spine1 (hip).
    """
    j = rest_joints(skel)
    idx = skel.index
    d = lambda a, b: float(np.linalg.norm(j[idx(a)] - j[idx(b)]))

    def bone_radius(child_name):
        child = idx(child_name)
        for c in skel.capsules:
            if c.b == child:
                return c.radius
        raise SchemaError(f"no capsule ends at joint {child_name!r}")

    b = np.array([
        d("pelvis", "head"),
        d("left_shoulder", "right_shoulder"),
        d("left_shoulder", "left_wrist"),
        d("left_hip", "right_hip"),
        0.5 * (d("pelvis", "left_foot") + d("pelvis", "right_foot")),
        2.0 * bone_radius("spine3"),
        2.0 * bone_radius("spine1"),
    ])
    if np.any(b <= 0):
        raise SchemaError("body shape entries must be positive")
    return b


def capsule_surface_area(radius, length):
    return 2.0 * np.pi * radius * length + 4.0 * np.pi * radius**2


def sample_capsule_surface(joints, capsules, n, seed):
    """Uniform points on the union of capsule surfaces at given joints.

    Returns (points n x 3, capsule_index n). Sampling is area-weighted
    across capsules; within a capsule the cylindrical side and the two
    hemispherical caps are weighted by their areas, so the distance from
    each point to its own capsule axis segment is exactly the radius.
    """
    rng = np.random.default_rng(seed)
    p0 = np.array([joints[c.a] for c in capsules])
    p1 = np.array([joints[c.b] for c in capsules])
    radii = np.array([c.radius for c in capsules])
    lengths = np.linalg.norm(p1 - p0, axis=1)
    areas = capsule_surface_area(radii, lengths)
    counts = rng.multinomial(n, areas / areas.sum())

    pts = np.empty((n, 3))
    owner = np.empty(n, dtype=np.int64)
    cursor = 0
    for ci, cnt in enumerate(counts):
        if cnt == 0:
            continue
        r, length = radii[ci], lengths[ci]
        u = (p1[ci] - p0[ci]) / length if length > 1e-12 else np.array([0.0, 1.0, 0.0])
        # orthonormal frame around the axis
        ref = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        v = np.cross(u, ref)
        v /= np.linalg.norm(v)
        w = np.cross(u, v)
        side_frac = (2.0 * np.pi * r * length) / areas[ci]
        pick = rng.random(cnt) < side_frac
        n_side = int(pick.sum())
        out = np.empty((cnt, 3))
        if n_side:
            t = rng.random(n_side) * length
            th = rng.random(n_side) * 2.0 * np.pi
            out[pick] = (
                p0[ci]
                + t[:, None] * u
                + r * (np.cos(th)[:, None] * v + np.sin(th)[:, None] * w)
            )
        n_cap = cnt - n_side
        if n_cap:
            dirs = rng.standard_normal((n_cap, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            ends = np.where((dirs @ u > 0)[:, None], p1[ci], p0[ci])
            out[~pick] = ends + r * dirs
        pts[cursor : cursor + cnt] = out
        owner[cursor : cursor + cnt] = ci
        cursor += cnt
    return pts, owner


def canonical_surface_points(skel, n, seed=0):
    """n uniform points on the T-pose capsule surface (deterministic)."""
    pts, _ = canonical_surface_points_with_bones(skel, n, seed)
    return pts


def canonical_surface_points_with_bones(skel, n, seed=0):
    """T-pose surface points plus the parent-side joint each rides on.

    The returned frame joint is the capsule's ``a`` endpoint; posing a
    point rigidly uses that joint's global FK transform.
    """
    if n < 64:
        raise ValueError(f"need n >= 64, got {n}")
    if not skel.capsules:
        raise SchemaError("skeleton has no capsules")
    pts, owner = sample_capsule_surface(rest_joints(skel), skel.capsules, n, seed)
    frame_joint = np.array([skel.capsules[i].a for i in owner], dtype=np.int64)
    return pts, frame_joint


def farthest_point_sampling(points, k, seed=0):
    """Greedy farthest-point subset of k indices, start chosen by seed % n."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k > n:
        raise ValueError(f"k={k} exceeds point count {n}")
    if k <= 0:
        raise ValueError("k must be positive")
    start = seed % n
    chosen = [start]
    d = np.linalg.norm(points - points[start], axis=1)
    d[start] = -1.0
    for _ in range(k - 1):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(points - points[nxt], axis=1))
        d[nxt] = -1.0
    return np.array(chosen, dtype=np.int64)
