"""Scene geometry: OBJ meshes, nearest-surface queries, occupancy voxels.

Scenes are triangle soups in meters, y-up. Nearest-point queries are
exact (vectorized closest-point-on-triangle over the whole soup; scenes
here are a few hundred triangles, so no acceleration structure is
warranted). Voxelization uses an exact triangle/box separating-axis
test per cell.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySceneError, SchemaError

GRID_DIMS = (48, 24, 48)
CELL_SIZE = 0.1
GRID_HEIGHT = 2.4  # vertical span from the floor, = 24 cells
# grid-local position of the (0,0,0) cell's min corner: horizontally centered,
# vertically starting at the floor
GRID_LOCAL_MIN = np.array([-2.4, 0.0, -2.4])


@dataclass
class SceneGeometry:
    vertices: np.ndarray                 # (V, 3) meters
    triangles: np.ndarray                # (F, 3) vertex indices
    tags: tuple = field(default=())      # optional per-triangle semantic tag

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise SchemaError("triangle indices out of range")
        if self.tags and len(self.tags) != len(self.triangles):
            raise SchemaError("tags length must match triangle count")
        if len(self.triangles):
            areas = triangle_areas(self)
            if np.any(areas <= 1e-10):
                raise SchemaError("degenerate triangle (area <= 1e-10 m^2)")

    @property
    def corners(self):
        """Triangle corner arrays (a, b, c), each (F, 3)."""
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]


def triangle_areas(scene):
    a, b, c = scene.corners
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def triangle_normals(scene):
    a, b, c = scene.corners
    n = np.cross(b - a, c - a)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def merge_scenes(*scenes):
    verts, tris, tags = [], [], []
    offset = 0
    for s in scenes:
        verts.append(s.vertices)
        tris.append(s.triangles + offset)
        tags.extend(s.tags if s.tags else ("",) * len(s.triangles))
        offset += len(s.vertices)
    return SceneGeometry(np.concatenate(verts), np.concatenate(tris), tuple(tags))


def transform_scene(scene, yaw, translation):
    """Copy of the scene under the rigid map v -> R_yaw v + t.

    Yaw-only rotation keeps floors flat, so tagged-box recovery keeps
    working on the result.
    """
    c, s = np.cos(yaw), np.sin(yaw)
    r = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    verts = scene.vertices @ r.T + np.asarray(translation, dtype=np.float64)
    return SceneGeometry(verts, scene.triangles.copy(), scene.tags)


# ---------------------------------------------------------------------------
# OBJ input/output (ASCII, triangles only)

def load_obj(path):
    verts, tris, tags = [], [], []
    current = ""
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] in ("o", "g"):
                current = tok[1] if len(tok) > 1 else ""
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise SchemaError(f"non-triangle face in {path}: {line!r}")
                idx = []
                for part in tok[1:]:
                    i = int(part.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                tris.append(idx)
                tags.append(current)
            # vn/vt/usemtl/mtllib/s are irrelevant here
    return SceneGeometry(
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
        tuple(tags),
    )


def save_obj(scene, path):
    lines = []
    for v in scene.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    tags = scene.tags if scene.tags else ("",) * len(scene.triangles)
    current = None
    for t, tag in zip(scene.triangles, tags):
        if tag != current:
            lines.append(f"o {tag}" if tag else "o mesh")
            current = tag
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def box_mesh(center, size, yaw=0.0, tag="box"):
    """Closed box (12 triangles, outward winding), yawed about +y.

    Vertex order is a stable contract: corner i has local sign pattern
    (sx, sy, sz) = (±1, ±1, ±1) with sx the high bit and sz the low bit
    of i, so vertices 0 and 7 are opposite corners and the box can be
    reconstructed from the mesh (see box_params_from_group).
    """
    center = np.asarray(center, dtype=np.float64)
    h = np.asarray(size, dtype=np.float64) / 2.0
    corners = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    ) * h
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    verts = corners @ rot.T + center
    # quads per face as corner indices into the (-,+)^3 ordering above
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, cc, d in quads:
        tris.append((a, b, cc))
        tris.append((a, cc, d))
    return SceneGeometry(verts, np.array(tris), (tag,) * 12)


def box_params_from_group(scene, tag):
    """Recover (center, half_sizes, rotation) of a box_mesh-built group.

    Relies on the corner ordering contract of box_mesh. Returns None when
    the tagged triangles do not form such a box.
    """
    tris = [i for i, t in enumerate(scene.tags) if t == tag] if scene.tags else []
    if len(tris) != 12:
        return None
    vidx = np.unique(scene.triangles[tris])
    if len(vidx) != 8 or np.any(np.diff(vidx) != 1):
        return None
    v = scene.vertices[vidx]
    center = 0.5 * (v[0] + v[7])
    ax = v[4] - v[0]   # sx flips between corners 0 and 4
    ay = v[2] - v[0]   # sy flips between corners 0 and 2
    az = v[1] - v[0]   # sz flips between corners 0 and 1
    half = 0.5 * np.array([np.linalg.norm(ax), np.linalg.norm(ay), np.linalg.norm(az)])
    if np.any(half < 1e-9):
        return None
    rot = np.stack([ax / (2 * half[0]), ay / (2 * half[1]), az / (2 * half[2])], axis=1)
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6:
        return None
    expect = (
        np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        * half
    ) @ rot.T + center
    if np.max(np.abs(expect - v)) > 1e-6:
        return None
    return center, half, rot


def floor_mesh(extent, tag="floor"):
    """Square floor at y=0 spanning [-extent/2, extent/2]^2, normals up."""
    e = extent / 2.0
    verts = np.array([[-e, 0, -e], [e, 0, -e], [e, 0, e], [-e, 0, e]])
    tris = np.array([[0, 2, 1], [0, 3, 2]])
    return SceneGeometry(verts, tris, (tag, tag))


# ---------------------------------------------------------------------------
# Exact nearest point on the scene surface

def _dot(u, v):
    return np.sum(u * v, axis=-1)


def closest_point_on_triangles(q, a, b, c):
    """Closest point to q on each triangle (a, b, c); broadcasts over (...)."""
    ab = b - a
    ac = c - a
    ap = q - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = q - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = q - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def safe(num, den):
        return num / np.where(np.abs(den) < 1e-30, 1.0, den)

    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
    ]
    t_ab = safe(d1, d1 - d3)[..., None]
    t_ac = safe(d2, d2 - d6)[..., None]
    t_bc = safe(d4 - d3, (d4 - d3) + (d5 - d6))[..., None]
    denom = safe(np.ones_like(va), va + vb + vc)
    v = (vb * denom)[..., None]
    w = (vc * denom)[..., None]
    choices = [
        np.broadcast_to(a, np.broadcast_shapes(a.shape, q.shape)),
        np.broadcast_to(b, np.broadcast_shapes(b.shape, q.shape)),
        a + t_ab * ab,
        np.broadcast_to(c, np.broadcast_shapes(c.shape, q.shape)),
        a + t_ac * ac,
        b + t_bc * (c - b),
    ]
    interior = a + v * ab + w * ac
    return np.select([m[..., None] for m in conds], choices, default=interior)


class NearestPointIndex:
    """Exact nearest-surface queries; ties go to the lowest triangle index."""

    def __init__(self, scene):
        if len(scene.triangles) == 0:
            raise EmptySceneError("cannot build an index over an empty scene")
        self.scene = scene
        self._a, self._b, self._c = scene.corners
        self._normals = triangle_normals(scene)

    def query(self, points, chunk=256):
        """points (..., 3) -> (closest (..., 3), distance (...), tri (...))."""
        points = np.asarray(points, dtype=np.float64)
        flat = points.reshape(-1, 3)
        n = len(flat)
        best_p = np.empty((n, 3))
        best_d2 = np.full(n, np.inf)
        best_t = np.zeros(n, dtype=np.int64)
        nt = len(self._a)
        for start in range(0, nt, chunk):
            sl = slice(start, min(start + chunk, nt))
            cp = closest_point_on_triangles(
                flat[:, None, :], self._a[None, sl], self._b[None, sl], self._c[None, sl]
            )
            d2 = np.sum((cp - flat[:, None, :]) ** 2, axis=-1)
            arg = np.argmin(d2, axis=1)  # first minimum = lowest index in chunk
            dmin = d2[np.arange(n), arg]
            better = dmin < best_d2  # strict: earlier chunks win exact ties
            best_d2[better] = dmin[better]
            best_t[better] = arg[better] + start
            best_p[better] = cp[np.arange(n), arg][better]
        shape = points.shape[:-1]
        return (
            best_p.reshape(shape + (3,)),
            np.sqrt(best_d2).reshape(shape),
            best_t.reshape(shape),
        )

    def signed_depth(self, points):
        """Penetration depth (..., ) into the scene: 0 outside, else distance.

        A point counts as inside when it sits behind the outward normal of
        its nearest triangle; valid for closed outward-wound solids (and
        for points under an upward-facing floor).
        """
        p, d, t = self.query(points)
        inward = _dot(np.asarray(points, dtype=np.float64) - p, self._normals[t]) < 0
        return np.where(inward, d, 0.0)


def build_spatial_index(scene):
    return NearestPointIndex(scene)


def nearest_point(index, q):
    """(closest point, distance) for one query point."""
    p, d, _ = index.query(np.asarray(q, dtype=np.float64))
    return p, float(d)


# ---------------------------------------------------------------------------
# Occupancy voxelization

@dataclass
class OccupancyGrid:
    occupancy: np.ndarray     # (48, 24, 48) bool, indexed [ix, iy, iz]
    origin: np.ndarray        # world position of the (0,0,0) cell min corner
    frame: np.ndarray         # 3x3 yaw rotation, world = origin + frame @ local
    cell_size: float = CELL_SIZE

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.shape != GRID_DIMS:
            raise SchemaError(f"grid must be {GRID_DIMS}, got {self.occupancy.shape}")
        if abs(self.cell_size - CELL_SIZE) > 1e-12:
            raise SchemaError(f"cell size must be {CELL_SIZE}")
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.frame = np.asarray(self.frame, dtype=np.float64)


def _is_yaw_only(rot, tol=1e-8):
    rot = np.asarray(rot, dtype=np.float64)
    return (
        rot.shape == (3, 3)
        and np.max(np.abs(rot @ np.array([0.0, 1.0, 0.0]) - [0, 1, 0])) < tol
        and abs(np.linalg.det(rot) - 1.0) < 1e-6
    )


def triangle_box_overlap(tri, box_lo, box_hi):
    """Exact SAT triangle vs axis boxes. tri (3,3), box_lo/box_hi (M,3).

    Face-normal axes compare the triangle extent against the box bounds
    directly (no recentering), so exact-touch decisions depend only on
    the input floats. Touching counts as overlap.
    """
    tmin = tri.min(axis=0)
    tmax = tri.max(axis=0)
    ok = np.all((tmin[None] <= box_hi) & (tmax[None] >= box_lo), axis=1)

    centers = 0.5 * (box_lo + box_hi)
    half = 0.5 * (box_hi - box_lo)
    v = tri[None] - centers[:, None, :]          # (M, 3, 3) box-local corners
    e = np.array([tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]])

    # normal + 9 cross-product axes; axes parallel to a coordinate axis are
    # redundant with the face tests above (same predicate, noisier rounding),
    # so they are dropped to keep exact-touch decisions consistent
    axes = [np.cross(e[0], e[1])]
    for i in range(3):
        for j in range(3):
            axes.append(np.cross(np.eye(3)[i], e[j]))
    axes = np.array([a for a in axes if np.count_nonzero(a) >= 2])
    if len(axes):
        proj = np.einsum("mkc,ac->mka", v, axes)  # (M, 3 verts, n axes)
        rad = half @ np.abs(axes).T               # (M, n axes)
        ok &= np.all(
            (proj.min(axis=1) <= rad) & (proj.max(axis=1) >= -rad), axis=1
        )
    return ok


def voxelize_global(scene, root_pos, root_yaw):
    """Occupancy grid anchored at the first-frame root.

    The grid is horizontally centered at root_pos, yawed by root_yaw, and
    spans [0, 2.4] m vertically from the floor (y = 0). A cell is occupied
    iff some triangle intersects its axis-aligned box in the grid frame.
    Geometry outside the grid volume is ignored.
    """
    if not _is_yaw_only(root_yaw):
        raise ValueError("root_yaw must be a yaw-only rotation matrix")
    root_pos = np.asarray(root_pos, dtype=np.float64)
    frame = np.asarray(root_yaw, dtype=np.float64)
    center_world = np.array([root_pos[0], 0.0, root_pos[2]])
    origin = center_world + frame @ GRID_LOCAL_MIN

    occ = np.zeros(GRID_DIMS, dtype=bool)
    if len(scene.triangles) == 0:
        return OccupancyGrid(occ, origin, frame)

    # shifted grid-local coordinates: cell (i,j,k) spans [idx, idx+1]*CELL_SIZE
    local_verts = (scene.vertices - center_world) @ frame - GRID_LOCAL_MIN
    dims = np.array(GRID_DIMS)
    for t in scene.triangles:
        tri = local_verts[t]
        lo = np.maximum(np.floor(tri.min(axis=0) / CELL_SIZE - 1e-9).astype(int), 0)
        hi = np.minimum(
            np.floor(tri.max(axis=0) / CELL_SIZE + 1e-9).astype(int), dims - 1
        )
        if np.any(hi < lo):
            continue
        ix, iy, iz = [np.arange(lo[d], hi[d] + 1) for d in range(3)]
        gx, gy, gz = np.meshgrid(ix, iy, iz, indexing="ij")
        cells = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        todo = ~occ[cells[:, 0], cells[:, 1], cells[:, 2]]
        if not np.any(todo):
            continue
        cells = cells[todo]
        hit = triangle_box_overlap(tri, cells * CELL_SIZE, (cells + 1) * CELL_SIZE)
        hits = cells[hit]
        occ[hits[:, 0], hits[:, 1], hits[:, 2]] = True
    return OccupancyGrid(occ, origin, frame)


# ---------------------------------------------------------------------------
# Grid debug export: bit-packed occupancy plus a text sidecar

def save_grid(grid, path):
    flat = np.transpose(grid.occupancy, (2, 1, 0)).reshape(-1)  # x fastest
    packed = np.packbits(flat.astype(np.uint8), bitorder="little")
    with open(path, "wb") as f:
        f.write(packed.tobytes())
    with open(path + ".meta", "w") as f:
        f.write("format occupancy-bitpack-v1\n")
        f.write(f"dims {GRID_DIMS[0]} {GRID_DIMS[1]} {GRID_DIMS[2]}\n")
        f.write(f"cell_size {grid.cell_size!r}\n")
        f.write("order x-fastest bit-little\n")
        f.write("origin " + " ".join(repr(float(v)) for v in grid.origin) + "\n")
        yaw = float(np.arctan2(grid.frame[0, 2], grid.frame[2, 2]))
        f.write(f"yaw {yaw!r}\n")


def load_grid(path):
    meta = {}
    with open(path + ".meta") as f:
        for line in f:
            k, _, rest = line.strip().partition(" ")
            meta[k] = rest
    dims = tuple(int(x) for x in meta["dims"].split())
    if dims != GRID_DIMS:
        raise SchemaError(f"unsupported grid dims {dims}")
    with open(path, "rb") as f:
        packed = np.frombuffer(f.read(), dtype=np.uint8)
    flat = np.unpackbits(packed, bitorder="little")[: int(np.prod(dims))]
    occ = np.transpose(flat.reshape(dims[2], dims[1], dims[0]), (2, 1, 0)).astype(bool)
    origin = np.array([float(x) for x in meta["origin"].split()])
    yaw = float(meta["yaw"])
    c, s = np.cos(yaw), np.sin(yaw)
    frame = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return OccupancyGrid(occ, origin, frame, float(meta["cell_size"]))
