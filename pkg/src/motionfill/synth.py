"""Procedural scenes and collision-free 2D route planning.

Scenes are a floor plus floor-standing yawed boxes. Generation retries
obstacle layouts until a 0.7 m-wide corridor provably connects the
start and goal regions (checked by planning on a raster inflated by
0.35 m). Routes come from A* on a 0.1 m grid inflated by the body
radius, then greedy shortcut smoothing.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSceneError
from .geometry import box_mesh, floor_mesh, merge_scenes

BODY_RADIUS = 0.25
CORRIDOR_HALF_WIDTH = 0.35
RASTER_CELL = 0.1


@dataclass(frozen=True)
class BoxSpec:
    center: tuple   # (x, y, z) m
    size: tuple     # (sx, sy, sz) m
    yaw: float


@dataclass
class SceneSpec:
    floor_extent: float
    obstacles: list = field(default_factory=list)
    seed: int = 0
    start: tuple = (0.0, 0.0)
    goal: tuple = (0.0, 0.0)

    def __post_init__(self):
        half = self.floor_extent / 2.0
        for b in self.obstacles:
            if np.any(np.array(b.size) < 0):
                raise ValueError(f"negative obstacle size: {b}")
            reach = np.hypot(b.size[0], b.size[2]) / 2.0
            if abs(b.center[0]) + reach > half or abs(b.center[2]) + reach > half:
                raise ValueError(f"obstacle escapes the floor: {b}")


def scene_mesh(spec):
    parts = [floor_mesh(spec.floor_extent)]
    for i, b in enumerate(spec.obstacles):
        parts.append(box_mesh(b.center, b.size, b.yaw, tag=f"box{i}"))
    return merge_scenes(*parts)


def _obstacle_clearance(points, spec):
    """Distance (...,) from 2D points (..., 2) to the nearest box footprint.

    Footprints are the yawed rectangles of the boxes in the ground plane;
    distance is 0 inside a footprint.
    """
    points = np.asarray(points, dtype=np.float64)
    out = np.full(points.shape[:-1], np.inf)
    for b in spec.obstacles:
        c, s = np.cos(b.yaw), np.sin(b.yaw)
        d = points - np.array([b.center[0], b.center[2]])
        # into the box frame: box_mesh yaws by R_y, whose ground-plane action
        # maps local (x, z) to world (c*x + s*z, -s*x + c*z)
        local = np.stack(
            [c * d[..., 0] - s * d[..., 1], s * d[..., 0] + c * d[..., 1]], axis=-1
        )
        half = np.array([b.size[0] / 2.0, b.size[2] / 2.0])
        excess = np.maximum(np.abs(local) - half, 0.0)
        out = np.minimum(out, np.linalg.norm(excess, axis=-1))
    return out


def _free_raster(spec, inflation):
    half = spec.floor_extent / 2.0
    n = int(round(spec.floor_extent / RASTER_CELL))
    coords = -half + (np.arange(n) + 0.5) * RASTER_CELL
    gx, gz = np.meshgrid(coords, coords, indexing="ij")
    pts = np.stack([gx, gz], axis=-1)
    free = _obstacle_clearance(pts, spec) >= inflation
    return free, coords


def _to_cell(p, coords):
    return (
        int(np.argmin(np.abs(coords - p[0]))),
        int(np.argmin(np.abs(coords - p[1]))),
    )


_MOVES = [
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, np.sqrt(2)), (1, -1, np.sqrt(2)), (-1, 1, np.sqrt(2)), (-1, -1, np.sqrt(2)),
]


def _astar(free, start, goal):
    n = free.shape[0]
    if not free[start] or not free[goal]:
        return None
    dist = {start: 0.0}
    prev = {}
    def h(c):
        dx, dz = abs(c[0] - goal[0]), abs(c[1] - goal[1])
        return max(dx, dz) + (np.sqrt(2) - 1) * min(dx, dz)
    heap = [(h(start), start)]
    done = set()
    while heap:
        _, cur = heapq.heappop(heap)
        if cur in done:
            continue
        if cur == goal:
            path = [cur]
            while cur in prev:
                cur = prev[cur]
                path.append(cur)
            return path[::-1]
        done.add(cur)
        for dx, dz, cost in _MOVES:
            nxt = (cur[0] + dx, cur[1] + dz)
            if not (0 <= nxt[0] < n and 0 <= nxt[1] < n) or not free[nxt]:
                continue
            # forbid diagonal corner cutting
            if dx and dz and not (free[cur[0] + dx, cur[1]] and free[cur[0], cur[1] + dz]):
                continue
            nd = dist[cur] + cost
            if nd < dist.get(nxt, np.inf):
                dist[nxt] = nd
                prev[nxt] = cur
                heapq.heappush(heap, (nd + h(nxt), nxt))
    return None


def _segment_clear(a, b, spec, clearance, step=0.05):
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = np.linalg.norm(b - a)
    n = max(int(np.ceil(length / step)) + 1, 2)
    t = np.linspace(0.0, 1.0, n)
    pts = a[None] + t[:, None] * (b - a)[None]
    return bool(np.all(_obstacle_clearance(pts, spec) >= clearance))


def _shortcut(waypoints, spec, clearance):
    out = [waypoints[0]]
    i = 0
    while i < len(waypoints) - 1:
        j = len(waypoints) - 1
        while j > i + 1 and not _segment_clear(waypoints[i], waypoints[j], spec, clearance):
            j -= 1
        out.append(waypoints[j])
        i = j
    return out


def plan_path(spec, start, goal, clearance=BODY_RADIUS):
    """2D waypoints from start to goal with the given clearance.

    A* runs on the 0.1 m raster inflated by clearance plus half a cell
    diagonal (to cover within-cell error); the raster path is then
    shortcut-smoothed. Raises InfeasibleSceneError when either endpoint
    is blocked or no route exists.
    """
    start = (float(start[0]), float(start[1]))
    goal = (float(goal[0]), float(goal[1]))
    margin = RASTER_CELL * np.sqrt(2) / 2.0
    if np.any(_obstacle_clearance(np.array([start, goal]), spec) < clearance):
        raise InfeasibleSceneError("start or goal lacks body clearance")
    free, coords = _free_raster(spec, clearance + margin)
    cells = _astar(free, _to_cell(start, coords), _to_cell(goal, coords))
    if cells is None:
        raise InfeasibleSceneError("no route between start and goal")
    waypoints = [start]
    waypoints += [(float(coords[i]), float(coords[j])) for i, j in cells[1:-1]]
    waypoints.append(goal)
    smooth = _shortcut(waypoints, spec, clearance)
    for a, b in zip(smooth[:-1], smooth[1:]):
        assert _segment_clear(a, b, spec, clearance), "smoothed path lost clearance"
    return smooth


def generate_scene(seed, difficulty=0.5, floor_extent=8.0, max_tries=40):
    """A floor with 3-10 boxes and a guaranteed 0.7 m corridor.

    difficulty in [0, 1] scales obstacle count and bulk; 0 means an
    empty floor. Deterministic per (seed, difficulty). Returns
    (SceneSpec, SceneGeometry).
    """
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError("difficulty must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE]))
    half = floor_extent / 2.0
    edge = 0.9

    for attempt in range(max_tries):
        start = (-half + edge, float(rng.uniform(-half + edge, half - edge)))
        goal = (half - edge, float(rng.uniform(-half + edge, half - edge)))
        n_boxes = 0 if difficulty == 0 else int(np.clip(3 + round(7 * difficulty), 3, 10))
        boxes = []
        for _ in range(n_boxes):
            size = (
                float(rng.uniform(0.3, 0.8 + 0.7 * difficulty)),
                float(rng.uniform(0.4, 2.0)),
                float(rng.uniform(0.3, 0.8 + 0.7 * difficulty)),
            )
            reach = float(np.hypot(size[0], size[2]) / 2.0)
            lim = half - reach - 0.05
            center = (
                float(rng.uniform(-lim, lim)),
                size[1] / 2.0,
                float(rng.uniform(-lim, lim)),
            )
            boxes.append(BoxSpec(center, size, float(rng.uniform(0, np.pi))))
        spec = SceneSpec(floor_extent, boxes, seed=seed, start=start, goal=goal)
        ends = np.array([start, goal])
        if np.any(_obstacle_clearance(ends, spec) < CORRIDOR_HALF_WIDTH + 0.05):
            continue
        try:  # corridor guarantee: a route must exist at 0.35 m clearance
            plan_path(spec, start, goal, clearance=CORRIDOR_HALF_WIDTH)
        except InfeasibleSceneError:
            continue
        return spec, scene_mesh(spec)
    raise InfeasibleSceneError(f"no feasible layout after {max_tries} tries (seed={seed})")