"""Windowing, keyframe masks, noise injection, and the dataset on disk.

Ground-truth motions are cut into overlapping 121-frame windows, each
re-expressed in its own frame-0 root frame (horizontal position at the
origin, yaw identity) so scene grids can anchor to the first pose. A
window remembers the world pose of its canonical frame; the matching
scene transform is ``scene_for_window``.

Disk layout under a dataset root:

    scenes/<scene_id>.obj
    motions/<window_id>/meta        key-value text
    motions/<window_id>/frames.f32  little-endian float32, row-major N x 201
    train.txt / test.txt            line-delimited window ids
    manifest.txt                    generator version, seed, counts
"""

import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import InfeasibleSceneError, SchemaError
from .gait import GaitParams, synthesize_motion
from .geometry import load_obj, save_obj, transform_scene
from .kinematics import (
    FEATURE_DIM,
    MotionSequence,
    PoseParams,
    apply_rigid,
    forward_kinematics,
    pose_pack,
    pose_unpack,
)
from .metrics import collision_metrics, foot_skating, jerk
from .rotations import (
    axis_angle_to_matrix,
    matrix_to_rot6d,
    rot6d_to_matrix,
    yaw_matrix,
    yaw_of_matrix,
)
from .skeleton import canonical_skeleton, skeleton_hash
from .synth import _obstacle_clearance, generate_scene, plan_path

WINDOW_LEN = 121
WINDOW_STRIDE = 30
# quality bar for emitted ground truth; the jerk bound is a sanity rail,
# not a style target: stepping at 30 fps has mean jerk in the tens of m/s^3
MAX_SKATE = 0.05
MAX_JERK = 250.0
PEN_TOL = 0.005


@dataclass
class Window:
    """A canonical 121-frame slice plus the world pose of its frame."""

    motion: MotionSequence
    origin: np.ndarray   # world xyz of the canonical origin (y = 0)
    yaw: float           # world heading of the canonical +z axis
    start: int = 0       # frame offset in the source motion


def _canonical_map(origin, yaw):
    """(yaw, translation) arguments of apply_rigid for world -> canonical."""
    t = -(yaw_matrix(-yaw) @ np.asarray(origin, dtype=np.float64))
    return -yaw, t


def window_sequences(motion, length=WINDOW_LEN, stride=WINDOW_STRIDE):
    """Overlapping canonicalized windows of exactly `length` frames.

    Motions shorter than one window are skipped with a warning.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = len(motion)
    if n < length:
        warnings.warn(f"motion of {n} frames is shorter than a {length}-frame window")
        return []
    out = []
    for start in range(0, n - length + 1, stride):
        frames = motion.frames[start : start + length]
        gamma0 = frames[0, 66:69]
        yaw0 = float(yaw_of_matrix(rot6d_to_matrix(frames[0, 69:75])))
        origin = np.array([gamma0[0], 0.0, gamma0[2]])
        canon = apply_rigid(frames, *_canonical_map(origin, yaw0))
        out.append(
            Window(
                MotionSequence(canon, motion.skeleton, fps=motion.fps, shape=motion.shape),
                origin=origin,
                yaw=yaw0,
                start=start,
            )
        )
    return out


def scene_for_window(scene, window):
    """The scene re-expressed in a window's canonical frame."""
    return transform_scene(scene, *_canonical_map(window.origin, window.yaw))


def inject_noise(motion, level, seed=0):
    """Perturb every interior frame; endpoints stay untouched.

    Rotations (root and per-joint) get a random-axis rotation with angle
    ~ N(0, (level degrees)^2); the root translation gets N(0, (level cm)^2)
    per axis. The stored joint positions are recomputed by FK so the
    feature stays self-consistent. level 0 returns a bit-identical copy.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError("noise level must lie in [0, 1]")
    frames = motion.frames.copy()
    n = len(motion)
    if level == 0.0 or n <= 2:
        return MotionSequence(frames, motion.skeleton, fps=motion.fps, shape=motion.shape)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4015E]))
    m = n - 2
    std_rad = np.deg2rad(level)
    pose, _ = pose_unpack(frames[1 : n - 1])

    gamma = pose.gamma + rng.normal(0.0, 0.01 * level, size=(m, 3))

    def tumble(r):
        shape = r.shape[:-2]
        axis = rng.standard_normal(shape + (3,))
        angle = rng.normal(0.0, std_rad, size=shape)
        return axis_angle_to_matrix(axis, angle) @ r

    phi = matrix_to_rot6d(tumble(rot6d_to_matrix(pose.phi)))
    psi = matrix_to_rot6d(tumble(rot6d_to_matrix(pose.psi)))

    noisy = PoseParams(gamma=gamma, phi=phi, psi=psi)
    joints = forward_kinematics(noisy, motion.skeleton)
    frames[1 : n - 1] = pose_pack(noisy, joints)
    return MotionSequence(frames, motion.skeleton, fps=motion.fps, shape=motion.shape)


def sample_keyframe_mask(n, strategy="count", seed=0, spacing=None, p=None):
    """Boolean keyframe mask of length n; endpoints are always set.

    uniform: indices {0, spacing, 2*spacing, ...} plus n-1.
    random:  interior frames independently with probability p.
    count:   k ~ U{2..n} keys, interior ones uniform without replacement.
    """
    if n < 2:
        raise ValueError("a mask needs at least 2 frames")
    mask = np.zeros(n, dtype=bool)
    mask[0] = mask[n - 1] = True
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x3A5F]))
    if strategy == "uniform":
        if spacing is None or int(spacing) != spacing or spacing < 1:
            raise ValueError(f"uniform masks need integer spacing >= 1, got {spacing}")
        mask[np.arange(0, n, int(spacing))] = True
    elif strategy == "random":
        if p is None or not 0.0 < p <= 1.0:
            raise ValueError(f"random masks need p in (0, 1], got {p}")
        mask[1 : n - 1] = rng.random(n - 2) < p
    elif strategy == "count":
        k = int(rng.integers(2, n + 1))
        if k > 2:
            mask[rng.choice(n - 2, size=k - 2, replace=False) + 1] = True
    else:
        raise ValueError(f"unknown keyframe strategy: {strategy!r}")
    return mask


def verify_motion(motion, scene, max_skate=MAX_SKATE, max_jerk=MAX_JERK, pen_tol=PEN_TOL):
    """Quality gate for emitted ground truth. Returns a report dict."""
    skate = foot_skating(motion)
    jrk = jerk(motion)
    frame_ratio, _, pen_max = collision_metrics(motion, scene, eps=pen_tol)
    return {
        "ok": bool(skate < max_skate and jrk < max_jerk and frame_ratio == 0.0),
        "foot_skating": skate,
        "jerk": jrk,
        "collision_frame_ratio": frame_ratio,
        "penetration_max": pen_max,
    }


# ---------------------------------------------------------------------------
# disk layout

def _write_meta(path, meta):
    lines = []
    for key, value in meta.items():
        if isinstance(value, np.ndarray):
            value = " ".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} {value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_meta(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            meta[key] = rest
    for key in ("fps", "n_frames"):
        if key in meta:
            meta[key] = int(meta[key])
    for key in ("yaw",):
        if key in meta:
            meta[key] = float(meta[key])
    for key in ("origin", "shape"):
        if key in meta:
            meta[key] = np.array([float(v) for v in meta[key].split()])
    return meta


def save_window(root, window_id, window, scene_id):
    folder = os.path.join(root, "motions", window_id)
    os.makedirs(folder, exist_ok=True)
    motion = window.motion
    _write_meta(
        os.path.join(folder, "meta"),
        {
            "id": window_id,
            "fps": motion.fps,
            "n_frames": len(motion),
            "skeleton": skeleton_hash(motion.skeleton),
            "shape": motion.shape,
            "scene": scene_id,
            "origin": window.origin,
            "yaw": float(window.yaw),
        },
    )
    with open(os.path.join(folder, "frames.f32"), "wb") as fh:
        fh.write(np.ascontiguousarray(motion.frames, dtype="<f4").tobytes())


def load_motion_dir(folder, skel=None):
    """(Window, scene_id) from one motion container folder; frames float64."""
    skel = skel or canonical_skeleton()
    meta = load_meta(os.path.join(folder, "meta"))
    if meta["skeleton"] != skeleton_hash(skel):
        raise SchemaError(f"{folder} was built for a different skeleton")
    with open(os.path.join(folder, "frames.f32"), "rb") as fh:
        raw = np.frombuffer(fh.read(), dtype="<f4")
    n = meta["n_frames"]
    if raw.size != n * FEATURE_DIM:
        raise SchemaError(
            f"frames.f32 holds {raw.size} floats, expected {n}x{FEATURE_DIM}"
        )
    frames = raw.reshape(n, FEATURE_DIM).astype(np.float64)
    motion = MotionSequence(frames, skel, fps=meta["fps"], shape=meta.get("shape"))
    window = Window(motion, origin=meta["origin"], yaw=meta["yaw"])
    return window, meta["scene"]


def load_window(root, window_id, skel=None):
    """(Window, scene_id) for a stored id; frames come back float64."""
    return load_motion_dir(os.path.join(root, "motions", window_id), skel)


def load_scene(root, scene_id):
    return load_obj(os.path.join(root, "scenes", f"{scene_id}.obj"))


def read_split(root, name):
    with open(os.path.join(root, f"{name}.txt")) as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# generation driver

def _sample_route(spec, rng, min_dist=3.0, clearance=0.4, tries=25):
    half = spec.floor_extent / 2.0 - 0.6
    for _ in range(tries):
        pts = rng.uniform(-half, half, size=(2, 2))
        if np.linalg.norm(pts[0] - pts[1]) < min_dist:
            continue
        if np.any(_obstacle_clearance(pts, spec) < clearance):
            continue
        try:
            return plan_path(spec, pts[0], pts[1])
        except InfeasibleSceneError:
            continue
    return None


def generate_dataset(
    root,
    seed=0,
    n_scenes=12,
    train_windows=2000,
    test_windows=200,
    test_scenes=2,
    stride=WINDOW_STRIDE,
    difficulty=(0.25, 0.85),
    fps=30,
):
    """Write a full dataset; deterministic and byte-identical per seed.

    Scenes split into train/test groups (test scenes are held out
    entirely). Every emitted window passed the quality gate; gate or
    planner failures are skipped and counted in the manifest.
    """
    os.makedirs(os.path.join(root, "scenes"), exist_ok=True)
    os.makedirs(os.path.join(root, "motions"), exist_ok=True)
    skel = canonical_skeleton()
    splits = {"train": [], "test": []}
    skipped = {"gate": 0, "route": 0, "short": 0}
    n_train_scenes = n_scenes - test_scenes
    counter = 0

    for si in range(n_scenes):
        spec, mesh = generate_scene(
            seed ^ si,
            difficulty=difficulty[0]
            + (difficulty[1] - difficulty[0]) * si / max(n_scenes - 1, 1),
        )
        scene_id = f"scene{si:04d}"
        save_obj(mesh, os.path.join(root, "scenes", f"{scene_id}.obj"))
        split = "test" if si >= n_train_scenes else "train"
        quota = (
            int(np.ceil(test_windows / max(test_scenes, 1)))
            if split == "test"
            else int(np.ceil(train_windows / max(n_train_scenes, 1)))
        )
        emitted = 0
        for attempt in range(quota * 4 + 8):
            if emitted >= quota:
                break
            item = si * 100003 + attempt
            mseed = seed ^ item
            rng = np.random.default_rng(np.random.SeedSequence([mseed, 0xDA7A]))
            if attempt == 0:
                try:
                    route = plan_path(spec, spec.start, spec.goal)
                except InfeasibleSceneError:
                    route = None
            else:
                route = _sample_route(spec, rng)
            if route is None:
                skipped["route"] += 1
                continue
            try:
                motion = synthesize_motion(route, skel, seed=mseed, params=GaitParams(speed=None), fps=fps)
            except InfeasibleSceneError:
                skipped["route"] += 1
                continue
            report = verify_motion(motion, mesh)
            if not report["ok"]:
                skipped["gate"] += 1
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                wins = window_sequences(motion, stride=stride)
            if not wins:
                skipped["short"] += 1
                continue
            for win in wins:
                if emitted >= quota:
                    break
                # the full-motion collision gate covers every window slice
                # exactly (ratio 0 on the whole run); skating and jerk are
                # means, so re-check them per window
                if not (foot_skating(win.motion) < MAX_SKATE and jerk(win.motion) < MAX_JERK):
                    skipped["gate"] += 1
                    continue
                wid = f"w{counter:06d}"
                save_window(root, wid, win, scene_id)
                splits[split].append(wid)
                counter += 1
                emitted += 1

    for name, ids in splits.items():
        with open(os.path.join(root, f"{name}.txt"), "w") as fh:
            fh.write("\n".join(ids) + ("\n" if ids else ""))
    _write_meta(
        os.path.join(root, "manifest.txt"),
        {
            "generator": f"motionfill-{__version__}",
            "seed": seed,
            "train": len(splits["train"]),
            "test": len(splits["test"]),
            "scenes": n_scenes,
            "skipped_route": skipped["route"],
            "skipped_gate": skipped["gate"],
            "skipped_short": skipped["short"],
        },
    )
    return splits