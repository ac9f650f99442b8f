"""Procedural walking along a planned route.

The generator pins footholds to world positions sampled along the
route, swings legs between them with zero-velocity, zero-acceleration
touchdowns, and solves hip/knee/ankle rotations by two-bone IK. Feet
never translate during stance, so foot skating is zero up to float
noise, and the pelvis height is chosen so the legs always reach their
targets without clamping.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSceneError
from .kinematics import MotionSequence, PoseParams, fk_transforms, pose_pack
from .rotations import IDENTITY_6D, axis_angle_to_matrix, matrix_to_rot6d, yaw_matrix
from .skeleton import extract_body_shape

L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE, L_FOOT, R_FOOT = 1, 2, 4, 5, 7, 8, 10, 11

DUTY = 0.6               # stance fraction of a half-cycle-offset gait
SWING_DWELL = 0.12       # swing fraction at each end with no horizontal travel
STANCE_LATERAL = 0.10    # foothold offset from path centerline, m
REACH_SLACK = 0.025      # kept between leg length and worst-case target, m
MAX_TURN = 2.0           # rad of heading change per 0.6 m arc before giving up


@dataclass
class GaitParams:
    speed: float = 1.1          # m/s along the route
    step_lift: float = 0.07     # swing apex above stance height, m
    bob_amp: float = 0.012      # pelvis vertical oscillation, m
    sway_amp: float = 0.015     # pelvis lateral oscillation, m
    arm_swing: float = 0.25     # rad
    arm_hang: float = 1.466     # rad below horizontal (84 deg), keeps elbows in
    elbow_bend: float = 0.17    # rad


def _hann_smooth(x, half):
    """Hann-weighted moving average along axis 0 with edge replication."""
    if half < 1:
        return np.asarray(x, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    k = np.hanning(2 * half + 3)[1:-1]
    k = k / k.sum()
    pad = [(half + 0, half)] + [(0, 0)] * (x.ndim - 1)
    xp = np.pad(x, pad, mode="edge")
    out = np.empty_like(x)
    flat = xp.reshape(xp.shape[0], -1)
    res = np.stack([np.convolve(flat[:, c], k, mode="valid") for c in range(flat.shape[1])], axis=1)
    return res.reshape(x.shape)


def _resample_route(waypoints, step=0.02, smooth_half_m=0.30):
    """Dense arc-length table (s, xz, heading) for a waypoint polyline."""
    wp = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = max(int(np.ceil(total / step)) + 1, 2)
    s = np.linspace(0.0, total, n)
    raw = np.stack([np.interp(s, cum, wp[:, i]) for i in range(2)], axis=1)
    dense = _hann_smooth(raw, int(round(smooth_half_m / step)))
    # corner rounding must not move the endpoints: fade the smoothing in
    # over the first/last smoothing window
    ramp = _smoothstep(np.minimum(s, total - s) / max(smooth_half_m, step))
    dense = raw + ramp[:, None] * (dense - raw)
    # re-measure arc length after corner rounding
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    tan = np.gradient(dense, axis=0)
    heading = np.unwrap(np.arctan2(tan[:, 0], tan[:, 1]))
    heading = _hann_smooth(heading, int(round(smooth_half_m / step)))
    return s, dense, heading


def _check_turns(s, heading, window=0.6, limit=MAX_TURN):
    if s[-1] <= window:
        return
    ahead = np.interp(s + window, s, heading)
    if np.max(np.abs(ahead - heading)) > limit:
        raise InfeasibleSceneError("route turns too sharply for the gait")


def _frame_from(direction, hinge):
    """Rotation whose local -y maps to `direction` and +x to `hinge`."""
    x = hinge
    y = -direction
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def _leg_ik(p_hip, p_ankle, fwd, a, b):
    """Global thigh and shin frames reaching p_ankle with the knee toward fwd."""
    delta = p_ankle - p_hip
    d = float(np.linalg.norm(delta))
    d = float(np.clip(d, abs(a - b) + 1e-4, a + b - 1e-4))
    u = delta / np.linalg.norm(delta)
    w = fwd - np.dot(fwd, u) * u
    wn = np.linalg.norm(w)
    if wn < 1e-8:
        w = np.cross(u, np.array([0.0, 1.0, 0.0]))
        wn = np.linalg.norm(w)
    w = w / wn
    beta = np.arccos((a * a + d * d - b * b) / (2.0 * a * d))
    knee = p_hip + a * (np.cos(beta) * u + np.sin(beta) * w)
    hinge = np.cross(w, u)
    hinge = hinge / np.linalg.norm(hinge)
    thigh = _frame_from((knee - p_hip) / np.linalg.norm(knee - p_hip), hinge)
    shin = _frame_from((p_ankle - knee) / np.linalg.norm(p_ankle - knee), hinge)
    return thigh, shin


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


class _FootPlan:
    """Pinned footholds and the swing interpolation between them.

    Footholds for phase offset delta sit at arc (k - delta + 0.3) * stride
    with a fixed lateral offset; index k is in stance while the gait phase
    u = t/T_c + delta is in [k, k + DUTY) and swings to k+1 afterwards.
    """

    def __init__(self, s, xz, heading, delta, lateral, step_len):
        self.delta = delta
        self.stride = 2.0 * step_len
        self.s_table, self.xz_table, self.heading_table = s, xz, heading
        self.total = s[-1]
        self.lateral = lateral

    def _foothold(self, k):
        arc = np.clip((k - self.delta + 0.3) * self.stride, 0.0, self.total)
        x = np.interp(arc, self.s_table, self.xz_table[:, 0])
        z = np.interp(arc, self.s_table, self.xz_table[:, 1])
        yaw = np.interp(arc, self.s_table, self.heading_table)
        left = np.array([np.cos(yaw), -np.sin(yaw)])
        pos = np.array([x, z]) + self.lateral * left
        return pos, float(yaw)

    def at(self, phase, lift, floor_h):
        """(ankle xyz, foot yaw) at absolute gait phase t/T_c."""
        p = phase + self.delta
        k = int(np.floor(p))
        u = p - k
        pos0, yaw0 = self._foothold(k)
        if u < DUTY:
            return np.array([pos0[0], floor_h, pos0[1]]), yaw0
        tau = (u - DUTY) / (1.0 - DUTY)
        pos1, yaw1 = self._foothold(k + 1)
        # horizontal travel waits until the foot is well off the floor
        sw = _smoothstep((tau - SWING_DWELL) / (1.0 - 2.0 * SWING_DWELL))
        pos = pos0 + sw * (pos1 - pos0)
        yaw = yaw0 + sw * (yaw1 - yaw0)
        height = floor_h + lift * np.sin(np.pi * tau) ** 3
        return np.array([pos[0], height, pos[1]]), float(yaw)


def _leg_dimensions(skel):
    a = float(abs(skel.rest_offsets[L_KNEE][1]))
    b = float(abs(skel.rest_offsets[L_ANKLE][1]))
    foot_r = next(c.radius for c in skel.capsules if c.a == L_ANKLE and c.b == L_FOOT)
    toe_off = skel.rest_offsets[L_FOOT]
    pitch = -np.arctan2(-toe_off[1], toe_off[2])  # rotates the toe bone level
    return a, b, foot_r, pitch


def _standing_motion(skel, origin, heading, n_frames, fps, params):
    a, b, foot_r, pitch = _leg_dimensions(skel)
    hip_drop = float(-skel.rest_offsets[L_HIP][1])
    pelvis_h = foot_r + hip_drop + np.sqrt((a + b - REACH_SLACK) ** 2 - 0.05**2) - 0.02
    r_root = yaw_matrix(heading)
    left = r_root @ np.array([1.0, 0.0, 0.0])
    gamma = np.array([origin[0], pelvis_h, origin[1]])
    flat = yaw_matrix(heading) @ axis_angle_to_matrix(np.array([1.0, 0.0, 0.0]), pitch)
    psi = np.tile(IDENTITY_6D, (21, 1)).astype(np.float64)
    for side, hip_j, knee_j, ankle_j in ((1.0, L_HIP, L_KNEE, L_ANKLE), (-1.0, R_HIP, R_KNEE, R_ANKLE)):
        p_hip = gamma + r_root @ skel.rest_offsets[hip_j]
        ankle = gamma + side * STANCE_LATERAL * left
        ankle = np.array([ankle[0], foot_r, ankle[2]])
        thigh, shin = _leg_ik(p_hip, ankle, r_root @ np.array([0, 0, 1.0]), a, b)
        psi[hip_j - 1] = matrix_to_rot6d(r_root.T @ thigh)
        psi[knee_j - 1] = matrix_to_rot6d(thigh.T @ shin)
        psi[ankle_j - 1] = matrix_to_rot6d(shin.T @ flat)
    _hang_arms(psi[None], np.zeros(1), params)
    pose = PoseParams(
        gamma=np.tile(gamma, (n_frames, 1)),
        phi=np.tile(matrix_to_rot6d(r_root), (n_frames, 1)),
        psi=np.tile(psi, (n_frames, 1, 1)),
    )
    joints = fk_transforms(pose, skel)[0]
    return MotionSequence(pose_pack(pose, joints), skel, fps=fps, shape=extract_body_shape(skel))


def _hang_arms(psi, phase, params):
    """Write shoulder/elbow rows (in place) for hanging, swinging arms."""
    x_axis = np.array([1.0, 0.0, 0.0])
    z_axis = np.array([0.0, 0.0, 1.0])
    for i in range(psi.shape[0]):
        sw = params.arm_swing * np.cos(2.0 * np.pi * phase[i])
        for sign, sh_row, el_row in ((1.0, 15, 17), (-1.0, 16, 18)):
            hang = axis_angle_to_matrix(z_axis, -sign * params.arm_hang)
            swing = axis_angle_to_matrix(x_axis, sign * sw)
            psi[i, sh_row] = matrix_to_rot6d(swing @ hang)
            psi[i, el_row] = matrix_to_rot6d(axis_angle_to_matrix(z_axis, -sign * params.elbow_bend))


def synthesize_motion(waypoints, skel, seed=0, params=None, fps=30, idle_frames=121):
    """Walk a character along 2D waypoints; returns a MotionSequence.

    Routes shorter than 0.25 m produce a standing idle of idle_frames.
    params.speed may be None to draw one uniformly from [0.8, 1.4] m/s.
    """
    if params is None:
        params = GaitParams()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6A17]))
    speed = params.speed
    if speed is None:
        speed = float(rng.uniform(0.8, 1.4))
    if not 0.1 <= speed <= 2.5:
        raise ValueError(f"walking speed {speed} out of range")

    wp = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    length = float(np.sum(np.linalg.norm(np.diff(wp, axis=0), axis=1))) if len(wp) > 1 else 0.0
    a, b, foot_r, pitch = _leg_dimensions(skel)
    if length < 0.25:
        head = 0.0
        if len(wp) > 1 and length > 1e-9:
            d = wp[-1] - wp[0]
            head = float(np.arctan2(d[0], d[1]))
        return _standing_motion(skel, wp[0], head, idle_frames, fps, params)

    s_tab, xz_tab, head_tab = _resample_route(wp)
    total = s_tab[-1]
    _check_turns(s_tab, head_tab)

    step_len = 0.35 + 0.25 * speed
    cycle = 2.0 * step_len / speed
    hip_drop = float(-skel.rest_offsets[L_HIP][1])
    reach = a + b - REACH_SLACK
    base_h = foot_r + hip_drop + np.sqrt(reach**2 - (DUTY * step_len) ** 2)

    n = max(int(round(total / speed * fps)) + 1, 2)
    t = np.arange(n) / fps
    s_root = np.clip(speed * t, 0.0, total)
    root_xz = np.stack([np.interp(s_root, s_tab, xz_tab[:, i]) for i in range(2)], axis=1)
    heading = np.interp(s_root, s_tab, head_tab)
    root_xz = _hann_smooth(root_xz, 4)
    heading = _hann_smooth(heading, 4)

    phase = t / cycle
    bob = params.bob_amp * np.cos(4.0 * np.pi * phase + 0.8 * np.pi)
    sway = params.sway_amp * np.cos(2.0 * np.pi * (phase - 0.3))
    left_dir = np.stack([np.cos(heading), -np.sin(heading)], axis=1)

    gamma = np.empty((n, 3))
    gamma[:, 0] = root_xz[:, 0] + sway * left_dir[:, 0]
    gamma[:, 1] = base_h + bob
    gamma[:, 2] = root_xz[:, 1] + sway * left_dir[:, 1]

    feet = {
        "L": _FootPlan(s_tab, xz_tab, head_tab, 0.0, +STANCE_LATERAL, step_len),
        "R": _FootPlan(s_tab, xz_tab, head_tab, 0.5, -STANCE_LATERAL, step_len),
    }
    x_axis = np.array([1.0, 0.0, 0.0])

    phi = np.empty((n, 6))
    psi = np.tile(IDENTITY_6D, (n, 21, 1)).astype(np.float64)
    _hang_arms(psi, phase, params)
    for i in range(n):
        r_root = yaw_matrix(heading[i])
        phi[i] = matrix_to_rot6d(r_root)
        fwd = r_root @ np.array([0.0, 0.0, 1.0])
        for key, hip_j, knee_j, ankle_j in (("L", L_HIP, L_KNEE, L_ANKLE), ("R", R_HIP, R_KNEE, R_ANKLE)):
            ankle, foot_yaw = feet[key].at(phase[i], params.step_lift, foot_r)
            p_hip = gamma[i] + r_root @ skel.rest_offsets[hip_j]
            thigh, shin = _leg_ik(p_hip, ankle, fwd, a, b)
            flat = yaw_matrix(foot_yaw) @ axis_angle_to_matrix(x_axis, pitch)
            psi[i, hip_j - 1] = matrix_to_rot6d(r_root.T @ thigh)
            psi[i, knee_j - 1] = matrix_to_rot6d(thigh.T @ shin)
            psi[i, ankle_j - 1] = matrix_to_rot6d(shin.T @ flat)

    pose = PoseParams(gamma=gamma, phi=phi, psi=psi)
    joints = fk_transforms(pose, skel)[0]
    return MotionSequence(pose_pack(pose, joints), skel, fps=fps, shape=extract_body_shape(skel))