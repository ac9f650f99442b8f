"""Ancestral DDPM sampling with keyframe imputation and guidance.

Windows are sampled in the canonical frame the model was trained on:
inputs are re-anchored so the first keyframe's root sits at the origin
facing +z, and results are mapped back afterwards. Keyframes condition
the chain by imputation (masked rows of x_t replaced by the reference)
at every step t > T*; T* = 0 imputes throughout (clean keyframes),
T* = 20 leaves the final steps free so noisy keyframes get denoised.
Classifier-free guidance blends scene-conditioned and null-conditioned
predictions. Long sequences are stitched autoregressively: each window
re-uses the previous window's tail as forced keyframes and overlapping
frames are taken from the earlier window.
"""

from dataclasses import dataclass, replace

import numpy as np
import torch

from .bps import bps_features, canonical_anchors
from .dataset import WINDOW_LEN
from .diffusion import ddpm_step, impute_keyframes, q_sample
from .errors import EmptySceneError, SchemaError
from .geometry import build_spatial_index, transform_scene, voxelize_global
from .kinematics import (
    FEATURE_DIM,
    MotionSequence,
    PoseParams,
    apply_rigid,
    forward_kinematics,
    pose_pack,
    pose_unpack,
)
from .rotations import (
    matrix_to_rot6d,
    rot6d_to_matrix,
    rot6d_to_matrix_safe,
    yaw_matrix,
    yaw_of_matrix,
)

_NOISE_SALT = 0xD1FF


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the reverse process.

    t_star gates imputation (0: every step; 20: the last 20 steps run
    free). hard_set_final overwrites keyframe rows of the output with
    the reference bit-exactly; scale_reference imputes sqrt(alpha_bar_t)
    scaled keyframes instead of the raw reference. scene_conditioning
    False feeds the null grid code and zero local offsets, matching a
    model trained with the scene channels ablated.
    """

    guidance_weight: float = 2.5
    t_star: int = 0
    hard_set_final: bool = True
    seed: int = 0
    scale_reference: bool = False
    scene_conditioning: bool = True


def guided_prediction(cond, uncond, w):
    """Classifier-free guidance: w * cond + (1 - w) * uncond."""
    return w * cond + (1.0 - w) * uncond


def _validate(s, m, scene, cfg, schedule):
    s = np.asarray(s, dtype=np.float64)
    m = np.asarray(m).astype(bool)
    if s.ndim != 2 or s.shape[1] != FEATURE_DIM:
        raise SchemaError(f"keyframes must be N x {FEATURE_DIM}, got {s.shape}")
    if m.shape != (s.shape[0],):
        raise SchemaError(f"mask shape {m.shape} does not match {s.shape[0]} frames")
    if not m[0]:
        raise SchemaError("frame 0 must be a keyframe (anchors the scene grid)")
    if len(scene.triangles) == 0:
        raise EmptySceneError("cannot sample against an empty scene")
    if not 0 <= cfg.t_star <= schedule.T:
        raise ValueError(f"t_star {cfg.t_star} outside [0, {schedule.T}]")
    if cfg.guidance_weight < 0:
        raise ValueError("guidance weight must be non-negative")
    return s, m


def _canonical_inputs(s, m, scene):
    """Re-anchor keyframes and scene to the first keyframe's root."""
    gamma0 = s[0, 66:69]
    yaw0 = float(yaw_of_matrix(rot6d_to_matrix(s[0, 69:75])))
    origin = np.array([gamma0[0], 0.0, gamma0[2]])
    yaw, t = -yaw0, -(yaw_matrix(-yaw0) @ origin)
    s_canon = np.zeros_like(s)
    s_canon[m] = apply_rigid(s[m], yaw, t)
    return s_canon, transform_scene(scene, yaw, t), (yaw0, origin)


def _conditioning(s_canon, m, scene_canon, skel, anchors):
    """(grid occupancy, local BPS track (N, 192)) in the canonical frame."""
    index = build_spatial_index(scene_canon)
    pose0, _ = pose_unpack(s_canon[0])
    yaw = yaw_of_matrix(rot6d_to_matrix(pose0.phi))
    grid = voxelize_global(scene_canon, pose0.gamma, yaw_matrix(yaw))

    local = np.zeros((len(s_canon), 3 * len(anchors.points)), dtype=np.float32)
    rows = np.flatnonzero(m)
    poses, _ = pose_unpack(s_canon[rows])
    offsets = bps_features(poses, skel, anchors, index)
    local[rows] = offsets.reshape(len(rows), -1)
    return grid.occupancy, local


def _reverse_loop(model, schedule, cfg, s_n, masks, local, shapes, c_g, null, rng):
    """Run the full reverse chain; returns (x0 normalized, imputed-step count)."""
    b, n = masks.shape
    x = torch.as_tensor(rng.standard_normal((b, n, FEATURE_DIM)), dtype=torch.float32)
    imputed = 0
    for t in range(schedule.T, 0, -1):
        if t > cfg.t_star:
            ref = s_n
            if cfg.scale_reference:
                ref = float(schedule.alpha_bar[t - 1]) ** 0.5 * s_n
            x = impute_keyframes(x, ref, masks)
            imputed += 1
        tv = torch.full((b,), t, dtype=torch.long)
        with torch.no_grad():
            cond = model(x, local, masks, tv, shapes, c_g)
            uncond = model(x, local, masks, tv, shapes, null)
        x0_hat = guided_prediction(cond, uncond, cfg.guidance_weight)
        noise = None
        if t > 1:
            noise = torch.as_tensor(rng.standard_normal(x.shape), dtype=torch.float32)
        x = ddpm_step(x, x0_hat, t, schedule, noise)
    return x, imputed


def _finalize(features, skel, fallback_counter):
    """Re-orthonormalize rotation blocks and restore FK-consistent joints."""
    n = features.shape[0]
    phi = matrix_to_rot6d(rot6d_to_matrix_safe(features[:, 69:75], fallback_counter))
    psi = matrix_to_rot6d(
        rot6d_to_matrix_safe(features[:, 75:].reshape(n, 21, 6), fallback_counter)
    )
    pose = PoseParams(gamma=features[:, 66:69], phi=phi, psi=psi)
    return pose_pack(pose, forward_kinematics(pose, skel))


def sample_windows(items, b, skel, model, schedule, cfg=None, return_info=False, stream=0):
    """Sample a batch of keyframe problems in one reverse chain.

    items: list of (s, m, scene) with equal frame counts; b: shared body
    shape (7,). Batch composition feeds one RNG stream, so reruns of the
    same list reproduce bit-identically; stream separates noise draws of
    repeated calls under one seed (autoregressive windows).
    """
    cfg = cfg or SamplerConfig()
    model = model.eval()
    anchors = canonical_anchors(skel)
    norm = model.normalizer

    parsed = [_validate(s, m, scene, cfg, schedule) for s, m, scene in items]
    n = parsed[0][0].shape[0]
    if any(s.shape[0] != n for s, _ in parsed):
        raise SchemaError("all windows in a batch must have the same length")

    s_list, maps, s_n, masks, locals_, grids = [], [], [], [], [], []
    for (s, m), (_, _, scene) in zip(parsed, items):
        s_canon, scene_canon, back = _canonical_inputs(s, m, scene)
        if cfg.scene_conditioning:
            grid, local = _conditioning(s_canon, m, scene_canon, skel, anchors)
        else:
            grid = None
            local = np.zeros((len(s_canon), 3 * len(anchors.points)), dtype=np.float32)
        s_list.append((s, m))
        maps.append(back)
        s_n.append(norm.apply(s_canon) * m[:, None])
        masks.append(m)
        locals_.append(local)
        grids.append(grid)

    to32 = lambda a: torch.as_tensor(np.asarray(a), dtype=torch.float32)
    masks_t = to32(np.stack(masks))
    shapes = to32(np.tile(np.asarray(b, dtype=np.float32), (len(items), 1)))
    with torch.no_grad():
        null = model.grid_encoder.null_embedding(len(items))
        if cfg.scene_conditioning:
            c_g = model.grid_encoder(to32(np.stack(grids)))
        else:
            c_g = null

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, stream, _NOISE_SALT]))
    x0n, imputed = _reverse_loop(
        model, schedule, cfg, to32(np.stack(s_n)), masks_t,
        to32(np.stack(locals_)), shapes, c_g, null, rng,
    )

    results, fallbacks = [], [0]
    for i, ((s, m), (yaw0, origin)) in enumerate(zip(s_list, maps)):
        feats = norm.invert(x0n[i].numpy().astype(np.float64))
        feats = _finalize(feats, skel, fallbacks)
        feats = apply_rigid(feats, yaw0, origin)
        if cfg.hard_set_final:
            feats[m] = s[m]
        results.append(MotionSequence(feats, skel, fps=30, shape=np.asarray(b)))
    if return_info:
        info = {
            "impute_steps": imputed,
            "guidance_weight": cfg.guidance_weight,
            "t_star": cfg.t_star,
            "rotation_fallbacks": fallbacks[0],
        }
        return results, info
    return results


def sample_inbetween(s, m, scene, b, skel, model, schedule, cfg=None, return_info=False,
                     stream=0):
    """In-between a single keyframe window; see sample_windows."""
    out = sample_windows([(s, m, scene)], b, skel, model, schedule, cfg, return_info, stream)
    if return_info:
        return out[0][0], out[1]
    return out[0]


def sample_noisy(s_noisy, m, scene, b, skel, model, schedule, cfg=None, return_info=False):
    """Two-range sampling for noisy keyframes: impute only while t > T*.

    Defaults to T* = 20 and no hard-set, so the keyframe rows of the
    output are the denoised poses rather than copies of the noisy input.
    """
    cfg = cfg or SamplerConfig(t_star=20, hard_set_final=False)
    cfg = replace(cfg, hard_set_final=False)
    return sample_inbetween(s_noisy, m, scene, b, skel, model, schedule, cfg, return_info)


def autoregressive_sample(
    s, m, scene, b, skel, model, schedule, cfg=None, overlap=60, window_len=WINDOW_LEN
):
    """Stitch windows into an M-frame sequence (M >= window_len).

    Window starts advance by window_len - overlap (the last start is
    clamped to M - window_len). Every frame a later window shares with
    an earlier one is forced as a keyframe there and the earlier
    window's frames win in the output, so seams are continuous by
    construction.
    """
    cfg = cfg or SamplerConfig()
    s = np.asarray(s, dtype=np.float64)
    m = np.asarray(m).astype(bool)
    if len(s) < window_len:
        raise ValueError(f"need at least {window_len} frames, got {len(s)}")
    if not 0 < overlap < window_len:
        raise ValueError(f"overlap {overlap} outside (0, {window_len})")
    total = len(s)
    if total == window_len:
        return sample_inbetween(s, m, scene, b, skel, model, schedule, cfg)

    starts = [0]
    while starts[-1] + window_len < total:
        starts.append(min(starts[-1] + window_len - overlap, total - window_len))

    out = np.zeros((total, FEATURE_DIM))
    first = sample_inbetween(
        s[:window_len], m[:window_len], scene, b, skel, model, schedule, cfg
    )
    out[:window_len] = first.frames
    done = window_len
    for wi, st in enumerate(starts[1:], start=1):
        known = done - st
        w_s = s[st : st + window_len].copy()
        w_m = m[st : st + window_len].copy()
        w_s[:known] = out[st:done]
        w_m[:known] = True
        win = sample_inbetween(
            w_s, w_m, scene, b, skel, model, schedule, cfg, stream=wi
        )
        out[done : st + window_len] = win.frames[known:]
        done = st + window_len
    return MotionSequence(out, skel, fps=30, shape=np.asarray(b))
