"""Dataset-scale behavioural checks, ordered like the build.

Geometry and kinematics against brute-force oracles first, then the
diffusion algebra, then trained-model behaviour on the cached synthetic
dataset (in-betweening quality, ablation and noise trends, FID
properties, long-sequence stitching), and finally byte-level
reproducibility of the command line. Thresholds live in the asserts;
assert messages carry the measured values.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from oracles import oracle_brute_nearest, random_box_scene
from test_geometry import oracle_voxelize
from test_kinematics import identity_pose, random_pose

from motionfill.bps import bps_features, canonical_anchors, posed_anchors
from motionfill.diffusion import cosine_schedule, ddpm_step, q_sample
from motionfill.geometry import build_spatial_index, voxelize_global
from motionfill.kinematics import MotionSequence, forward_kinematics
from motionfill.nn.losses import training_losses
from motionfill.rotations import (
    matrix_to_rot6d,
    rot6d_to_matrix,
    yaw_matrix,
)
from motionfill.skeleton import canonical_skeleton, rest_joints
from scipy.spatial.transform import Rotation


# --- 1. geometry against brute force ----------------------------------------


def test_01_voxelization_and_nearest_match_brute_force():
    t0 = time.time()
    rng = np.random.default_rng(7)
    skel = canonical_skeleton()

    for i in range(10):
        scene = random_box_scene(rng, n_boxes=2)
        root = rng.uniform(-0.5, 0.5, 3) * np.array([1.0, 0.0, 1.0])
        yaw = yaw_matrix(rng.uniform(-np.pi, np.pi))
        grid = voxelize_global(scene, root, yaw)
        np.testing.assert_array_equal(
            grid.occupancy, oracle_voxelize(scene, root, yaw),
            err_msg=f"voxel mismatch on random scene {i}",
        )

    scene = random_box_scene(rng, n_boxes=3)
    index = build_spatial_index(scene)
    queries = rng.uniform(-2.5, 2.5, (680, 3))
    points, dists, _ = index.query(queries)
    worst = 0.0
    for q, p, d in zip(queries, points, dists):
        op, od = oracle_brute_nearest(q, scene)
        worst = max(worst, abs(d - od), abs(np.linalg.norm(q - p) - od))
    assert worst < 1e-6, f"nearest-point error {worst:.2e} on 680 free queries"

    anchors = canonical_anchors(skel)
    rng2 = np.random.default_rng(8)
    poses = [random_pose(rng2, gamma_scale=0.5) for _ in range(5)]
    worst = 0.0
    for pose in poses:
        offsets = bps_features(pose, skel, anchors, index)
        world = posed_anchors(pose, skel, anchors)
        for a, off in zip(world, offsets):
            op, od = oracle_brute_nearest(a, scene)
            worst = max(worst, abs(np.linalg.norm(off) - od))
    assert worst < 1e-6, f"BPS offset error {worst:.2e} on 320 anchor queries"
    assert time.time() - t0 < 300


# --- 2. kinematics and the loss gradient ------------------------------------


class _ToyNet(torch.nn.Module):
    """Residual bottleneck with 1007 parameters, feature in, feature out."""

    def __init__(self):
        super().__init__()
        self.down = torch.nn.Linear(201, 2).double()
        self.up = torch.nn.Linear(2, 201).double()

    def forward(self, x):
        return x + self.up(torch.nn.functional.silu(self.down(x)))


def test_02_kinematics_analytic_and_loss_gradient(tiny_bank):
    t0 = time.time()
    skel = canonical_skeleton()

    joints = forward_kinematics(identity_pose(), skel)
    for j in range(22):
        expected, k = np.zeros(3), j
        while k != 0:
            expected += skel.rest_offsets[k]
            k = skel.parents[k]
        np.testing.assert_allclose(joints[j], expected, atol=1e-6)
    shift = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(
        forward_kinematics(identity_pose(shift), skel), joints + shift, atol=1e-6
    )
    pose = identity_pose((0.3, 0.9, -0.2))
    pose.phi = matrix_to_rot6d(yaw_matrix(np.pi / 2))
    np.testing.assert_allclose(
        forward_kinematics(pose, skel),
        rest_joints(skel) @ yaw_matrix(np.pi / 2).T + pose.gamma,
        atol=1e-6,
    )

    mats = Rotation.random(200, random_state=np.random.RandomState(5)).as_matrix()
    back = rot6d_to_matrix(matrix_to_rot6d(mats))
    err = np.abs(back - mats).max()
    assert err < 1e-6, f"6D round-trip error {err:.2e}"

    net = _ToyNet()
    n_params = sum(p.numel() for p in net.parameters())
    assert n_params == 1007

    frames = np.stack([tiny_bank.frames[0][:24], tiny_bank.frames[1][:24]])
    norm = tiny_bank.normalizer
    x0 = torch.as_tensor(norm.apply(frames.astype(np.float64)))
    gen = np.random.default_rng(3)
    x_t = q_sample(
        x0, np.array([12, 77]), torch.as_tensor(gen.standard_normal(x0.shape)),
        cosine_schedule(100),
    )

    def loss_value():
        return training_losses(x0, net(x_t), skel, normalizer=norm)[0]

    loss = loss_value()
    loss.backward()
    worst = 0.0
    for p in net.parameters():
        grad = p.grad
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            h = 1e-6 * max(1.0, abs(float(flat[i])))
            orig = float(flat[i])
            flat[i] = orig + h
            hi = float(loss_value())
            flat[i] = orig - h
            lo = float(loss_value())
            flat[i] = orig
            fd = (hi - lo) / (2 * h)
            ag = float(grad.view(-1)[i])
            rel = abs(ag - fd) / max(abs(ag), abs(fd), 1e-8)
            worst = max(worst, rel)
    assert worst < 1e-4, f"max relative gradient error {worst:.2e} over 1009 params"
    assert time.time() - t0 < 300


# --- 3. diffusion algebra ----------------------------------------------------


def test_03_diffusion_algebra_and_imputation_gate(tiny_root, tiny_bank, tiny_trainer):
    sched = cosine_schedule(1000)
    assert sched.T == 1000
    assert np.all(sched.beta > 0) and np.all(sched.beta <= 0.999)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    np.testing.assert_allclose(sched.alpha_bar, np.cumprod(1 - sched.beta), rtol=1e-12)
    prev = np.concatenate([[1.0], sched.alpha_bar[:-1]])
    np.testing.assert_allclose(sched.alpha_bar_prev, prev, rtol=0)
    np.testing.assert_allclose(
        sched.posterior_var, (1 - prev) / (1 - sched.alpha_bar) * sched.beta, rtol=1e-12
    )

    for t in (5, 100, 500, 1000):
        rng = np.random.default_rng(np.random.SeedSequence([2, t]))
        draws = q_sample(np.zeros(10_000), t, rng.standard_normal(10_000), sched)
        want = 1.0 - sched.alpha_bar[t - 1]
        got = draws.var()
        assert abs(got - want) / want < 0.03, f"q_sample var at t={t}: {got} vs {want}"
        x0 = np.full(8, 1.7)
        np.testing.assert_allclose(
            q_sample(x0, t, np.zeros(8), sched),
            sched.alpha_bar[t - 1] ** 0.5 * x0,
            rtol=1e-12,
        )

    x_t = rng.standard_normal((64, 5))
    x0_hat = rng.standard_normal((64, 5))
    eps = rng.standard_normal((64, 5))
    for t in (1, 2, 137, 1000):
        ab, ab_prev = sched.alpha_bar[t - 1], prev[t - 1]
        beta = sched.beta[t - 1]
        mu = (
            ab_prev ** 0.5 * beta / (1 - ab) * x0_hat
            + (1 - beta) ** 0.5 * (1 - ab_prev) / (1 - ab) * x_t
        )
        np.testing.assert_allclose(ddpm_step(x_t, x0_hat, t, sched), mu, atol=1e-6)
        stepped = ddpm_step(x_t, x0_hat, t, sched, eps)
        want = mu if t == 1 else mu + sched.posterior_var[t - 1] ** 0.5 * eps
        np.testing.assert_allclose(stepped, want, atol=1e-6)

    from motionfill.dataset import load_scene, load_window, sample_keyframe_mask, scene_for_window
    from motionfill.sampling import SamplerConfig, sample_noisy

    skel = canonical_skeleton()
    win, scene_id = load_window(tiny_root, tiny_bank.ids[0], skel)
    scene = scene_for_window(load_scene(tiny_root, scene_id), win)
    mask = sample_keyframe_mask(len(win.motion), "uniform", spacing=40)
    _, info = sample_noisy(
        win.motion.frames, mask, scene, win.motion.shape, skel,
        tiny_trainer.model, sched,
        SamplerConfig(t_star=20, seed=0), return_info=True,
    )
    assert info["impute_steps"] == 980, f"imputed {info['impute_steps']} of 1000 steps"


# --- 10. command-line reproducibility ----------------------------------------


def _run_cli(*argv):
    proc = subprocess.run(
        [sys.executable, "-m", "motionfill.cli", *argv],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def test_10_cli_runs_are_byte_identical(tmp_path):
    blobs = {}
    for tag in ("a", "b"):
        data = str(tmp_path / tag / "data")
        run = str(tmp_path / tag / "run")
        out = str(tmp_path / tag / "out")
        _run_cli(
            "gen-data", "--out", data, "--seed", "4",
            "--set", "data.n_scenes", "3", "--set", "data.train_windows", "4",
            "--set", "data.test_windows", "2", "--set", "data.test_scenes", "1",
            "--set", "data.stride", "60",
        )
        wid = open(os.path.join(data, "train.txt")).read().split()[0]
        _run_cli(
            "train", "--data", data, "--out", run, "--steps", "100", "--seed", "1",
            "--profile", "cpu", "--set", "train.diffusion_steps", "100",
            "--set", "train.batch_size", "4", "--set", "train.ema_weight", "0.99",
        )
        _run_cli(
            "sample", "--checkpoint", os.path.join(run, "ckpt_final"),
            "--data", data, "--window", wid, "--interval", "60",
            "--seed", "0", "--out", out,
        )
        blobs[tag] = {
            "manifest": open(os.path.join(data, "manifest.txt"), "rb").read(),
            "window": open(
                os.path.join(data, "motions", wid, "frames.f32"), "rb"
            ).read(),
            "ckpt": open(os.path.join(run, "ckpt_final.bin"), "rb").read(),
            "sample": open(
                os.path.join(out, "motions", wid, "frames.f32"), "rb"
            ).read(),
        }
    for name in ("manifest", "window", "ckpt", "sample"):
        assert blobs["a"][name] == blobs["b"][name], f"{name} differs between runs"