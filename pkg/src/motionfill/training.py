"""Denoiser training: conditioning caches, the step loop, EMA, checkpoints.

All per-step randomness (batch indices, diffusion steps, masks, noise,
guidance dropout) is drawn from numpy generators seeded by
(seed, step index), so training is bit-reproducible and a resumed run
continues the exact RNG stream of an uninterrupted one. Checkpoints are
a raw little-endian tensor blob plus a text sidecar listing tensor
layout, the full training config, and provenance.
"""

import os
from dataclasses import dataclass, replace

import numpy as np
import torch

from .bps import bps_features, canonical_anchors
from .config import apply_config, flatten_config, format_value
from .dataset import (
    WINDOW_LEN,
    inject_noise,
    load_scene,
    load_window,
    read_split,
    sample_keyframe_mask,
    scene_for_window,
)
from .diffusion import cosine_schedule, fit_normalizer, impute_keyframes, q_sample
from .errors import NumericError, SchemaError
from .geometry import GRID_DIMS, build_spatial_index, voxelize_global
from .kinematics import FEATURE_DIM, MotionSequence, pose_unpack
from .nn.losses import training_losses
from .nn.model import MotionModel
from .rotations import rot6d_to_matrix, yaw_matrix, yaw_of_matrix
from .skeleton import canonical_skeleton, skeleton_hash

_BATCH_SALT = 0xB47C
_MASK_SALT = 0x3A5F
_NOISE_SALT = 0x4015

_DTYPE_CODES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}


@dataclass(frozen=True)
class TrainConfig:
    """Run settings; the first block mirrors the published table names."""

    batch_size: int = 64
    learning_rate: float = 1e-4
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    channels_dim: int = 128
    channel_multipliers: tuple = (2, 2, 2, 2)
    variance_scheduler: str = "cosine"
    diffusion_steps: int = 1000
    ema_weight: float = 0.9999
    guidance_weight: float = 2.5

    train_steps: int = 4000
    seed: int = 0
    noisy_mode: bool = False
    t_star: int = 20
    cfg_dropout: float = 0.1
    lambda_joints: float = 2.0
    lambda_vel: float = 10.0
    joints_source: str = "fk"
    scene_conditioning: bool = True
    vit_width: int = 128
    vit_layers: int = 2
    vit_heads: int = 4
    local_dim: int = 64
    log_every: int = 25
    checkpoint_every: int = 2000


PROFILES = {
    "paper": dict(batch_size=256, channels_dim=256, vit_width=256, vit_layers=4),
    "desk": dict(),
    "cpu": dict(
        batch_size=8,
        channels_dim=64,
        channel_multipliers=(1, 2),
        vit_width=64,
        vit_layers=1,
        train_steps=1500,
    ),
}


def train_config(profile="desk", **overrides):
    if profile not in PROFILES:
        raise SchemaError(f"unknown profile {profile!r}; have {sorted(PROFILES)}")
    return replace(TrainConfig(), **{**PROFILES[profile], **overrides})


def model_from_config(cfg):
    return MotionModel(
        width=cfg.channels_dim,
        mults=tuple(cfg.channel_multipliers),
        vit_width=cfg.vit_width,
        vit_layers=cfg.vit_layers,
        vit_heads=cfg.vit_heads,
        local_dim=cfg.local_dim,
    )


# ---------------------------------------------------------------------------
# training data with cached scene conditioning


class WindowBank:
    """All windows of a dataset split held in memory for batching.

    Per window this keeps the float32 feature frames, the body shape,
    the occupancy grid anchored at the window's first-frame root
    (bit-packed), and BPS offsets for every frame (masked down to the
    sampled keyframes at batch time). Grid and BPS are computed once per
    window and cached on disk under <root>/cache/.
    """

    def __init__(self, root, split="train", skel=None):
        self.skel = skel or canonical_skeleton()
        self.root = root
        self.ids = read_split(root, split)
        if not self.ids:
            raise SchemaError(f"split {split!r} of {root} is empty")
        cache_dir = os.path.join(root, "cache")
        os.makedirs(cache_dir, exist_ok=True)
        anchors = canonical_anchors(self.skel)

        frames, shapes, grids, bps = [], [], [], []
        scene_cache = {}
        for wid in self.ids:
            window, scene_id = load_window(root, wid, self.skel)
            if len(window.motion) != WINDOW_LEN:
                raise SchemaError(f"window {wid} has {len(window.motion)} frames")
            frames.append(window.motion.frames.astype(np.float32))
            shapes.append(np.asarray(window.motion.shape, dtype=np.float32))

            grid_path = os.path.join(cache_dir, f"{wid}.grid")
            bps_path = os.path.join(cache_dir, f"{wid}.bps")
            if os.path.exists(grid_path) and os.path.exists(bps_path):
                grids.append(np.fromfile(grid_path, dtype=np.uint8))
                bps.append(
                    np.fromfile(bps_path, dtype="<f4").reshape(WINDOW_LEN, -1)
                )
                continue
            if scene_id not in scene_cache:
                scene_cache[scene_id] = load_scene(root, scene_id)
            scene = scene_for_window(scene_cache[scene_id], window)
            g, b = self._conditioning(window, scene, anchors)
            g.tofile(grid_path)
            b.astype("<f4").tofile(bps_path)
            grids.append(g)
            bps.append(b)

        self.frames = np.stack(frames)
        self.shapes = np.stack(shapes)
        self.grids = np.stack(grids)
        self.bps = np.stack(bps).astype(np.float32)

    def _conditioning(self, window, scene, anchors):
        feats = window.motion.frames
        pose0, _ = pose_unpack(feats[0])
        yaw = yaw_of_matrix(rot6d_to_matrix(pose0.phi))
        grid = voxelize_global(scene, pose0.gamma, yaw_matrix(yaw))
        packed = np.packbits(grid.occupancy.reshape(-1).astype(np.uint8))

        index = build_spatial_index(scene)
        poses, _ = pose_unpack(feats)
        offsets = bps_features(poses, self.skel, anchors, index)
        return packed, offsets.reshape(len(feats), -1).astype(np.float32)

    def __len__(self):
        return len(self.ids)

    def grid_batch(self, idx):
        flat = np.unpackbits(self.grids[idx], axis=-1)[:, : int(np.prod(GRID_DIMS))]
        return flat.reshape((len(idx),) + GRID_DIMS).astype(np.float32)


# ---------------------------------------------------------------------------
# the training loop


class Trainer:
    def __init__(self, cfg, bank, run_dir, resume=None):
        if cfg.optimizer != "adamw":
            raise SchemaError(f"unsupported optimizer {cfg.optimizer!r}")
        if cfg.variance_scheduler != "cosine":
            raise SchemaError(f"unsupported scheduler {cfg.variance_scheduler!r}")
        os.makedirs(run_dir, exist_ok=True)
        self.cfg = cfg
        self.bank = bank
        self.run_dir = run_dir
        self.schedule = cosine_schedule(cfg.diffusion_steps)

        torch.manual_seed(cfg.seed)
        self.model = model_from_config(cfg)
        self.model.set_normalizer(
            fit_normalizer(bank.frames.reshape(-1, FEATURE_DIM).astype(np.float64))
        )
        self.opt = torch.optim.AdamW(
            self.model.parameters(),
            lr=cfg.learning_rate,
            weight_decay=cfg.weight_decay,
        )
        self.ema = {
            name: p.detach().clone() for name, p in self.model.named_parameters()
        }
        self.step = 0
        self.log_path = os.path.join(run_dir, "loss_log.txt")
        if resume is not None:
            self._restore(resume)
        elif os.path.exists(self.log_path):
            os.remove(self.log_path)

    def _rng(self, salt):
        return np.random.default_rng(
            np.random.SeedSequence([self.cfg.seed, self.step, salt])
        )

    def make_batch(self):
        """Assemble one training batch; all draws keyed to (seed, step)."""
        cfg = self.cfg
        rng = self._rng(_BATCH_SALT)
        n = WINDOW_LEN
        idx = rng.integers(0, len(self.bank), size=cfg.batch_size)
        t = rng.integers(1, cfg.diffusion_steps + 1, size=cfg.batch_size)
        masks = np.stack(
            [
                sample_keyframe_mask(n, "count", seed=int(rng.integers(2**62)))
                for _ in range(cfg.batch_size)
            ]
        ).astype(np.float32)

        raw = self.bank.frames[idx].astype(np.float64)
        if cfg.noisy_mode:
            ref = np.stack(
                [
                    inject_noise(
                        MotionSequence(raw[i], self.bank.skel),
                        float(rng.uniform()),
                        seed=int(rng.integers(2**62)),
                    ).frames
                    for i in range(cfg.batch_size)
                ]
            )
            impute_mask = masks * (t > cfg.t_star)[:, None].astype(np.float32)
        else:
            ref = raw
            impute_mask = masks

        norm = self.model.normalizer
        x0 = torch.as_tensor(norm.apply(raw), dtype=torch.float32)
        refn = torch.as_tensor(norm.apply(ref), dtype=torch.float32)
        eps = torch.as_tensor(
            rng.standard_normal(x0.shape), dtype=torch.float32
        )
        x_t = q_sample(x0, t, eps, self.schedule)
        x_imp = impute_keyframes(x_t, refn, torch.as_tensor(impute_mask))

        local = torch.as_tensor(self.bank.bps[idx] * masks[..., None])
        if not cfg.scene_conditioning:
            local = torch.zeros_like(local)
        drop = rng.uniform(size=cfg.batch_size) < cfg.cfg_dropout
        return {
            "x0": x0,
            "x_t": x_t,
            "x_imp": x_imp,
            "impute_mask": torch.as_tensor(impute_mask),
            "local": local,
            "mask": torch.as_tensor(masks),
            "t": torch.as_tensor(t),
            "shape": torch.as_tensor(self.bank.shapes[idx]),
            "grids": torch.as_tensor(self.bank.grid_batch(idx)),
            "drop": torch.as_tensor(drop),
        }

    def _global_code(self, batch):
        model = self.model
        b = batch["x0"].shape[0]
        null = model.grid_encoder.null_embedding(b)
        if not self.cfg.scene_conditioning:
            return null
        c_g = model.grid_encoder(batch["grids"])
        return torch.where(batch["drop"][:, None], null, c_g)

    def step_once(self):
        cfg = self.cfg
        batch = self.make_batch()
        self.model.train()
        c_g = self._global_code(batch)
        pred = self.model(
            batch["x_imp"], batch["local"], batch["mask"], batch["t"], batch["shape"], c_g
        )
        loss, l_simple, l_joints, l_vel = training_losses(
            batch["x0"],
            pred,
            self.bank.skel,
            normalizer=self.model.normalizer,
            lambda_joints=cfg.lambda_joints,
            lambda_vel=cfg.lambda_vel,
            joints_source=cfg.joints_source,
        )
        if not torch.isfinite(loss):
            self._dump_diagnostics(batch, (loss, l_simple, l_joints, l_vel))
            raise NumericError(
                f"non-finite loss at step {self.step + 1}; "
                f"dump written to {self.run_dir}"
            )
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        with torch.no_grad():
            for name, p in self.model.named_parameters():
                self.ema[name].mul_(cfg.ema_weight).add_(p, alpha=1.0 - cfg.ema_weight)
        self.step += 1
        values = tuple(float(v.detach()) for v in (loss, l_simple, l_joints, l_vel))
        if self.step == 1 or self.step % cfg.log_every == 0:
            with open(self.log_path, "a") as fh:
                fh.write(f"{self.step} " + " ".join(repr(v) for v in values) + "\n")
        return values

    def _dump_diagnostics(self, batch, losses):
        path = os.path.join(self.run_dir, "diagnostic_dump.txt")
        with open(path, "w") as fh:
            fh.write(f"step {self.step + 1}\n")
            for name, v in zip(("L", "L_simple", "L_joints", "L_vel"), losses):
                fh.write(f"{name} {float(v.detach())!r}\n")
            fh.write(f"t {batch['t'].tolist()}\n")
            fh.write(f"keyframes {batch['mask'].sum(dim=1).tolist()}\n")
            for name, p in self.model.named_parameters():
                if not torch.isfinite(p).all():
                    fh.write(f"non-finite parameter {name}\n")

    def train(self, steps=None):
        target = self.step + (steps if steps is not None else self.cfg.train_steps)
        while self.step < target:
            self.step_once()
            if self.step % self.cfg.checkpoint_every == 0 and self.step < target:
                self.save(os.path.join(self.run_dir, f"ckpt_{self.step}"))
        return self.save(os.path.join(self.run_dir, "ckpt_final"))

    # -- checkpoint persistence ---------------------------------------------

    def _checkpoint_tensors(self):
        tensors = {}
        for name, value in self.model.state_dict().items():
            tensors[f"model.{name}"] = value
        for name, value in self.ema.items():
            tensors[f"ema.{name}"] = value
        names = {p: n for n, p in self.model.named_parameters()}
        for p, state in self.opt.state.items():
            base = f"opt.{names[p]}"
            tensors[f"{base}.step"] = state["step"]
            tensors[f"{base}.exp_avg"] = state["exp_avg"]
            tensors[f"{base}.exp_avg_sq"] = state["exp_avg_sq"]
        return tensors

    def save(self, base):
        tensors = self._checkpoint_tensors()
        offset = 0
        lines = [
            "format checkpoint-v1\n",
            f"step {self.step}\n",
            f"skeleton {skeleton_hash(self.bank.skel)}\n",
            "ema true\n",
        ]
        for key, value in sorted(flatten_config(self.cfg).items()):
            lines.append(f"cfg.{key} {format_value(value)}\n")
        for key, value in sorted(self.model.arch.items()):
            lines.append(f"arch.{key} {format_value(value)}\n")
        blobs = []
        for name in sorted(tensors):
            t = tensors[name].detach().cpu()
            code = _DTYPE_CODES[t.dtype]
            raw = t.numpy().astype(code).tobytes()
            shape = ",".join(str(d) for d in t.shape) or "-"
            lines.append(f"tensor {name} {code} {shape} {offset} {len(raw)}\n")
            blobs.append(raw)
            offset += len(raw)
        with open(base + ".bin", "wb") as fh:
            fh.write(b"".join(blobs))
        with open(base + ".txt", "w") as fh:
            fh.writelines(lines)
        return base

    def _restore(self, base):
        bundle = load_checkpoint(base)
        # train_steps / logging cadence are run-length knobs, not part of the
        # model or RNG stream identity, so a resume may change them.
        runtime = ("train_steps", "log_every", "checkpoint_every")
        stored = {k: v for k, v in flatten_config(bundle.cfg).items() if k not in runtime}
        ours = {k: v for k, v in flatten_config(self.cfg).items() if k not in runtime}
        if stored != ours:
            raise SchemaError("resume config does not match the checkpoint")
        self.model.load_state_dict(bundle.model_state)
        self.ema = {k: v.clone() for k, v in bundle.ema.items()}
        params = dict(self.model.named_parameters())
        for name, state in bundle.opt_state.items():
            self.opt.state[params[name]] = {k: v.clone() for k, v in state.items()}
        self.step = bundle.step


@dataclass
class CheckpointBundle:
    cfg: TrainConfig
    step: int
    skeleton: str
    model_state: dict
    ema: dict
    opt_state: dict

    def build_model(self, use_ema=True):
        """Fresh eval-mode model from the checkpoint (EMA weights by default)."""
        model = model_from_config(self.cfg)
        model.load_state_dict(self.model_state)
        if use_ema:
            with torch.no_grad():
                for name, p in model.named_parameters():
                    p.copy_(self.ema[name])
        return model.eval()

    @property
    def schedule(self):
        return cosine_schedule(self.cfg.diffusion_steps)


def load_checkpoint(base):
    meta = {}
    entries = []
    with open(base + ".txt") as fh:
        for line in fh:
            key, _, rest = line.rstrip("\n").partition(" ")
            if key == "tensor":
                name, code, shape, offset, nbytes = rest.split(" ")
                entries.append((name, code, shape, int(offset), int(nbytes)))
            else:
                meta[key] = rest
    if meta.get("format") != "checkpoint-v1":
        raise SchemaError(f"unrecognized checkpoint format in {base}.txt")
    raw_cfg = {k[4:]: v for k, v in meta.items() if k.startswith("cfg.")}
    cfg = apply_config(TrainConfig(), raw_cfg)

    with open(base + ".bin", "rb") as fh:
        blob = fh.read()
    tensors = {}
    for name, code, shape, offset, nbytes in entries:
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=code)
        dims = [] if shape == "-" else [int(d) for d in shape.split(",")]
        tensors[name] = torch.as_tensor(arr.copy().reshape(dims))

    model_state = {k[6:]: v for k, v in tensors.items() if k.startswith("model.")}
    ema = {k[4:]: v for k, v in tensors.items() if k.startswith("ema.")}
    opt_state = {}
    for k, v in tensors.items():
        if k.startswith("opt."):
            name, _, field = k[4:].rpartition(".")
            opt_state.setdefault(name, {})[field] = v
    return CheckpointBundle(
        cfg=cfg,
        step=int(meta["step"]),
        skeleton=meta["skeleton"],
        model_state=model_state,
        ema=ema,
        opt_state=opt_state,
    )
