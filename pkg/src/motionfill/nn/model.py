"""Denoiser bundled with its conditioning encoders and normalization.

One nn.Module holds everything a checkpoint needs: the U-Net, the grid
ViT (with its null embedding), the local BPS MLP, and the per-channel
feature normalizer as buffers, so a single state dict round-trips the
whole sampler-facing model.
"""

import torch
import torch.nn as nn

from ..bps import NUM_ANCHORS
from ..diffusion import Normalizer
from .encoders import GridEncoder, LocalBPSEmbed
from .unet import Denoiser, DenoiserConfig


class MotionModel(nn.Module):
    def __init__(self, width=128, mults=(2, 2, 2, 2), vit_width=128, vit_layers=2,
                 vit_heads=4, local_dim=64, scene_dim=512):
        super().__init__()
        self.arch = {
            "width": width,
            "mults": tuple(mults),
            "vit_width": vit_width,
            "vit_layers": vit_layers,
            "vit_heads": vit_heads,
            "local_dim": local_dim,
            "scene_dim": scene_dim,
        }
        cfg = DenoiserConfig(
            width=width, mults=tuple(mults), local_dim=local_dim, scene_dim=scene_dim
        )
        self.denoiser = Denoiser(cfg)
        self.grid_encoder = GridEncoder(vit_width, vit_layers, vit_heads, scene_dim)
        self.local_embed = LocalBPSEmbed(3 * NUM_ANCHORS, local_dim)
        self.register_buffer("feat_mean", torch.zeros(cfg.feature_dim, dtype=torch.float64))
        self.register_buffer("feat_std", torch.ones(cfg.feature_dim, dtype=torch.float64))

    def set_normalizer(self, norm):
        self.feat_mean.copy_(torch.as_tensor(norm.mean))
        self.feat_std.copy_(torch.as_tensor(norm.std))

    @property
    def normalizer(self):
        return Normalizer(
            mean=self.feat_mean.detach().cpu().numpy().copy(),
            std=self.feat_std.detach().cpu().numpy().copy(),
        )

    def forward(self, x_imp, local_raw, mask, t, shape, c_g):
        """x0 prediction (B, N, 201); local_raw is the masked BPS track."""
        return self.denoiser(x_imp, self.local_embed(local_raw), mask, t, shape, c_g)


def build_model(arch):
    return MotionModel(**arch)
