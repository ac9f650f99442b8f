"""Temporal 1D U-Net denoiser predicting the clean motion window.

The temporal track is per-frame [imputed features (201) | local scene
embedding | keyframe mask (1)], projected to token width. Two prefix
tokens are prepended: token 0 from the body shape vector, token 1 from
the global scene embedding (or its learned null for guidance). A
sinusoidal embedding of the diffusion step is added to every token, the
track is zero-padded on the right to a multiple of the total temporal
downsampling factor, and the output is cropped back to the N frame
positions.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .torchops import timestep_embedding


@dataclass
class DenoiserConfig:
    width: int = 128
    mults: tuple = (2, 2, 2, 2)
    feature_dim: int = 201
    local_dim: int = 64
    shape_dim: int = 7
    scene_dim: int = 512

    @property
    def emb_dim(self):
        return 4 * self.width

    @property
    def downsample_factor(self):
        return 2 ** (len(self.mults) - 1)


class _ResBlock(nn.Module):
    """Conv1d residual block with adaptive group normalization.

    Each of the two norms is modulated per channel by (1 + scale, shift)
    projected from the step embedding.
    """

    def __init__(self, c_in, c_out, emb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, c_in, affine=False)
        self.ada1 = nn.Linear(emb_dim, 2 * c_in)
        self.conv1 = nn.Conv1d(c_in, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(8, c_out, affine=False)
        self.ada2 = nn.Linear(emb_dim, 2 * c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    @staticmethod
    def _modulate(norm, ada, h, emb):
        scale, shift = ada(emb)[:, :, None].chunk(2, dim=1)
        return norm(h) * (1.0 + scale) + shift

    def forward(self, h, emb):
        y = self.conv1(F.silu(self._modulate(self.norm1, self.ada1, h, emb)))
        y = self.conv2(F.silu(self._modulate(self.norm2, self.ada2, y, emb)))
        return self.skip(h) + y


class Denoiser(nn.Module):
    """x0-predicting temporal U-Net; see the module docstring for layout."""

    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or DenoiserConfig()
        self.cfg = cfg
        w, emb = cfg.width, cfg.emb_dim
        in_dim = cfg.feature_dim + cfg.local_dim + 1

        self.in_proj = nn.Linear(in_dim, w)
        self.shape_proj = nn.Linear(cfg.shape_dim, w)
        self.scene_proj = nn.Linear(cfg.scene_dim, w)
        self.emb_mlp = nn.Sequential(nn.Linear(w, emb), nn.SiLU(), nn.Linear(emb, emb))

        chs = [w] + [w * m for m in cfg.mults]
        levels = len(cfg.mults)
        self.down_blocks = nn.ModuleList(
            _ResBlock(chs[i], chs[i + 1], emb) for i in range(levels)
        )
        self.downsamples = nn.ModuleList(
            nn.Conv1d(chs[i + 1], chs[i + 1], 3, stride=2, padding=1)
            for i in range(levels - 1)
        )
        self.mid1 = _ResBlock(chs[-1], chs[-1], emb)
        self.mid2 = _ResBlock(chs[-1], chs[-1], emb)
        up_in = [
            (chs[i + 2] if i + 2 <= levels else chs[i + 1]) + chs[i + 1]
            for i in range(levels)
        ]
        self.up_blocks = nn.ModuleList(
            _ResBlock(up_in[i], chs[i + 1], emb) for i in range(levels)
        )
        self.upsamples = nn.ModuleList(
            nn.Conv1d(chs[i + 2], chs[i + 2], 3, padding=1) for i in range(levels - 1)
        )
        self.out_norm = nn.GroupNorm(8, chs[1], affine=False)
        self.out_ada = nn.Linear(emb, 2 * chs[1])
        self.out_proj = nn.Conv1d(chs[1], cfg.feature_dim, 1)

    def assemble_tokens(self, x_imp, local, mask, t, shape, c_g):
        """Token sequence (B, N+2, width): [shape, scene, frames...].

        The sinusoidal step embedding (width-dimensional) is added to
        every token, so changing t shifts all tokens by the same delta.
        """
        track = torch.cat([x_imp, local, mask.to(x_imp.dtype)[..., None]], dim=-1)
        tokens = torch.cat(
            [
                self.shape_proj(shape)[:, None, :],
                self.scene_proj(c_g)[:, None, :],
                self.in_proj(track),
            ],
            dim=1,
        )
        return tokens + timestep_embedding(t, self.cfg.width).to(tokens.dtype)[:, None, :]

    def forward(self, x_imp, local, mask, t, shape, c_g):
        """Predict x0 (B, N, 201) from the imputed track and conditioning.

        x_imp (B, N, 201), local (B, N, local_dim), mask (B, N) in {0,1},
        t (B,) integer steps, shape (B, 7), c_g (B, scene_dim).
        """
        n = x_imp.shape[1]
        tokens = self.assemble_tokens(x_imp, local, mask, t, shape, c_g)
        div = self.cfg.downsample_factor
        padded = int(math.ceil(tokens.shape[1] / div) * div)
        if padded > tokens.shape[1]:
            tokens = F.pad(tokens, (0, 0, 0, padded - tokens.shape[1]))
        emb = self.emb_mlp(timestep_embedding(t, self.cfg.width).to(tokens.dtype))

        h = tokens.transpose(1, 2)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, emb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        h = self.mid2(self.mid1(h, emb), emb)
        for i in reversed(range(len(self.up_blocks))):
            if i < len(self.upsamples):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i](h)
            h = self.up_blocks[i](torch.cat([h, skips[i]], dim=1), emb)
        h = F.silu(_ResBlock._modulate(self.out_norm, self.out_ada, h, emb))
        return self.out_proj(h)[:, :, 2 : 2 + n].transpose(1, 2)


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())
