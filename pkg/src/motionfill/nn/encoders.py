"""Scene conditioning encoders.

GridEncoder turns the 48x24x48 occupancy grid around the first keyframe
into a single global embedding with a small ViT: the grid is cut into
6x6x6 patches (8*4*8 = 256 tokens), each flattened and linearly
projected, run through a transformer encoder, mean-pooled and projected
to the output width. A learned null embedding stands in for the global
code under classifier-free guidance dropout.

LocalBPSEmbed lifts per-frame basis-point-set distance vectors to the
local conditioning channels; rows zeroed for non-keyframes all map to
the same learned constant (the embedding of the zero vector).
"""

import torch
import torch.nn as nn

from ..geometry import GRID_DIMS

PATCH = 6


class GridEncoder(nn.Module):
    def __init__(self, width=256, layers=4, heads=4, out_dim=512):
        super().__init__()
        if any(d % PATCH for d in GRID_DIMS):
            raise ValueError(f"grid dims {GRID_DIMS} not divisible by patch {PATCH}")
        self.tokens = (
            (GRID_DIMS[0] // PATCH) * (GRID_DIMS[1] // PATCH) * (GRID_DIMS[2] // PATCH)
        )
        self.patch_proj = nn.Linear(PATCH**3, width)
        self.pos = nn.Parameter(torch.randn(1, self.tokens, width) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=width,
            nhead=heads,
            dim_feedforward=4 * width,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=layers, enable_nested_tensor=False
        )
        self.out = nn.Linear(width, out_dim)
        self.null = nn.Parameter(torch.randn(out_dim) * 0.02)

    @staticmethod
    def patchify(grids):
        """Occupancy (B, 48, 24, 48) -> patch tokens (B, 256, 216)."""
        b = grids.shape[0]
        nx, ny, nz = (d // PATCH for d in GRID_DIMS)
        g = grids.reshape(b, nx, PATCH, ny, PATCH, nz, PATCH)
        g = g.permute(0, 1, 3, 5, 2, 4, 6)
        return g.reshape(b, nx * ny * nz, PATCH**3)

    def forward(self, grids):
        """Global scene embeddings (B, out_dim) from occupancy (B, 48, 24, 48)."""
        h = self.patch_proj(self.patchify(grids.to(self.pos.dtype))) + self.pos
        return self.out(self.encoder(h).mean(dim=1))

    def null_embedding(self, batch):
        return self.null[None, :].expand(batch, -1)


class LocalBPSEmbed(nn.Module):
    def __init__(self, in_dim=192, width=64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, width), nn.SiLU(), nn.Linear(width, width)
        )

    def forward(self, c_l):
        """Per-frame embeddings (B, N, width) from masked BPS rows (B, N, in_dim)."""
        return self.net(c_l)
