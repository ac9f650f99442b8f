"""Motion feature extractor for distributional evaluation.

A small temporal convolutional autoencoder is trained to reconstruct
normalized feature windows; the mean-pooled 64-d bottleneck is the
feature vector that the Frechet distance is computed on. Extractors are
frozen after training and identified by a hash of their weights, since
distances are only comparable between reports built with the same one.
"""

import hashlib

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..diffusion import Normalizer, fit_normalizer
from ..errors import SchemaError
from ..kinematics import FEATURE_DIM

LATENT_DIM = 64

_BATCH_SALT = 0x7A11

_DTYPE_CODES = {torch.float32: "<f4", torch.float64: "<f8"}


class MotionAutoencoder(nn.Module):
    """Strided temporal conv encoder, nearest-upsample decoder."""

    def __init__(self, feature_dim=FEATURE_DIM, width=128, latent=LATENT_DIM):
        super().__init__()
        self.arch = dict(feature_dim=feature_dim, width=width, latent=latent)
        self.encoder = nn.Sequential(
            nn.Conv1d(feature_dim, width, 5, stride=2, padding=2),
            nn.SiLU(),
            nn.Conv1d(width, width, 5, stride=2, padding=2),
            nn.SiLU(),
            nn.Conv1d(width, latent, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv1d(latent, width, 3, padding=1),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv1d(width, width, 5, padding=2),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv1d(width, feature_dim, 5, padding=2),
        )
        self.register_buffer("feat_mean", torch.zeros(feature_dim, dtype=torch.float64))
        self.register_buffer("feat_std", torch.ones(feature_dim, dtype=torch.float64))

    def encode(self, x):
        """Normalized (B, N, F) -> bottleneck track (B, latent, ~N/4)."""
        return self.encoder(x.transpose(1, 2))

    def forward(self, x):
        n = x.shape[1]
        recon = self.decoder(self.encode(x))
        return recon[:, :, :n].transpose(1, 2)


def weights_hash(model):
    """Hex digest over the sorted state dict; identifies an extractor."""
    digest = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        t = state[name].detach().cpu()
        digest.update(name.encode())
        digest.update(t.numpy().astype(_DTYPE_CODES[t.dtype]).tobytes())
    return digest.hexdigest()[:16]


class FeatureExtractor:
    """A frozen autoencoder plus the normalizer it was fitted with."""

    def __init__(self, model):
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self.model = model
        self.hash = weights_hash(model)

    @property
    def normalizer(self):
        return Normalizer(
            mean=self.model.feat_mean.numpy().copy(),
            std=self.model.feat_std.numpy().copy(),
        )

    def _prepare(self, frames):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.shape[-1] != self.model.arch["feature_dim"]:
            raise SchemaError(f"expected {self.model.arch['feature_dim']}-d frames")
        return torch.as_tensor(self.normalizer.apply(frames), dtype=torch.float32)

    def extract(self, motion):
        """One motion (sequence object or (N, F) array) -> (latent,) vector."""
        frames = motion.frames if hasattr(motion, "frames") else motion
        return self.extract_batch(np.asarray(frames)[None])[0]

    def extract_batch(self, frames):
        with torch.no_grad():
            z = self.model.encode(self._prepare(frames))
        return z.mean(dim=-1).numpy().astype(np.float64)

    def features(self, motions):
        """Stacked feature vectors for a list of equal-length motions."""
        frames = np.stack(
            [m.frames if hasattr(m, "frames") else np.asarray(m) for m in motions]
        )
        return self.extract_batch(frames)

    def reconstruction_mse(self, frames):
        """Mean squared reconstruction error in normalized units."""
        x = self._prepare(frames)
        with torch.no_grad():
            recon = self.model(x)
        return float(F.mse_loss(recon, x))


def train_feature_extractor(
    windows, seed=0, steps=1500, batch_size=8, width=128, latent=LATENT_DIM, lr=1e-3
):
    """Fit the autoencoder on ground-truth windows; returns a frozen extractor.

    windows: (K, N, F) array or anything with a .frames attribute of that
    shape. Training is bit-reproducible for a given seed.
    """
    frames = windows.frames if hasattr(windows, "frames") else windows
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[-1] != FEATURE_DIM:
        raise SchemaError(f"expected (K, N, {FEATURE_DIM}) windows, got {frames.shape}")
    norm = fit_normalizer(frames.reshape(-1, FEATURE_DIM))

    torch.manual_seed(seed)
    model = MotionAutoencoder(width=width, latent=latent)
    with torch.no_grad():
        model.feat_mean.copy_(torch.as_tensor(norm.mean))
        model.feat_std.copy_(torch.as_tensor(norm.std))
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    data = torch.as_tensor(norm.apply(frames), dtype=torch.float32)

    model.train()
    for step in range(steps):
        rng = np.random.default_rng(np.random.SeedSequence([seed, step, _BATCH_SALT]))
        idx = rng.integers(0, len(data), size=min(batch_size, len(data)))
        batch = data[idx]
        loss = F.mse_loss(model(batch), batch)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return FeatureExtractor(model)


def save_extractor(extractor, base):
    """Write <base>.bin / <base>.txt; the sidecar pins arch and hash."""
    state = extractor.model.state_dict()
    lines = ["format extractor-v1\n", f"hash {extractor.hash}\n"]
    for key, value in sorted(extractor.model.arch.items()):
        lines.append(f"arch.{key} {value}\n")
    blobs, offset = [], 0
    for name in sorted(state):
        t = state[name].detach().cpu()
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


def load_extractor(base):
    meta, entries = {}, []
    with open(base + ".txt") as fh:
        for line in fh:
            key, _, rest = line.rstrip("\n").partition(" ")
            if key == "tensor":
                name, code, shape, offset, nbytes = rest.split(" ")
                entries.append((name, code, shape, int(offset), int(nbytes)))
            else:
                meta[key] = rest
    if meta.get("format") != "extractor-v1":
        raise SchemaError(f"unrecognized extractor format in {base}.txt")
    model = MotionAutoencoder(
        feature_dim=int(meta["arch.feature_dim"]),
        width=int(meta["arch.width"]),
        latent=int(meta["arch.latent"]),
    )
    with open(base + ".bin", "rb") as fh:
        blob = fh.read()
    state = {}
    for name, code, shape, offset, nbytes in entries:
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=code)
        dims = [] if shape == "-" else [int(d) for d in shape.split(",")]
        state[name] = torch.as_tensor(arr.copy().reshape(dims))
    model.load_state_dict(state)
    extractor = FeatureExtractor(model)
    if extractor.hash != meta.get("hash"):
        raise SchemaError(f"extractor weights do not match the recorded hash in {base}.txt")
    return extractor
