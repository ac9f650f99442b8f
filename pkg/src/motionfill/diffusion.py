"""DDPM noise schedule and the exact forward/reverse/imputation algebra.

Everything here is plain array math shared by training and sampling.
The schedule is the standard squared-cosine form; the denoiser predicts
the clean sample, so the reverse step is the x0-parameterized posterior.
Keyframe conditioning is imputation: masked rows of the noisy sample
are overwritten with reference poses before each denoiser call.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass(frozen=True)
class DiffusionSchedule:
    """Arrays indexed by t-1 for diffusion steps t in [1, T]."""

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray

    @property
    def alpha_bar_prev(self):
        """alpha_bar shifted one step back, with the t=1 boundary value 1."""
        return np.concatenate([[1.0], self.alpha_bar[:-1]])


def cosine_schedule(T=1000, s=0.008, max_beta=0.999):
    """Squared-cosine alpha_bar with betas clipped and re-accumulated."""
    if T < 2:
        raise ValueError("schedule needs T >= 2")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    alpha_bar = f[1:] / f[0]
    ratios = np.concatenate([[alpha_bar[0]], alpha_bar[1:] / alpha_bar[:-1]])
    beta = np.clip(1.0 - ratios, 0.0, max_beta)
    alpha_bar = np.cumprod(1.0 - beta)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = (1.0 - prev) / (1.0 - alpha_bar) * beta

    if not np.all(np.diff(alpha_bar) < 0):
        raise NumericError("alpha_bar must decrease strictly")
    if not (0.99 < alpha_bar[0] < 1.0):
        raise NumericError(f"alpha_bar_1 = {alpha_bar[0]} outside (0.99, 1)")
    if not alpha_bar[-1] < 1e-3:
        raise NumericError(f"alpha_bar_T = {alpha_bar[-1]} too large")
    return DiffusionSchedule(T=T, beta=beta, alpha_bar=alpha_bar, posterior_var=posterior_var)


def _coef(values, t, like):
    """Schedule values at steps t, shaped to broadcast against `like`.

    t may be a python int or an integer array (one step per leading
    batch entry of `like`). Tensors are handled by dispatching through
    numpy only for the lookup.
    """
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > len(values)):
        raise ValueError(f"diffusion step {t} outside [1, {len(values)}]")
    picked = values[t_arr - 1]
    if t_arr.ndim == 0:
        return float(picked)
    shape = (len(picked),) + (1,) * (like.ndim - 1)
    if isinstance(like, np.ndarray):
        return picked.reshape(shape)
    import torch

    return torch.as_tensor(picked, dtype=like.dtype, device=like.device).reshape(shape)


def q_sample(x0, t, eps, schedule):
    """Forward diffusion: sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) eps."""
    ab = _coef(schedule.alpha_bar, t, x0)
    return (ab ** 0.5) * x0 + ((1.0 - ab) ** 0.5) * eps


def impute_keyframes(x_t, reference, m):
    """Overwrite masked frame rows with the reference: m*ref + (1-m)*x_t."""
    mask = _as_channel_mask(m, x_t)
    return mask * reference + (1.0 - mask) * x_t


def mask_local_features(c_l, m):
    """Zero local scene features on non-keyframe rows."""
    return _as_channel_mask(m, c_l) * c_l


def _as_channel_mask(m, like):
    if isinstance(like, np.ndarray):
        m = np.asarray(m)
        return m[..., None].astype(like.dtype)
    import torch

    m = torch.as_tensor(m, device=like.device)
    return m[..., None].to(like.dtype)


def ddpm_step(x_t, x0_hat, t, schedule, noise=None):
    """One ancestral reverse step from t to t-1 given the x0 prediction.

    mu = (sqrt(a_bar_prev) beta_t / (1 - a_bar_t)) x0_hat
       + (sqrt(alpha_t) (1 - a_bar_prev) / (1 - a_bar_t)) x_t
    and x_{t-1} = mu + sqrt(posterior_var_t) * noise, noiseless at t = 1.
    """
    ab = _coef(schedule.alpha_bar, t, x_t)
    ab_prev = _coef(schedule.alpha_bar_prev, t, x_t)
    beta = _coef(schedule.beta, t, x_t)
    var = _coef(schedule.posterior_var, t, x_t)
    alpha = 1.0 - beta
    mu = (ab_prev ** 0.5) * beta / (1.0 - ab) * x0_hat + (alpha ** 0.5) * (
        1.0 - ab_prev
    ) / (1.0 - ab) * x_t
    if noise is None:
        return mu
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        return mu if int(t_arr) == 1 else mu + (var ** 0.5) * noise
    keep = _coef((np.arange(1, schedule.T + 1) > 1).astype(np.float64), t, x_t)
    return mu + keep * (var ** 0.5) * noise


# ---------------------------------------------------------------------------
# per-channel feature normalization

@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        if isinstance(x, np.ndarray):
            return (x - self.mean) / self.std
        import torch

        mean = torch.as_tensor(self.mean, dtype=x.dtype, device=x.device)
        std = torch.as_tensor(self.std, dtype=x.dtype, device=x.device)
        return (x - mean) / std

    def invert(self, x):
        if isinstance(x, np.ndarray):
            return x * self.std + self.mean
        import torch

        mean = torch.as_tensor(self.mean, dtype=x.dtype, device=x.device)
        std = torch.as_tensor(self.std, dtype=x.dtype, device=x.device)
        return x * std + mean


def fit_normalizer(frames, floor=1e-4):
    """Per-channel mean/std over stacked frames (N_total, C)."""
    frames = np.asarray(frames, dtype=np.float64).reshape(-1, np.shape(frames)[-1])
    mean = frames.mean(axis=0)
    std = np.maximum(frames.std(axis=0), floor)
    return Normalizer(mean=mean, std=std)