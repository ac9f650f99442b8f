"""Learned components: denoiser U-Net, scene encoders, feature extractor."""

from .torchops import fk_positions, matrix_from_rot6d, rot6d_from_matrix, timestep_embedding
from .unet import Denoiser, DenoiserConfig
from .encoders import GridEncoder, LocalBPSEmbed
from .losses import training_losses
from .extractor import (
    FeatureExtractor,
    MotionAutoencoder,
    load_extractor,
    save_extractor,
    train_feature_extractor,
)

__all__ = [
    "Denoiser",
    "DenoiserConfig",
    "FeatureExtractor",
    "GridEncoder",
    "LocalBPSEmbed",
    "MotionAutoencoder",
    "fk_positions",
    "load_extractor",
    "matrix_from_rot6d",
    "rot6d_from_matrix",
    "save_extractor",
    "timestep_embedding",
    "train_feature_extractor",
    "training_losses",
]
