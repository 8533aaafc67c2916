"""BiGAN lab: bidirectional GANs, feature-learning baselines and an exact finite-space oracle.

Everything runs on a small dense-network engine written directly in numpy.
"""
from .estimators import GAN, Autoencoder, BiGAN, LatentRegressor, make_estimator
from .training import TrainConfig, TrainingDiverged, train_baseline, train_bigan

__all__ = [
    "BiGAN",
    "GAN",
    "LatentRegressor",
    "Autoencoder",
    "make_estimator",
    "TrainConfig",
    "TrainingDiverged",
    "train_bigan",
    "train_baseline",
]
__version__ = "0.1.0"
