"""scikit-learn style estimators around the training bundles.

``fit`` trains from scratch, ``partial_fit`` continues an interrupted run
epoch by epoch, and ``transform`` returns the learned features, so every
model drops into sklearn pipelines and ``get_params``/``clone``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import LatentSpec, make_rng, sample_latent
from .evaluation import extract_features, reconstruction_error
from .training import TrainConfig, TrainReport, default_gx, new_bundle, reconstruct, run

_COMMON = ("latent_dim", "hidden_dim", "epochs", "batch_size", "alpha0", "alpha_final",
           "beta1", "beta2", "adam_eps", "weight_decay", "seed", "monitor_size")


class _BundleEstimator(TransformerMixin, BaseEstimator):
    def _model_kind(self):
        raise NotImplementedError

    def _config(self):
        params = {k: getattr(self, k) for k in _COMMON}
        if hasattr(self, "downsample"):
            params["downsample"] = self.downsample
        return TrainConfig(model_kind=self._model_kind(), **params)

    def _check_X(self, X, reset=False):
        X = check_array(X, dtype=np.float64)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X

    def fit(self, X, y=None):
        X = self._check_X(X, reset=True)
        self.bundle_ = new_bundle(self._config(), X.shape[1])
        self.report_ = run(self.bundle_, X, gx=default_gx(self.bundle_.config))
        return self

    def partial_fit(self, X, y=None, n_epochs=1):
        """Train ``n_epochs`` more epochs, starting a fresh run if unfitted."""
        if not hasattr(self, "bundle_"):
            X = self._check_X(X, reset=True)
            self.bundle_ = new_bundle(self._config(), X.shape[1])
            self.report_ = TrainReport()
        else:
            X = self._check_X(X)
        run(self.bundle_, X, n_epochs, self.report_, gx=default_gx(self.bundle_.config))
        return self

    @classmethod
    def from_bundle(cls, bundle):
        c = bundle.config
        params = {k: getattr(c, k) for k in _COMMON}
        est = make_estimator(c.model_kind, **params, **_extra_params(c))
        est.bundle_ = bundle
        est.report_ = TrainReport()
        est.n_features_in_ = bundle.data_dim
        return est

    @property
    def is_complete(self):
        check_is_fitted(self, "bundle_")
        return self.bundle_.done

    def transform(self, X):
        check_is_fitted(self, "bundle_")
        return extract_features(self.bundle_, self._check_X(X))


class _GeneratorMixin:
    def sample(self, n, seed=0):
        """Draw ``n`` generator samples from fresh latent noise."""
        check_is_fitted(self, "bundle_")
        z = sample_latent(LatentSpec(self.latent_dim), n, make_rng(seed))
        return self.bundle_.nets["G"].predict(z)

    def inverse_transform(self, Z):
        check_is_fitted(self, "bundle_")
        return self.bundle_.nets["G"].predict(check_array(Z, dtype=np.float64))


class _ReconstructMixin:
    def reconstruct(self, X):
        check_is_fitted(self, "bundle_")
        out = reconstruct(self.bundle_, self._check_X(X), default_gx(self.bundle_.config))
        return out[0]

    def reconstruction_error(self, X):
        check_is_fitted(self, "bundle_")
        return reconstruction_error(self.bundle_, self._check_X(X))


class BiGAN(_GeneratorMixin, _ReconstructMixin, _BundleEstimator):
    """Bidirectional GAN; ``transform`` gives encoder features E(x).

    ``downsample > 1`` trains the generalized variant: the encoder reads full
    resolution rows while the generator and discriminator work on images
    mean-pooled by that factor per side.
    """

    def __init__(self, latent_dim=50, hidden_dim=1024, epochs=400, batch_size=128,
                 alpha0=2e-4, alpha_final=2e-6, beta1=0.5, beta2=0.999, adam_eps=1e-8,
                 weight_decay=2.5e-5, seed=0, monitor_size=1000, downsample=1):
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.alpha0 = alpha0
        self.alpha_final = alpha_final
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.weight_decay = weight_decay
        self.seed = seed
        self.monitor_size = monitor_size
        self.downsample = downsample

    def _model_kind(self):
        return "bigan"


class GAN(_GeneratorMixin, _BundleEstimator):
    """Plain GAN; ``transform`` gives the discriminator's second hidden layer."""

    def __init__(self, latent_dim=50, hidden_dim=1024, epochs=400, batch_size=128,
                 alpha0=2e-4, alpha_final=2e-6, beta1=0.5, beta2=0.999, adam_eps=1e-8,
                 weight_decay=2.5e-5, seed=0, monitor_size=1000):
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.alpha0 = alpha0
        self.alpha_final = alpha_final
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.weight_decay = weight_decay
        self.seed = seed
        self.monitor_size = monitor_size

    def _model_kind(self):
        return "gan"


class LatentRegressor(_GeneratorMixin, _ReconstructMixin, _BundleEstimator):
    """Encoder regressed onto generator inputs.

    With ``joint=False`` a GAN is trained first and the encoder afterwards
    on the frozen generator (same epoch budget for each phase); with
    ``joint=True`` the encoder trains alongside the GAN.
    """

    def __init__(self, latent_dim=50, hidden_dim=1024, epochs=400, batch_size=128,
                 alpha0=2e-4, alpha_final=2e-6, beta1=0.5, beta2=0.999, adam_eps=1e-8,
                 weight_decay=2.5e-5, seed=0, monitor_size=1000, joint=False):
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.alpha0 = alpha0
        self.alpha_final = alpha_final
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.weight_decay = weight_decay
        self.seed = seed
        self.monitor_size = monitor_size
        self.joint = joint

    def _model_kind(self):
        return "jlr" if self.joint else "lr"


class Autoencoder(_ReconstructMixin, _BundleEstimator):
    def __init__(self, latent_dim=50, hidden_dim=1024, epochs=400, batch_size=128,
                 alpha0=2e-4, alpha_final=2e-6, beta1=0.5, beta2=0.999, adam_eps=1e-8,
                 weight_decay=2.5e-5, seed=0, monitor_size=1000, norm="l2"):
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.alpha0 = alpha0
        self.alpha_final = alpha_final
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.weight_decay = weight_decay
        self.seed = seed
        self.monitor_size = monitor_size
        self.norm = norm

    def _model_kind(self):
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"norm must be 'l1' or 'l2', got {self.norm!r}")
        return f"ae_{self.norm}"

    def inverse_transform(self, codes):
        check_is_fitted(self, "bundle_")
        return self.bundle_.nets["A"].predict(check_array(codes, dtype=np.float64))


def _extra_params(config):
    kind = config.model_kind
    if kind == "bigan":
        return {"downsample": config.downsample}
    if kind in ("lr", "jlr"):
        return {"joint": kind == "jlr"}
    if kind.startswith("ae_"):
        return {"norm": kind[3:]}
    return {}


def make_estimator(model_kind, **params):
    """Estimator for a model kind name (``bigan``, ``gan``, ``lr``, ``jlr``, ``ae_l1``, ``ae_l2``)."""
    if model_kind == "bigan":
        return BiGAN(**params)
    if model_kind == "gan":
        return GAN(**params)
    if model_kind in ("lr", "jlr"):
        params.setdefault("joint", model_kind == "jlr")
        return LatentRegressor(**params)
    if model_kind in ("ae_l1", "ae_l2"):
        params.setdefault("norm", model_kind[3:])
        return Autoencoder(**params)
    raise ValueError(f"unknown model kind {model_kind!r}")
