"""Training loops for BiGAN and the baseline feature learners.

Every model is held in a :class:`ModelBundle`: its networks, Adam states,
RNG streams and epoch counter. Training advances a bundle one epoch at a
time, so an interrupted run resumed from a checkpoint follows exactly the
same trajectory as an uninterrupted one.
"""
from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import STREAM_DATA, STREAM_INIT, STREAM_LATENT, LatentSpec, make_rng, sample_latent
from .losses import (
    ENCODER_PAIR,
    GENERATOR_PAIR,
    PairBatch,
    autoencoder_loss,
    bigan_losses,
    gan_losses,
    latent_regressor_loss,
    log_sigmoid,
)
from .nn import NonFiniteError, build_preset
from .optim import AdamState, adam_step, lr_at

logger = logging.getLogger(__name__)

MODEL_KINDS = ("bigan", "gan", "lr", "jlr", "ae_l1", "ae_l2")


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration, what):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    model_kind: str = "bigan"
    latent_dim: int = 50
    hidden_dim: int = 1024
    epochs: int = 400
    batch_size: int = 128
    alpha0: float = 2e-4
    alpha_final: float = 2e-6
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 2.5e-5
    seed: int = 0
    downsample: int = 1
    snapshot_every: int = 25
    monitor_size: int = 1000

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if not 0 < self.alpha_final <= self.alpha0:
            raise ValueError("need 0 < alpha_final <= alpha0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch normalization)")
        if self.epochs < 1 or self.latent_dim < 1 or self.hidden_dim < 1:
            raise ValueError("epochs, latent_dim and hidden_dim must be positive")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")
        if self.downsample > 1 and self.model_kind != "bigan":
            raise ValueError("downsampling (generalized BiGAN) applies to bigan only")

    @classmethod
    def field_types(cls):
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}

    @property
    def total_epochs(self):
        # latent regressor: GAN phase then an equal-length regression phase
        return 2 * self.epochs if self.model_kind == "lr" else self.epochs


@dataclass
class EpochRecord:
    epoch: int
    d_loss: float
    ge_loss: float
    value: float
    recon_error: float
    seconds: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)

    COLUMNS = ("epoch", "d_loss", "ge_loss", "value", "recon_error", "seconds")

    def to_csv(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in self.COLUMNS[1:]])
        os.replace(tmp, path)


@dataclass
class ModelBundle:
    config: TrainConfig
    nets: dict
    adam: dict
    rngs: dict
    epoch: int = 0
    data_dim: int = 0

    @property
    def kind(self):
        return self.config.model_kind

    @property
    def done(self):
        return self.epoch >= self.config.total_epochs


def downsample_gx(x, k):
    """Mean-pool square images stored as flat rows by a factor ``k`` per side."""
    x = np.asarray(x, dtype=np.float64)
    b, d = x.shape
    s = int(round(np.sqrt(d)))
    if s * s != d or s % k:
        raise ValueError(f"cannot downsample {d}-dim rows by {k}")
    r = s // k
    return x.reshape(b, r, k, r, k).mean(axis=(2, 4)).reshape(b, r * r)


def generator_dim(config, data_dim):
    k = config.downsample
    return data_dim // (k * k)


def new_bundle(config: TrainConfig, data_dim: int) -> ModelBundle:
    kind = config.model_kind
    lat, hid = config.latent_dim, config.hidden_dim
    out_dim = generator_dim(config, data_dim)
    if kind == "bigan":
        nets = {
            "G": build_preset("mnist_G", lat, out_dim, hid),
            "E": build_preset("mnist_E", lat, data_dim, hid),
            "D": build_preset("mnist_D_bigan", lat, out_dim, hid),
        }
    elif kind in ("gan", "lr", "jlr"):
        nets = {
            "G": build_preset("mnist_G", lat, data_dim, hid),
            "D": build_preset("mnist_D_gan", lat, data_dim, hid),
        }
        if kind != "gan":
            nets["E"] = build_preset("mnist_E", lat, data_dim, hid)
    else:
        nets = {
            "E": build_preset("mnist_E", lat, data_dim, hid),
            "A": build_preset("mnist_AE", lat, data_dim, hid),
        }
    init_rng = make_rng(config.seed, STREAM_INIT)
    for name in sorted(nets):
        nets[name].init_params(init_rng)
    return ModelBundle(
        config=config,
        nets=nets,
        adam={name: AdamState() for name in nets},
        rngs={
            "init": init_rng,
            "data": make_rng(config.seed, STREAM_DATA),
            "latent": make_rng(config.seed, STREAM_LATENT),
        },
        data_dim=data_dim,
    )


def _update(bundle, name, grads, lr):
    c = bundle.config
    adam_step(bundle.nets[name], grads, bundle.adam[name], lr,
              c.beta1, c.beta2, c.adam_eps, c.weight_decay)


def _step_bigan(bundle, xb, zb, lr, gx):
    E, G, D = bundle.nets["E"], bundle.nets["G"], bundle.nets["D"]
    ex, e_tape = E.forward(xb)
    gz, g_tape = G.forward(zb)
    x_real = xb if gx is None else gx(xb)
    d_loss, ge_loss, logits = bigan_losses(
        D, PairBatch(x_real, ex, ENCODER_PAIR), PairBatch(gz, zb, GENERATOR_PAIR)
    )
    e_grads = E.backward(e_tape, ge_loss.grads["E"])[0]
    g_grads = G.backward(g_tape, ge_loss.grads["G"])[0]
    # all gradients above come from the pre-update parameters
    _update(bundle, "D", d_loss.grads["D"], lr)
    _update(bundle, "E", e_grads, lr)
    _update(bundle, "G", g_grads, lr)
    n = len(xb)
    return d_loss.value, ge_loss.value, float(
        np.mean(log_sigmoid(logits[:n])) + np.mean(log_sigmoid(-logits[n:]))
    )


def _step_gan(bundle, xb, zb, lr, joint_encoder=False):
    G, D = bundle.nets["G"], bundle.nets["D"]
    gz, g_tape = G.forward(zb)
    d_loss, g_loss = gan_losses(xb, gz, D)
    g_out_grad = g_loss.grads["G"]
    ge_value = g_loss.value
    e_grads = None
    if joint_encoder:
        E = bundle.nets["E"]
        e_out, e_tape = E.forward(gz)
        reg = latent_regressor_loss(e_out, zb)
        e_grads, gz_grad, _ = E.backward(e_tape, reg.grads["E"])
        g_out_grad = g_out_grad + gz_grad
        ge_value += reg.value
    g_grads = G.backward(g_tape, g_out_grad)[0]
    _update(bundle, "D", d_loss.grads["D"], lr)
    _update(bundle, "G", g_grads, lr)
    if e_grads is not None:
        _update(bundle, "E", e_grads, lr)
    return d_loss.value, ge_value, -2.0 * d_loss.value


def _step_regressor(bundle, zb, lr):
    G, E = bundle.nets["G"], bundle.nets["E"]
    gz = G.forward(zb, training=False)[0]
    e_out, e_tape = E.forward(gz)
    reg = latent_regressor_loss(e_out, zb)
    _update(bundle, "E", E.backward(e_tape, reg.grads["E"])[0], lr)
    return None, reg.value, None


def _step_ae(bundle, xb, lr, norm):
    E, A = bundle.nets["E"], bundle.nets["A"]
    code, e_tape = E.forward(xb)
    xh, a_tape = A.forward(code)
    loss = autoencoder_loss(xb, xh, norm)
    a_grads, code_grad, _ = A.backward(a_tape, loss.grads["x_hat"])
    e_grads = E.backward(e_tape, code_grad)[0]
    _update(bundle, "A", a_grads, lr)
    _update(bundle, "E", e_grads, lr)
    return None, loss.value, None


def default_gx(config):
    if config.downsample == 1:
        return None
    k = config.downsample
    return lambda x: downsample_gx(x, k)


def reconstruct(bundle, X, gx=None):
    """Inference-mode reconstructions and their targets, or None without a decoder."""
    nets = bundle.nets
    if "E" not in nets or ("G" not in nets and "A" not in nets):
        return None
    decoder = nets["G"] if "G" in nets else nets["A"]
    recon = decoder.predict(nets["E"].predict(X))
    target = X if gx is None else gx(X)
    return recon, target


def monitor_recon_error(bundle, X, gx=None):
    out = reconstruct(bundle, X[: bundle.config.monitor_size], gx)
    if out is None:
        return float("nan")
    recon, target = out
    return float(np.mean(np.linalg.norm(target - recon, axis=1)))


def train_epoch(bundle: ModelBundle, X, gx=None) -> EpochRecord:
    """Advance ``bundle`` by one pass over ``X``."""
    c = bundle.config
    if bundle.done:
        raise RuntimeError("training already complete")
    start = time.perf_counter()
    kind = c.model_kind
    phase_epoch = bundle.epoch % c.epochs
    lr = lr_at(phase_epoch, c.epochs, c.alpha0, c.alpha_final)
    regression_phase = kind == "lr" and bundle.epoch >= c.epochs
    latent = LatentSpec(c.latent_dim)
    n = len(X)
    n_iter = n // c.batch_size
    if n_iter == 0:
        raise ValueError(f"dataset of {n} rows is smaller than one batch of {c.batch_size}")
    perm = bundle.rngs["data"].permutation(n)
    sums = np.zeros(3)
    for it in range(n_iter):
        xb = X[perm[it * c.batch_size:(it + 1) * c.batch_size]]
        zb = sample_latent(latent, c.batch_size, bundle.rngs["latent"])
        iteration = bundle.epoch * n_iter + it
        try:
            if kind == "bigan":
                vals = _step_bigan(bundle, xb, zb, lr, gx)
            elif regression_phase:
                vals = _step_regressor(bundle, zb, lr)
            elif kind in ("gan", "lr", "jlr"):
                vals = _step_gan(bundle, xb, zb, lr, joint_encoder=kind == "jlr")
            else:
                vals = _step_ae(bundle, xb, lr, kind[3:])
        except NonFiniteError as exc:
            raise TrainingDiverged(iteration, str(exc)) from exc
        for what, v in zip(("discriminator loss", "generator/encoder loss"), vals[:2]):
            if v is not None and not np.isfinite(v):
                raise TrainingDiverged(iteration, what)
        sums += [np.nan if v is None else v for v in vals]
    bundle.epoch += 1
    record = EpochRecord(
        epoch=bundle.epoch,
        d_loss=sums[0] / n_iter,
        ge_loss=sums[1] / n_iter,
        value=sums[2] / n_iter,
        recon_error=monitor_recon_error(bundle, X, gx),
        seconds=time.perf_counter() - start,
    )
    logger.info("%s epoch %d: %s", kind, bundle.epoch, asdict(record))
    return record


def run(bundle, X, n_epochs=None, report=None, gx=None):
    """Train ``bundle`` for ``n_epochs`` more epochs (default: to completion)."""
    report = TrainReport() if report is None else report
    remaining = bundle.config.total_epochs - bundle.epoch
    n_epochs = remaining if n_epochs is None else min(n_epochs, remaining)
    X = np.asarray(X, dtype=np.float64)
    for _ in range(n_epochs):
        report.records.append(train_epoch(bundle, X, gx))
    return report


def train_bigan(config: TrainConfig, X, gx=None):
    """Train a BiGAN from scratch; ``gx`` overrides the data map fed to D."""
    if config.model_kind != "bigan":
        raise ValueError("train_bigan needs model_kind='bigan'")
    X = np.asarray(X, dtype=np.float64)
    bundle = new_bundle(config, X.shape[1])
    gx = default_gx(config) if gx is None else gx
    return bundle, run(bundle, X, gx=gx)


def train_baseline(config: TrainConfig, X):
    if config.model_kind == "bigan":
        raise ValueError("use train_bigan for model_kind='bigan'")
    X = np.asarray(X, dtype=np.float64)
    bundle = new_bundle(config, X.shape[1])
    return bundle, run(bundle, X)
