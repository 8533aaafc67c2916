"""Scalar losses and their gradients for the adversarial and baseline models.

Every loss uses mean reduction. Gradient-returning losses hand back
:class:`LossValue` whose ``grads`` are keyed by the network head they feed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ENCODER_PAIR = "encoder_pair"
GENERATOR_PAIR = "generator_pair"


@dataclass
class PairBatch:
    """Joint (x, z) samples: (x, E(x)) from the encoder or (G(z), z) from the generator."""

    x: np.ndarray
    z: np.ndarray
    source: str

    def __post_init__(self):
        if self.source not in (ENCODER_PAIR, GENERATOR_PAIR):
            raise ValueError(f"unknown pair source {self.source!r}")
        if len(self.x) != len(self.z):
            raise ValueError("x and z batches must have equal size")


@dataclass
class LossValue:
    value: float
    grads: dict = field(default_factory=dict)


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_ce(logits, targets) -> LossValue:
    """Mean sigmoid cross entropy; ``grads['logits']`` is d loss / d logits."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.broadcast_to(np.asarray(targets, dtype=np.float64), logits.shape)
    if np.any(targets < 0) or np.any(targets > 1):
        raise ValueError("sigmoid_ce targets must lie in [0, 1]")
    # -[t log s(l) + (1-t) log(1-s(l))] = softplus(l) - t*l
    elementwise = np.logaddexp(0.0, logits) - targets * logits
    count = logits.size
    return LossValue(float(elementwise.mean()), {"logits": (sigmoid(logits) - targets) / count})


def bigan_value(d_logit_enc, d_logit_gen) -> float:
    """Monte-Carlo estimate of the minimax value from discriminator logits."""
    return float(np.mean(log_sigmoid(np.asarray(d_logit_enc)))
                 + np.mean(log_sigmoid(-np.asarray(d_logit_gen))))


def _joint_forward(D, batch_enc, batch_gen):
    x = np.concatenate([batch_enc.x, batch_gen.x])
    z = np.concatenate([batch_enc.z, batch_gen.z])
    logits, tape = D.forward(x, z)
    return logits, tape


def _labels(n_enc, n_gen, enc_target):
    return np.concatenate([np.full((n_enc, 1), enc_target), np.full((n_gen, 1), 1.0 - enc_target)])


def bigan_losses(D, batch_enc: PairBatch, batch_gen: PairBatch):
    """One discriminator pass over both pair batches, both losses from it.

    Returns ``(d_loss, ge_loss, logits)``. ``d_loss.grads['D']`` holds the
    discriminator parameter gradients. ``ge_loss.grads`` holds gradients with
    respect to the encoder output (``'E'``) and generator output (``'G'``);
    the discriminator parameter gradients of that loss are discarded.
    """
    n = len(batch_enc.x)
    logits, tape = _joint_forward(D, batch_enc, batch_gen)

    d_loss = sigmoid_ce(logits, _labels(n, len(batch_gen.x), 1.0))
    d_params, _, _ = D.backward(tape, d_loss.grads.pop("logits"))
    d_loss.grads["D"] = d_params

    ge_loss = sigmoid_ce(logits, _labels(n, len(batch_gen.x), 0.0))
    _, gx, gz = D.backward(tape, ge_loss.grads.pop("logits"))
    ge_loss.grads["E"] = gz[:n]
    ge_loss.grads["G"] = gx[n:]
    return d_loss, ge_loss, logits


def discriminator_loss(batch_enc, batch_gen, D) -> LossValue:
    """Targets 1 on encoder pairs, 0 on generator pairs; minimizing it ascends V."""
    return bigan_losses(D, batch_enc, batch_gen)[0]


def ge_inverse_loss(batch_enc, batch_gen, D) -> LossValue:
    """Label-swapped objective for the encoder and generator updates."""
    return bigan_losses(D, batch_enc, batch_gen)[1]


def gan_losses(x_real, x_gen, D):
    """Discriminator and non-saturating generator losses for an x-only D.

    ``d_loss.grads['D']`` are D's parameter gradients; ``g_loss.grads['G']``
    is the gradient with respect to ``x_gen``.
    """
    n = len(x_real)
    logits, tape = D.forward(np.concatenate([x_real, x_gen]))
    d_loss = sigmoid_ce(logits, _labels(n, len(x_gen), 1.0))
    d_loss.grads["D"] = D.backward(tape, d_loss.grads.pop("logits"))[0]

    # generator term only sees its own rows; normalize by the generated count
    gen_logits = logits[n:]
    g_loss = sigmoid_ce(gen_logits, 1.0)
    full = np.zeros_like(logits)
    full[n:] = g_loss.grads.pop("logits")
    g_loss.grads["G"] = D.backward(tape, full)[1][n:]
    return d_loss, g_loss


def latent_regressor_loss(e_logits, z) -> LossValue:
    """Sigmoid CE between encoder logits and the latent rescaled to [0, 1]."""
    loss = sigmoid_ce(e_logits, (np.asarray(z) + 1.0) / 2.0)
    loss.grads["E"] = loss.grads.pop("logits")
    return loss


def autoencoder_loss(x, x_hat, norm="l2") -> LossValue:
    diff = np.asarray(x_hat, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    if norm == "l2":
        return LossValue(float(np.mean(diff ** 2)), {"x_hat": 2.0 * diff / diff.size})
    if norm == "l1":
        return LossValue(float(np.mean(np.abs(diff))), {"x_hat": np.sign(diff) / diff.size})
    raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")
