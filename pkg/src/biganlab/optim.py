from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def lr_at(epoch, total_epochs, alpha0=2e-4, alpha_final=2e-6):
    """Constant for the first half, then geometric decay reaching ``alpha_final`` on the last epoch."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    half = total_epochs / 2
    if epoch < half:
        return alpha0
    frac = (epoch - half + 1) / half
    return alpha0 * (alpha_final / alpha0) ** frac


def adam_step(net, grads, state, lr, beta1=0.5, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """In-place Adam update of ``net`` from per-layer gradient dicts.

    Coupled L2 decay is added to the gradient of multiplicative weights only.
    """
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i, (layer, g) in enumerate(zip(net.layers, grads)):
        for key, grad in g.items():
            param = layer.params[key]
            if grad.shape != param.shape:
                raise ValueError(f"{net.name} layer {i} {key}: grad {grad.shape} vs param {param.shape}")
            if weight_decay and key in layer.decayed:
                grad = grad + weight_decay * param
            name = f"{i}.{key}"
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = np.zeros_like(param)
                state.v[name] = np.zeros_like(param)
            v = state.v[name]
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
