"""Dense-network engine with hand-written backward passes.

Layers keep parameters in ``params`` dicts; gradients are returned from
:meth:`DenseNet.backward` rather than stored, so one forward tape can be
back-propagated several times with different output gradients.
"""
from __future__ import annotations

import numpy as np

INIT_STD = 0.02


class NonFiniteError(FloatingPointError):
    pass


class Layer:
    kind = "layer"
    decayed = ()  # names of multiplicative weights

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    @property
    def in_dim(self):
        return None

    @property
    def out_dim(self):
        return None

    def init(self, rng):
        pass

    def forward(self, x, z, training):
        raise NotImplementedError

    def backward(self, cache, grad):
        """Return (param grads, input grad, latent grad or None)."""
        raise NotImplementedError


class Linear(Layer):
    kind = "linear"
    decayed = ("W",)

    def __init__(self, n_in, n_out):
        super().__init__()
        self.params["W"] = np.zeros((n_in, n_out))
        self.params["b"] = np.zeros(n_out)

    in_dim = property(lambda self: self.params["W"].shape[0])
    out_dim = property(lambda self: self.params["W"].shape[1])

    def init(self, rng):
        self.params["W"] = rng.normal(0.0, INIT_STD, self.params["W"].shape)
        self.params["b"] = np.zeros_like(self.params["b"])

    def forward(self, x, z, training):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, x, grad):
        grads = {"W": x.T @ grad, "b": grad.sum(axis=0)}
        return grads, grad @ self.params["W"].T, None


class LatentInject(Layer):
    """Adds a learned, bias-free projection of the latent code to its input."""

    kind = "latent_inject"
    decayed = ("W",)

    def __init__(self, latent_dim, hidden_dim):
        super().__init__()
        self.params["W"] = np.zeros((latent_dim, hidden_dim))

    in_dim = property(lambda self: self.params["W"].shape[1])
    out_dim = in_dim

    def init(self, rng):
        self.params["W"] = rng.normal(0.0, INIT_STD, self.params["W"].shape)

    def forward(self, x, z, training):
        if z is None:
            raise ValueError("latent_inject layer needs an auxiliary latent input")
        return x + z @ self.params["W"], z

    def backward(self, z, grad):
        return {"W": z.T @ grad}, grad, grad @ self.params["W"].T


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, dim, affine=False, eps=1e-5, momentum=0.9):
        super().__init__()
        self.dim = dim
        self.affine = affine
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        if affine:
            self.params["gamma"] = np.ones(dim)
            self.params["beta"] = np.zeros(dim)

    in_dim = property(lambda self: self.dim)
    out_dim = in_dim

    def init(self, rng):
        self.running_mean = np.zeros(self.dim)
        self.running_var = np.ones(self.dim)
        if self.affine:
            self.params["gamma"] = np.ones(self.dim)
            self.params["beta"] = np.zeros(self.dim)

    def forward(self, x, z, training):
        if training:
            if x.shape[0] < 2:
                raise ValueError("batch_norm in train mode needs a batch of at least 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        out = xhat * self.params["gamma"] + self.params["beta"] if self.affine else xhat
        return out, (xhat, inv_std, training)

    def backward(self, cache, grad):
        xhat, inv_std, training = cache
        grads = {}
        if self.affine:
            grads = {"gamma": (grad * xhat).sum(axis=0), "beta": grad.sum(axis=0)}
            grad = grad * self.params["gamma"]
        if not training:
            return grads, grad * inv_std, None
        gx = inv_std * (grad - grad.mean(axis=0) - xhat * (grad * xhat).mean(axis=0))
        return grads, gx, None


class Activation(Layer):
    kind = "activation"
    FUNCS = ("relu", "leaky_relu", "tanh", "sigmoid", "identity")

    def __init__(self, fn, slope=0.2):
        super().__init__()
        if fn not in self.FUNCS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn
        self.slope = slope

    def forward(self, x, z, training):
        fn = self.fn
        if fn == "relu":
            out = np.maximum(x, 0.0)
        elif fn == "leaky_relu":
            out = np.where(x > 0, x, self.slope * x)
        elif fn == "tanh":
            out = np.tanh(x)
        elif fn == "sigmoid":
            out = 0.5 * (1.0 + np.tanh(0.5 * x))
        else:
            out = x
        return out, (x, out)

    def backward(self, cache, grad):
        x, out = cache
        fn = self.fn
        if fn == "relu":
            g = grad * (x > 0)
        elif fn == "leaky_relu":
            g = np.where(x > 0, grad, self.slope * grad)
        elif fn == "tanh":
            g = grad * (1.0 - out * out)
        elif fn == "sigmoid":
            g = grad * out * (1.0 - out)
        else:
            g = grad
        return {}, g, None


class DenseNet:
    """Ordered stack of layers.

    ``feature_index`` marks the layer whose output serves as an
    intermediate representation (used for discriminator features).
    """

    def __init__(self, layers, name="net", feature_index=None):
        self.layers = list(layers)
        self.name = name
        self.feature_index = feature_index
        self.training = True
        dims = [(l.in_dim, l.out_dim) for l in self.layers]
        prev = None
        for i, (din, dout) in enumerate(dims):
            if din is not None and prev is not None and din != prev:
                raise ValueError(f"{name}: layer {i} expects {din} inputs, gets {prev}")
            prev = dout if dout is not None else prev

    @property
    def needs_latent(self):
        return any(isinstance(l, LatentInject) for l in self.layers)

    @property
    def in_dim(self):
        return next(l.in_dim for l in self.layers if l.in_dim is not None)

    @property
    def out_dim(self):
        return next(l.out_dim for l in reversed(self.layers) if l.out_dim is not None)

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def init_params(self, rng):
        for layer in self.layers:
            layer.init(rng)
        return self

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for key, value in layer.params.items():
                yield f"{i}.{key}", value

    def n_params(self):
        return sum(v.size for _, v in self.named_params())

    def forward(self, x, latent=None, *, training=None, until=None):
        """Run the stack; returns ``(output, tape)``.

        ``until`` stops after that many layers (for intermediate features).
        """
        training = self.training if training is None else training
        if self.needs_latent and latent is None:
            raise ValueError(f"{self.name} requires a latent input")
        if not self.needs_latent and latent is not None:
            raise ValueError(f"{self.name} takes no latent input")
        x = np.asarray(x, dtype=np.float64)
        tape = []
        layers = self.layers if until is None else self.layers[:until]
        for i, layer in enumerate(layers):
            x, cache = layer.forward(x, latent, training)
            if not np.isfinite(x).all():
                raise NonFiniteError(f"{self.name}: non-finite output at layer {i} ({layer.kind})")
            tape.append(cache)
        return x, (id(self), len(tape), tape)

    def backward(self, tape, grad):
        """Back-propagate ``grad`` through a forward tape.

        Returns (per-layer param grad dicts, input grad, latent grad or None).
        """
        owner, depth, caches = tape
        if owner != id(self):
            raise ValueError(f"{self.name}: tape was recorded by another network")
        param_grads = [dict() for _ in self.layers]
        latent_grad = None
        for i in range(depth - 1, -1, -1):
            pg, grad, lg = self.layers[i].backward(caches[i], grad)
            param_grads[i] = pg
            if lg is not None:
                latent_grad = lg if latent_grad is None else latent_grad + lg
        return param_grads, grad, latent_grad

    def predict(self, x, latent=None, batch_size=1024):
        """Inference-mode forward in batches."""
        x = np.asarray(x, dtype=np.float64)
        outs = []
        for s in range(0, len(x), batch_size):
            lat = None if latent is None else latent[s:s + batch_size]
            outs.append(self.forward(x[s:s + batch_size], lat, training=False)[0])
        return np.concatenate(outs, axis=0)


PRESETS = ("mnist_G", "mnist_E", "mnist_D_bigan", "mnist_D_gan", "mnist_AE")


def _two_hidden(name, n_in, n_out, hidden, act, out_act=None, latent_dim=None):
    def nonlin():
        return Activation(act, 0.2) if act == "leaky_relu" else Activation(act)

    layers = [Linear(n_in, hidden)]
    if latent_dim:
        layers.append(LatentInject(latent_dim, hidden))
    layers.append(nonlin())
    layers.append(Linear(hidden, hidden))
    if latent_dim:
        layers.append(LatentInject(latent_dim, hidden))
    layers += [BatchNorm(hidden), nonlin()]
    feature_index = len(layers)
    layers.append(Linear(hidden, n_out))
    if out_act:
        layers.append(Activation(out_act))
    return DenseNet(layers, name=name, feature_index=feature_index)


def build_preset(name, latent_dim=50, data_dim=784, hidden_dim=1024) -> DenseNet:
    """Two-hidden-layer MLPs used for every MNIST module."""
    if name in ("mnist_G", "mnist_AE"):
        return _two_hidden(name, latent_dim, data_dim, hidden_dim, "relu", "tanh")
    if name == "mnist_E":
        return _two_hidden(name, data_dim, latent_dim, hidden_dim, "leaky_relu")
    if name == "mnist_D_bigan":
        return _two_hidden(name, data_dim, 1, hidden_dim, "leaky_relu", latent_dim=latent_dim)
    if name == "mnist_D_gan":
        return _two_hidden(name, data_dim, 1, hidden_dim, "leaky_relu")
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")


def param_grad_pairs(net, grads):
    """Yield (layer, key, param, grad) for every parameter with a gradient."""
    for layer, g in zip(net.layers, grads):
        for key, value in layer.params.items():
            if key in g:
                yield layer, key, value, g[key]


def numeric_grad(f, array, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. ``array`` (mutated in place)."""
    out = np.zeros_like(array)
    flat = array.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return out


def relative_error(analytic, numeric, floor=1e-5):
    """Max elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps structurally zero gradients (a bias feeding batch
    normalization) from turning finite-difference round-off into huge ratios.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0
