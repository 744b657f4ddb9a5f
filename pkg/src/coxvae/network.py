"""Layers, residual MLP encoder/decoder, and the Adam optimizer."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, TrainingError

LEAKY_SLOPE = 0.01
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


def glorot_uniform(rng, fan_out, fan_in):
    """Weights drawn from U(-b, b) with b = sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ConfigError(f"layer widths must be positive, got {fan_in}->{fan_out}", "width")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Module:
    """Anything holding named parameter tensors."""

    def named_parameters(self, prefix=""):
        params = OrderedDict()
        for name, value in vars(self).items():
            if isinstance(value, ad.Tensor) and value.requires_grad:
                params[prefix + name] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return params

    def parameters(self):
        return list(self.named_parameters().values())


class Linear(Module):
    """``y = x W^T + b`` with weight ``[out x in]`` and optional bias ``[out]``."""

    def __init__(self, n_in, n_out, rng, bias=True, zero=False):
        if n_in <= 0 or n_out <= 0:
            raise ConfigError(f"layer widths must be positive, got {n_in}->{n_out}", "width")
        w = np.zeros((n_out, n_in)) if zero else glorot_uniform(rng, n_out, n_in)
        self.weight = ad.Tensor(w, requires_grad=True)
        self.bias = ad.Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"linear: input shape {x.shape} does not match weight {self.weight.shape}")
        y = ad.matmul(x, ad.transpose(self.weight))
        if self.bias is not None:
            y = ad.add_row(y, self.bias)
        return y


class ResidualBlock(Module):
    """x + L2(leaky(L1(x))).

    With ``zero_init=True`` the second layer starts at zero, so the block
    is exactly the identity at initialization.
    """

    def __init__(self, width, rng, zero_init=False):
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, width, rng, zero=zero_init)

    def __call__(self, x):
        h = ad.leaky_relu(self.fc1(x), LEAKY_SLOPE)
        return ad.add(x, self.fc2(h))


class EncoderNet(Module):
    def __init__(self, n_pixels, latent_dim=8, width=128, n_blocks=4, rng=None, zero_init=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_pixels = n_pixels
        self.latent_dim = latent_dim
        self.inp = Linear(n_pixels, width, rng)
        self.blocks = [ResidualBlock(width, rng, zero_init) for _ in range(n_blocks)]
        self.mu_head = Linear(width, latent_dim, rng)
        self.logvar_head = Linear(width, latent_dim, rng)

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_pixels:
            raise DimensionError(f"encoder expects [B x {self.n_pixels}] input, got {x.shape}")
        h = ad.leaky_relu(self.inp(x), LEAKY_SLOPE)
        for block in self.blocks:
            h = block(h)
        mu = self.mu_head(h)
        logvar = ad.clamp(self.logvar_head(h), LOGVAR_MIN, LOGVAR_MAX)
        return mu, logvar


class DecoderNet(Module):
    def __init__(self, n_pixels, latent_dim=8, width=128, n_blocks=4, rng=None, zero_init=False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_pixels = n_pixels
        self.latent_dim = latent_dim
        self.inp = Linear(latent_dim, width, rng)
        self.blocks = [ResidualBlock(width, rng, zero_init) for _ in range(n_blocks)]
        self.out = Linear(width, n_pixels, rng)

    def __call__(self, z):
        """Per-pixel logits ``[B x P]``; the image is ``sigmoid(logits)``."""
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise DimensionError(f"decoder expects [B x {self.latent_dim}] latents, got {z.shape}")
        h = ad.leaky_relu(self.inp(z), LEAKY_SLOPE)
        for block in self.blocks:
            h = block(h)
        return self.out(h)


def encoder_forward(net, x):
    return net(ad._as_tensor(x))


def decoder_forward(net, z):
    return net(ad._as_tensor(z))


class AdamState:
    """Adam with bias correction over a named parameter dict."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = OrderedDict()
        self.v = OrderedDict()

    def step(self, params, grads=None):
        """Update ``params`` (name -> Tensor) in place.

        ``grads`` defaults to each tensor's ``.grad``; a missing gradient
        counts as zero.
        """
        if grads is None:
            grads = {k: p.grad for k, p in params.items()}
        checked = {}
        for name, p in params.items():
            g = grads.get(name)
            g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}", param=name)
            checked[name] = g
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = checked[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state, params, grads=None):
    state.step(params, grads)
