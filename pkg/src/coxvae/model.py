"""CoxVAE objective: beta-ELBO, Cox partial likelihood and their tau-mixture."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, DomainError
from .network import DecoderNet, EncoderNet, Linear


@dataclass
class LatentGaussian:
    """Diagonal Gaussian posterior q(z|x) per sample."""

    mu: ad.Tensor
    logvar: ad.Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise DimensionError(f"mu {self.mu.shape} and logvar {self.logvar.shape} differ")


@dataclass
class SurvivalBatch:
    x: np.ndarray
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.time = np.asarray(self.time, dtype=np.float64)
        self.event = np.asarray(self.event, dtype=np.int64)
        if not (len(self.x) == len(self.time) == len(self.event)):
            raise DimensionError("batch components have different lengths")
        if np.any(self.time <= 0):
            raise DomainError("survival times must be strictly positive")


@dataclass
class LossReport:
    total: float
    recon_nll: float
    kl: float
    cox_nll: float
    n_events_in_batch: int


def reparameterize(lg, eps):
    """z = mu + exp(logvar / 2) * eps. ``eps`` is treated as a constant."""
    eps = np.asarray(eps.data if isinstance(eps, ad.Tensor) else eps, dtype=np.float64)
    if eps.shape != lg.mu.shape:
        raise DimensionError(f"eps shape {eps.shape} does not match latent shape {lg.mu.shape}")
    sigma = ad.exp(ad.scale(lg.logvar, 0.5))
    return ad.add(lg.mu, ad.mul(sigma, eps))


def kl_divergence(lg):
    """KL(q || N(0, I)), summed over latent dims and averaged over the batch."""
    mu, logvar = lg.mu, lg.logvar
    per_elem = ad.sub(ad.add(ad.mul(mu, mu), ad.exp(logvar)), ad.add(logvar, 1.0))
    return ad.scale(ad.sum(per_elem), 0.5 / mu.shape[0])


def recon_nll(logits, x, likelihood="bernoulli"):
    """Reconstruction negative log-likelihood per sample (mean over batch).

    ``bernoulli`` uses the logits form ``softplus(l) - x * l``. ``gaussian``
    is unit-variance Gaussian on ``sigmoid(l)`` up to the additive constant,
    i.e. half the summed squared error.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != logits.shape:
        raise DimensionError(f"logits {logits.shape} and target {x.shape} differ")
    batch = x.shape[0]
    if likelihood == "bernoulli":
        if np.any(x < 0) or np.any(x > 1):
            raise DomainError("Bernoulli reconstruction targets must lie in [0, 1]")
        per_pixel = ad.sub(ad.softplus(logits), ad.mul(logits, x))
        return ad.scale(ad.sum(per_pixel), 1.0 / batch)
    if likelihood == "gaussian":
        diff = ad.sub(ad.sigmoid(logits), x)
        return ad.scale(ad.sum(ad.mul(diff, diff)), 0.5 / batch)
    raise ConfigError(f"unknown likelihood {likelihood!r}", "likelihood")


def elbo_loss(lg, logits, x, beta=1.0, likelihood="bernoulli"):
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}", "beta")
    rec = recon_nll(logits, x, likelihood)
    return ad.add(rec, ad.scale(kl_divergence(lg), beta))


def cox_head(psi, z):
    """Log-hazard per sample from a bias-free linear layer: ``r = z psi^T``."""
    if psi.bias is not None:
        raise ConfigError("the Cox head must not have a bias", "cox_head")
    out = psi(ad._as_tensor(z))
    return ad.reshape(out, (out.shape[0],))


def _risk_structure(time, event):
    """Descending-time order and, per sorted position, the last index of its tie group."""
    time = np.asarray(time, dtype=np.float64)
    order = np.argsort(-time, kind="stable")
    ts = time[order]
    n = len(ts)
    # positions where the next time differs close a tie group
    closes = np.append(ts[1:] != ts[:-1], True)
    ends = np.flatnonzero(closes)
    group_end = ends[np.searchsorted(ends, np.arange(n))]
    return order, group_end


def cox_partial_nll(r, time, event):
    """Negative Cox partial log-likelihood averaged over events (Breslow ties).

    Returns ``(loss, n_events)``. With no events the loss is a constant
    zero tensor and ``n_events == 0``; callers must not backpropagate it.
    """
    r = ad._as_tensor(r)
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] != len(time) or len(time) != len(event):
        raise DimensionError(f"log-hazards {r.shape}, times {time.shape}, events {event.shape} differ")
    if len(time) == 0:
        raise DimensionError("empty batch")
    if np.any(time <= 0):
        raise DomainError("survival times must be strictly positive")
    n_events = int(event.sum())
    if n_events == 0:
        return ad.Tensor(0.0), 0
    order, group_end = _risk_structure(time, event)
    r_sorted = ad.take(r, order)
    log_risk = ad.take(ad.cumlogsumexp(r_sorted), group_end)
    terms = ad.mul(ad.sub(r_sorted, log_risk), event[order])
    return ad.scale(ad.sum(terms), -1.0 / n_events), n_events


def combined_loss(elbo, cox_nll, tau):
    """tau * elbo + (1 - tau) * cox_nll."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}", "tau")
    return ad.add(ad.scale(elbo, tau), ad.scale(cox_nll, 1.0 - tau))


def hazard_ratio(weight):
    """Hazard multiplier per unit latent change and its percent change."""
    ratio = math.exp(weight)
    return ratio, 100.0 * (ratio - 1.0)


class CoxVAE:
    """Encoder, decoder and bias-free linear Cox head sharing one latent space."""

    def __init__(self, n_pixels, latent_dim=8, width=128, n_blocks=4, seed=0,
                 zero_init_residual=False, likelihood="bernoulli"):
        rng = np.random.default_rng(seed)
        self.n_pixels = n_pixels
        self.latent_dim = latent_dim
        self.likelihood = likelihood
        self.encoder = EncoderNet(n_pixels, latent_dim, width, n_blocks, rng, zero_init_residual)
        self.decoder = DecoderNet(n_pixels, latent_dim, width, n_blocks, rng, zero_init_residual)
        self.cox = Linear(latent_dim, 1, rng, bias=False)

    def vae_parameters(self):
        """Encoder and decoder parameters, keyed by qualified name."""
        params = self.encoder.named_parameters("encoder.")
        params.update(self.decoder.named_parameters("decoder."))
        return params

    def cox_parameters(self):
        return self.cox.named_parameters("cox.")

    def named_parameters(self):
        params = self.vae_parameters()
        params.update(self.cox_parameters())
        return params

    @property
    def cox_weights(self):
        return self.cox.weight.data[0].copy()

    def encode(self, x):
        mu, logvar = self.encoder(ad._as_tensor(x))
        return LatentGaussian(mu, logvar)

    def decode(self, z):
        return self.decoder(ad._as_tensor(z))

    def risk(self, z):
        return cox_head(self.cox, z)

    def loss(self, batch, eps, tau=0.2, beta=1.0):
        """Forward pass on one batch. Returns ``(total_tensor, LossReport)``."""
        if not 0.0 <= tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {tau}", "tau")
        lg = self.encode(batch.x)
        z = reparameterize(lg, eps)
        logits = self.decode(z)
        rec = recon_nll(logits, batch.x, self.likelihood)
        kl = kl_divergence(lg)
        elbo = ad.add(rec, ad.scale(kl, beta))
        r = self.risk(z)
        cox, n_events = cox_partial_nll(r, batch.time, batch.event)
        if n_events == 0:
            total = ad.scale(elbo, tau)
        else:
            total = combined_loss(elbo, cox, tau)
        report = LossReport(total.item(), rec.item(), kl.item(), cox.item(), n_events)
        return total, report
