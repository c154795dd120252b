"""Gaussian-encoder VAE: encoder/decoder pair, reparameterised sampling, likelihoods."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError, UnsupportedLikelihoodError
from .nn import DEFAULT_ACTIVATION, HIDDEN_LAYERS, HIDDEN_WIDTH, Mlp, init_mlp

LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 3.0
DECODER_SIGMA_FLOOR = 1e-3
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LIKELIHOODS = ("bernoulli", "gaussian")


@dataclass
class GaussianPosterior:
    mu: Tensor  # [batch, d]
    sigma: Tensor  # [batch, d]
    log_sigma: Tensor  # [batch, d], the clamped raw head

    @property
    def batch(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]


@dataclass
class VaeModel:
    encoder: Mlp
    decoder: Mlp
    latent_dim: int
    likelihood: str = "bernoulli"

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise ContractError(f"unknown likelihood {self.likelihood!r}")
        if self.encoder.dims[-1] != 2 * self.latent_dim:
            raise ContractError("encoder output width must be 2 * latent_dim")
        if self.decoder.dims[0] != self.latent_dim:
            raise ContractError("decoder input width must equal latent_dim")
        per_pixel = 2 if self.likelihood == "gaussian" else 1
        if self.decoder.dims[-1] != per_pixel * self.data_dim:
            raise ContractError("decoder output width does not match the likelihood")

    @property
    def data_dim(self) -> int:
        return self.encoder.dims[0]

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters()

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, net in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, layer in enumerate(net.layers):
                out[f"{prefix}.{i}.weight"] = layer.weight
                out[f"{prefix}.{i}.bias"] = layer.bias
        return out

    def snapshot(self) -> "VaeModel":
        """Deep copy of the parameters, detached from any optimizer."""
        clone = build_vae(self.data_dim, self.latent_dim, self.likelihood,
                          hidden=self.encoder.dims[1:-1], activation=self.encoder.activation,
                          decoder_hidden=self.decoder.dims[1:-1])
        for name, p in clone.named_parameters().items():
            p.data[...] = self.named_parameters()[name].data
        return clone


def build_vae(data_dim: int, latent_dim: int, likelihood: str = "bernoulli", *,
              hidden=None, decoder_hidden=None, activation: str = DEFAULT_ACTIVATION, seed: int = 0,
              zero_heads: bool = True) -> VaeModel:
    """Build encoder ``D -> hidden -> 2d`` and decoder ``d -> hidden -> D`` (or ``2D``).

    ``hidden`` defaults to five layers of 300 units. ``zero_heads`` zeroes the
    encoder's output layer so every input starts at ``mu = 0, sigma = 1``.
    """
    hidden = list([HIDDEN_WIDTH] * HIDDEN_LAYERS if hidden is None else hidden)
    decoder_hidden = list(hidden if decoder_hidden is None else decoder_hidden)
    per_pixel = 2 if likelihood == "gaussian" else 1
    ss = np.random.SeedSequence(seed)
    enc_seed, dec_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    encoder = init_mlp([data_dim] + hidden + [2 * latent_dim], activation, enc_seed)
    decoder = init_mlp([latent_dim] + decoder_hidden + [per_pixel * data_dim], activation, dec_seed)
    if zero_heads:
        encoder.layers[-1].weight.data[...] = 0.0
        encoder.layers[-1].bias.data[...] = 0.0
    return VaeModel(encoder, decoder, latent_dim, likelihood)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gaussian_head(out: Tensor, d: int) -> GaussianPosterior:
    """Split a ``[batch, 2d]`` head into ``mu`` and ``sigma = exp(clamp(s, -6, 3))``."""
    mu = out[:, :d]
    log_sigma = ad.clamp(out[:, d:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return GaussianPosterior(mu, ad.exp(log_sigma), log_sigma)


def encode(model: VaeModel, x) -> GaussianPosterior:
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != model.data_dim:
        raise ShapeError(f"encode expects [batch, {model.data_dim}], got {x.shape}")
    return gaussian_head(model.encoder(x), model.latent_dim)


def reparameterize(post: GaussianPosterior, seed, n_samples: int = 1) -> Tensor:
    """``z = mu + sigma * eps``; with ``n_samples > 1`` rows are sample-major blocks."""
    rng = _rng(seed)
    eps = rng.standard_normal((n_samples,) + post.mu.shape)
    if n_samples == 1:
        return ad.add(post.mu, ad.mul(post.sigma, Tensor(eps[0])))
    b, d = post.mu.shape
    mu = ad.reshape(ad.broadcast(post.mu, (n_samples, b, d)), (n_samples * b, d))
    sigma = ad.reshape(ad.broadcast(post.sigma, (n_samples, b, d)), (n_samples * b, d))
    return ad.add(mu, ad.mul(sigma, Tensor(eps.reshape(n_samples * b, d))))


def log_normal_diag(z, mu, log_sigma) -> Tensor:
    """Per-row ``log N(z; mu, exp(log_sigma)^2)`` summed over the last axis."""
    z, mu, log_sigma = ad.as_tensor(z), ad.as_tensor(mu), ad.as_tensor(log_sigma)
    resid = ad.mul(ad.sub(z, mu), ad.exp(ad.neg(log_sigma)))
    per_dim = ad.sub(ad.neg(ad.add(log_sigma, HALF_LOG_2PI)), ad.mul(0.5, ad.square(resid)))
    return ad.sum(per_dim, axis=-1)


def log_standard_normal(z) -> Tensor:
    z = ad.as_tensor(z)
    return ad.sum(ad.sub(-HALF_LOG_2PI, ad.mul(0.5, ad.square(z))), axis=-1)


def decode_gaussian(model: VaeModel, z) -> tuple[Tensor, Tensor]:
    """Decoder mean and per-pixel ``sigma_x = softplus(raw) + 1e-3``."""
    if model.likelihood != "gaussian":
        raise UnsupportedLikelihoodError(
            f"decoder Fisher information needs a continuous likelihood, model has {model.likelihood!r}")
    out = model.decoder(ad.as_tensor(z))
    dd = model.data_dim
    return out[:, :dd], ad.add(ad.softplus(out[:, dd:]), DECODER_SIGMA_FLOOR)


def _check_data(model: VaeModel, x: Tensor) -> None:
    if x.ndim != 2 or x.shape[1] != model.data_dim:
        raise ShapeError(f"expected data of shape [batch, {model.data_dim}], got {x.shape}")
    if model.likelihood == "bernoulli" and ((x.data < 0).any() or (x.data > 1).any()):
        raise ContractError("bernoulli likelihood needs data in [0, 1]")


def log_likelihood(model: VaeModel, x, z) -> Tensor:
    """``log p(x|z)`` per row. Rows of ``z`` may be a whole multiple of rows of ``x``."""
    x, z = ad.as_tensor(x), ad.as_tensor(z)
    _check_data(model, x)
    if z.ndim != 2 or z.shape[1] != model.latent_dim:
        raise ShapeError(f"z must be [batch, {model.latent_dim}], got {z.shape}")
    reps, rem = divmod(z.shape[0], x.shape[0])
    if rem or reps == 0:
        raise ShapeError(f"z batch {z.shape[0]} is not a multiple of x batch {x.shape[0]}")
    xt = x if reps == 1 else Tensor(np.tile(x.data, (reps, 1)))
    if model.likelihood == "bernoulli":
        logits = model.decoder(z)
        # x log p + (1 - x) log(1 - p) == x * l - softplus(l) for p = sigmoid(l)
        return ad.sum(ad.sub(ad.mul(xt, logits), ad.softplus(logits)), axis=1)
    mean, sigma_x = decode_gaussian(model, z)
    resid = ad.div(ad.sub(xt, mean), sigma_x)
    per_pixel = ad.neg(ad.add(ad.add(ad.log(sigma_x), HALF_LOG_2PI), ad.mul(0.5, ad.square(resid))))
    return ad.sum(per_pixel, axis=1)


def decoder_fisher_trace(model: VaeModel, z) -> Tensor:
    """Batch mean of ``sum_D 1 / sigma_x(z)^2`` (scalar tensor)."""
    _, sigma_x = decode_gaussian(model, z)
    return ad.mean(ad.sum(ad.div(1.0, ad.square(sigma_x)), axis=1))


def encoder_fisher_trace(post: GaussianPosterior) -> Tensor:
    """Batch mean of ``sum_d 1 / sigma_d^2`` (scalar tensor)."""
    return ad.mean(ad.sum(ad.exp(ad.mul(-2.0, post.log_sigma)), axis=1))
