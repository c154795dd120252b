"""ELBO, closed-form KL, the Fisher-constrained (FAE) and mutual-information (MAE) objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, UnsupportedLikelihoodError
from .info import LOG_2PI_E
from .nn import DEFAULT_ACTIVATION, Mlp, init_mlp
from .vae import (GaussianPosterior, VaeModel, decoder_fisher_trace, encode, encoder_fisher_trace,
                  gaussian_head, log_likelihood, log_normal_diag, reparameterize)


@dataclass
class FaeConfig:
    """Lagrange weights and per-dimension Fisher-information targets."""

    lambda_z: float = 1.0
    lambda_x: float = 0.0
    f_z: float = 1.0
    f_x: float = 1.0
    likelihood: str = "bernoulli"
    n_samples: int = 1

    def validate(self, likelihood: str | None = None) -> None:
        lik = likelihood or self.likelihood
        for name in ("lambda_z", "lambda_x", "f_z", "f_x"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.lambda_x > 0 and lik != "gaussian":
            raise UnsupportedLikelihoodError(
                f"lambda_x > 0 needs the diag-gaussian likelihood; decoder Fisher information "
                f"is undefined for {lik!r} data")


@dataclass
class MaeConfig:
    c: float = 1.0
    m: float = 0.0
    aux: Mlp | None = None
    n_samples: int = 1

    def validate(self, model: VaeModel) -> None:
        if not (self.c >= 0 and self.m >= 0):
            raise ConfigError("MAE weight c and target m must be >= 0")
        if self.aux is None:
            raise ConfigError("MAE needs an auxiliary network r(z|x)")
        if self.aux.dims[0] != model.data_dim or self.aux.dims[-1] != 2 * model.latent_dim:
            raise ConfigError(
                f"aux network dims {self.aux.dims[0]}->{self.aux.dims[-1]} do not match "
                f"{model.data_dim}->{2 * model.latent_dim}")


def init_aux(model: VaeModel, hidden=None, seed: int = 0, activation: str = DEFAULT_ACTIVATION) -> Mlp:
    """Auxiliary ``r(z|x)`` network shaped like the encoder."""
    hidden = list(model.encoder.dims[1:-1] if hidden is None else hidden)
    return init_mlp([model.data_dim] + hidden + [2 * model.latent_dim], activation, seed)


@dataclass
class LossReport:
    """Per-example averages in nats. ``fi_term_*`` and ``mi_term`` include their weights."""

    elbo: float
    recon: float
    kl: float
    fi_term_z: float = 0.0
    fi_term_x: float = 0.0
    mi_term: float = 0.0
    total: float = 0.0
    fisher_z: float = float("nan")  # batch-mean tr J(z|x) / d
    fisher_x: float = float("nan")
    mi_estimate: float = float("nan")
    loss: Tensor | None = field(default=None, repr=False, compare=False)

    LOG_KEYS = ("elbo", "recon", "kl", "fi_term_z", "fi_term_x", "mi_term", "total")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.LOG_KEYS}


def kl_to_standard_normal(post: GaussianPosterior) -> Tensor:
    """Per-example ``KL(N(mu, sigma^2) || N(0, I))`` in closed form."""
    two_log_sigma = ad.mul(2.0, post.log_sigma)
    inner = ad.sub(ad.add(ad.square(post.mu), ad.exp(two_log_sigma)), ad.add(two_log_sigma, 1.0))
    return ad.mul(0.5, ad.sum(inner, axis=1))


def _elbo_terms(model: VaeModel, x: Tensor, post: GaussianPosterior, seed, n_samples: int):
    z = reparameterize(post, seed, n_samples)
    ll = log_likelihood(model, x, z)
    recon = ad.mean(ll) if n_samples == 1 else ad.div(ad.sum(ll), float(ll.shape[0]))
    kl = ad.mean(kl_to_standard_normal(post))
    return z, recon, kl


def fae_loss(model: VaeModel, x, cfg: FaeConfig, seed) -> LossReport:
    """``-ELBO + lambda_z |trJ_z/d - F_z| + lambda_x |trJ_x/D - F_x|``."""
    cfg.validate(model.likelihood)
    x = ad.as_tensor(x)
    post = encode(model, x)
    z, recon, kl = _elbo_terms(model, x, post, seed, cfg.n_samples)
    neg_elbo = ad.sub(kl, recon)
    total = neg_elbo
    fisher_z = ad.div(encoder_fisher_trace(post), float(model.latent_dim))
    fi_z = ad.mul(cfg.lambda_z, ad.abs(ad.sub(fisher_z, cfg.f_z)))
    total = ad.add(total, fi_z)
    fi_x_val, fisher_x_val = 0.0, float("nan")
    if model.likelihood == "gaussian":
        fisher_x = ad.div(decoder_fisher_trace(model, z), float(model.data_dim))
        fisher_x_val = fisher_x.item()
        if cfg.lambda_x > 0:
            fi_x = ad.mul(cfg.lambda_x, ad.abs(ad.sub(fisher_x, cfg.f_x)))
            total = ad.add(total, fi_x)
            fi_x_val = fi_x.item()
    return LossReport(elbo=-neg_elbo.item(), recon=recon.item(), kl=kl.item(),
                      fi_term_z=fi_z.item(), fi_term_x=fi_x_val, mi_term=0.0,
                      total=total.item(), fisher_z=fisher_z.item(), fisher_x=fisher_x_val, loss=total)


def mixture_entropy(z, post: GaussianPosterior) -> Tensor:
    """Minibatch estimate ``-mean_i log((1/B) sum_j N(z_i; mu_j, sigma_j^2))`` of ``H(z)``."""
    z = ad.as_tensor(z)
    b, d = post.mu.shape
    if b == 0:
        raise ContractError("empty batch")
    zi = ad.reshape(z, (b, 1, d))
    mu = ad.reshape(post.mu, (1, b, d))
    ls = ad.reshape(post.log_sigma, (1, b, d))
    pair = log_normal_diag(zi, mu, ls)  # [b, b]
    return ad.neg(ad.mean(ad.sub(ad.logsumexp(pair, axis=1), math.log(b))))


def mae_loss(model: VaeModel, x, cfg: MaeConfig, seed) -> LossReport:
    """``-ELBO + C |I_hat - M|`` with ``I_hat = H_hat(z) + mean log r(z|x)``.

    ``loss`` also carries ``-mean log r(z|x)`` for the auxiliary network, wired so
    the auxiliary parameters see only that term and the VAE sees only the rest.
    """
    cfg.validate(model)
    x = ad.as_tensor(x)
    if x.shape[0] == 0:
        raise ContractError("empty batch")
    post = encode(model, x)
    z, recon, kl = _elbo_terms(model, x, post, seed, 1)
    neg_elbo = ad.sub(kl, recon)

    r = gaussian_head(cfg.aux(x), model.latent_dim)
    # VAE path: auxiliary outputs frozen, gradient reaches phi through z and H_hat
    log_r_main = log_normal_diag(z, Tensor(r.mu.data), Tensor(r.log_sigma.data))
    mi = ad.add(mixture_entropy(z, post), ad.mean(log_r_main))
    mi_term = ad.mul(cfg.c, ad.abs(ad.sub(mi, cfg.m)))
    total = ad.add(neg_elbo, mi_term)
    # auxiliary path: z frozen
    aux_loss = ad.neg(ad.mean(log_normal_diag(Tensor(z.data), r.mu, r.log_sigma)))
    return LossReport(elbo=-neg_elbo.item(), recon=recon.item(), kl=kl.item(),
                      mi_term=mi_term.item(), total=total.item(),
                      fisher_z=encoder_fisher_trace(post).item() / model.latent_dim,
                      mi_estimate=mi.item(), loss=ad.add(total, aux_loss))


def vae_loss(model: VaeModel, x, seed, n_samples: int = 1) -> LossReport:
    """Plain negative ELBO."""
    return fae_loss(model, x, FaeConfig(lambda_z=0.0, lambda_x=0.0, likelihood=model.likelihood,
                                        n_samples=n_samples), seed)


@dataclass(frozen=True)
class TradeoffReport:
    fi_coord: float  # log mean(trJ / d)
    entropy_coord: float  # -2 mean H(z|x) / d + log(2 pi e)
    gap: float  # fi_coord - entropy_coord, >= 0 by Jensen


def fi_entropy_tradeoff_report(sigma) -> TradeoffReport:
    """Compare the Fisher-information and conditional-entropy views of a posterior batch.

    For a shared sigma the two coordinates coincide; heterogeneous sigmas open
    a nonnegative Jensen gap.
    """
    s = np.asarray(sigma.data if isinstance(sigma, Tensor) else sigma, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    d = s.shape[1]
    fi = math.log(np.mean((1.0 / s ** 2).sum(axis=1)) / d)
    h = 0.5 * d * LOG_2PI_E + np.log(s).sum(axis=1)
    ent = -2.0 * float(np.mean(h)) / d + LOG_2PI_E
    return TradeoffReport(fi, ent, fi - ent)
