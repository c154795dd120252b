"""Held-out evaluation: importance-sampled NLL and Fisher-Shannon trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .info import InfoPoint, fs_point_from_sigma
from .objectives import kl_to_standard_normal
from .vae import VaeModel, encode, log_likelihood, log_normal_diag, log_standard_normal, reparameterize

DEFAULT_K = 5000
BOOTSTRAP_RESAMPLES = 200


@dataclass(frozen=True)
class NllEstimate:
    nll: float
    num_importance_samples: int
    std_err: float
    per_example: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.num_importance_samples < 1:
            raise ContractError("num_importance_samples must be >= 1")
        if not math.isfinite(self.nll):
            raise NumericError("non-finite NLL estimate")


class StreamingMoments:
    """Mergeable count/mean/M2 accumulator (Chan et al. pairwise update)."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values) -> "StreamingMoments":
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size:
            other = StreamingMoments()
            other.n, other.mean = v.size, float(v.mean())
            other.m2 = float(((v - other.mean) ** 2).sum())
            self.merge(other)
        return self

    def merge(self, other: "StreamingMoments") -> "StreamingMoments":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean += delta * other.n / n
        self.m2 += other.m2 + delta * delta * self.n * other.n / n
        self.n = n
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0


def bootstrap_std_err(values, n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> float:
    """Nonparametric bootstrap standard error of the mean."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, v.size, size=(n_resamples, v.size))
    return float(v[idx].mean(axis=1).std(ddof=1))


def _chunk_size(model: VaeModel, k: int, budget: int = 1 << 22) -> int:
    per_example = k * max(model.data_dim, 1) * 4
    return max(1, budget // per_example)


def _example_noise(seed: int, start: int, b: int, k: int, d: int) -> np.ndarray:
    """``[k, b, d]`` standard normals, one independent stream per example index."""
    eps = np.empty((k, b, d))
    for i in range(b):
        eps[:, i, :] = np.random.default_rng([seed, start + i]).standard_normal((k, d))
    return eps


def log_importance_weights(model: VaeModel, x: np.ndarray, k: int, seed, chunk: int | None = None) -> np.ndarray:
    """``log p(x|z_k) + log p(z_k) - log q(z_k|x)`` for ``k`` posterior draws per row -> ``[n, k]``.

    Each example draws from its own stream seeded by ``(seed, row index)``, so
    the result does not depend on ``chunk``.
    """
    if k < 1:
        raise ContractError("need at least one importance sample")
    x = np.asarray(x, dtype=np.float64)
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    chunk = chunk or _chunk_size(model, k)
    d = model.latent_dim
    out = np.empty((x.shape[0], k))
    for start in range(0, x.shape[0], chunk):
        xb = x[start:start + chunk]
        b = xb.shape[0]
        post = encode(model, xb)
        mu = np.broadcast_to(post.mu.data, (k, b, d)).reshape(k * b, d)
        ls = np.broadcast_to(post.log_sigma.data, (k, b, d)).reshape(k * b, d)
        z = mu + np.exp(ls) * _example_noise(seed, start, b, k, d).reshape(k * b, d)  # sample-major
        ll = log_likelihood(model, xb, z).data.reshape(k, b)
        lp = log_standard_normal(z).data.reshape(k, b)
        lq = log_normal_diag(z, mu, ls).data.reshape(k, b)
        out[start:start + b] = (ll + lp - lq).T
    bad = np.flatnonzero(~np.isfinite(out).all(axis=1))
    if bad.size:
        raise NumericError(f"non-finite importance weight for example {int(bad[0])}")
    return out


def log_mean_exp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (np.log(np.exp(a - m).mean(axis=axis, keepdims=True)) + m).squeeze(axis)


def iwae_nll(model: VaeModel, data, k: int = DEFAULT_K, seed=0, chunk: int | None = None,
             bootstrap_seed: int = 0) -> NllEstimate:
    """Importance-weighted estimate of ``-log p(x)``, averaged over examples (nats)."""
    lw = log_importance_weights(model, data, k, seed, chunk)
    per = -log_mean_exp(lw, axis=1)
    stats = StreamingMoments().update(per)
    return NllEstimate(stats.mean, k, bootstrap_std_err(per, seed=bootstrap_seed), per)


def elbo_estimate(model: VaeModel, data, seed=0, chunk: int | None = None) -> float:
    """Single-sample Monte-Carlo ELBO with the same draws ``iwae_nll(k=1)`` uses."""
    return float(log_importance_weights(model, data, 1, seed, chunk).mean())


def analytic_elbo(model: VaeModel, data, seed=0, chunk: int = 1000) -> float:
    """Single-sample ELBO with the KL term in closed form."""
    data = np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng(seed)
    total = 0.0
    for start in range(0, data.shape[0], chunk):
        xb = data[start:start + chunk]
        post = encode(model, xb)
        z = reparameterize(post, rng)
        total += float((log_likelihood(model, xb, z).data - kl_to_standard_normal(post).data).sum())
    return total / data.shape[0]


def posterior_sigma(model: VaeModel, data, chunk: int = 2000) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    return np.concatenate([encode(model, data[i:i + chunk]).sigma.data
                           for i in range(0, data.shape[0], chunk)])


@dataclass(frozen=True)
class FsEntry:
    epoch: int
    point: InfoPoint
    elbo: float


@dataclass
class FsTrace:
    entries: list[FsEntry] = field(default_factory=list)

    def append(self, entry: FsEntry) -> None:
        if self.entries and entry.epoch <= self.entries[-1].epoch:
            raise ContractError(f"epoch {entry.epoch} does not follow {self.entries[-1].epoch}")
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def epochs(self) -> list[int]:
        return [e.epoch for e in self.entries]


def fs_trace_record(model: VaeModel, epoch: int, eval_set, trace: FsTrace | None = None,
                    seed: int = 0) -> FsEntry:
    """Encode ``eval_set``, compute its FS point and ELBO, and append to ``trace``."""
    eval_set = np.asarray(eval_set, dtype=np.float64)
    if eval_set.shape[0] == 0:
        raise ContractError("empty evaluation set")
    point = fs_point_from_sigma(posterior_sigma(model, eval_set))
    entry = FsEntry(int(epoch), point, analytic_elbo(model, eval_set, seed))
    if trace is not None:
        trace.append(entry)
    return entry
