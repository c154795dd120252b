"""Fully connected networks and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, NumericError

ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu, "softplus": ad.softplus}

HIDDEN_WIDTH = 300
HIDDEN_LAYERS = 5
DEFAULT_ACTIVATION = "relu"


@dataclass
class LinearLayer:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ContractError(
                f"linear layer shapes disagree: weight {self.weight.shape}, bias {self.bias.shape}")

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, ad.transpose(self.weight)), self.bias)


@dataclass
class Mlp:
    layers: list[LinearLayer]
    activation: str = DEFAULT_ACTIVATION

    def __post_init__(self):
        if not self.layers:
            raise ContractError("an MLP needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_features != nxt.in_features:
                raise ContractError("consecutive layer dimensions do not chain")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_features] + [layer.out_features for layer in self.layers]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = act(h)
        return h


def init_mlp(dims: Sequence[int], activation: str = DEFAULT_ACTIVATION, seed: int = 0) -> Mlp:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    dims = list(dims)
    if len(dims) < 2 or any(int(d) != d or d <= 0 for d in dims):
        raise ContractError(f"init_mlp needs >= 2 positive integer dims, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=(fan_out, fan_in))
        layers.append(LinearLayer(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)))
    return Mlp(layers, activation)


def hidden_dims(n_in: int, n_out: int, depth: int = HIDDEN_LAYERS, width: int = HIDDEN_WIDTH) -> list[int]:
    """``depth`` hidden layers of ``width`` units between the input and output projections."""
    return [n_in] + [width] * depth + [n_out]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float = 1e-3, **kw) -> "AdamState":
        ids = [id(p) for p in params]
        if len(set(ids)) != len(ids):
            raise ContractError("a parameter was registered with the optimizer more than once")
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params], lr=lr, **kw)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. ``None`` grads count as zero."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractError("params, grads and optimizer state lengths differ")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and np.shape(g) != p.shape:
            raise ContractError(f"gradient {i} has shape {np.shape(g)}, parameter has {p.shape}")
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {i} {p.name or ''}".rstrip())
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = 1e-3
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.for_params(self.params, lr=self.lr)

    def step(self, grads: Sequence[np.ndarray | None] | None = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(grads: Sequence[np.ndarray | None], max_norm: float) -> tuple[list, float, bool]:
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``."""
    sq = 0.0
    for g in grads:
        if g is not None:
            sq += float(np.dot(g.ravel(), g.ravel()))
    norm = float(np.sqrt(sq))
    if norm <= max_norm:
        return list(grads), norm, False
    scale = max_norm / norm
    return [None if g is None else g * scale for g in grads], norm, True
