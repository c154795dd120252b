"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FD_STEP = 1e-5
KINK_MARGIN = 1e-4
REL_TOL = 1e-4


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """``|a - b| / max(|a| + |b|, floor)`` in the Euclidean norm."""
    a = np.ravel(a)
    b = np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


def numeric_grad(f: Callable[[], float], arrays: Sequence[np.ndarray], h: float = FD_STEP) -> list[np.ndarray]:
    """Central differences of ``f()`` with respect to each array, perturbed in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def tape_grad(loss: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    with ad.Tape() as tape:
        root = loss()
    tape.backward(root)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


@dataclass
class GradCase:
    op: str
    inputs: list[Tensor]
    build: Callable[..., Tensor]  # maps the input tensors to the op output

    def loss(self, weights: np.ndarray) -> Tensor:
        out = self.build(*self.inputs)
        return ad.sum(ad.mul(out, Tensor(weights)))


def _shape(rng, max_side=4, ndim=2):
    return tuple(int(rng.integers(1, max_side + 1)) for _ in range(ndim))


def _away_from(x: np.ndarray, points, margin: float) -> np.ndarray:
    for p in points:
        near = np.abs(x - p) < margin
        x = np.where(near, p + np.where(x >= p, margin, -margin) * 10.0, x)
    return x


def random_case(op: str, rng: np.random.Generator) -> GradCase:
    """A random instance of ``op`` on small tensors with entries in [-2, 2]."""
    s = _shape(rng)

    def u(shape, lo=-2.0, hi=2.0):
        return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)

    if op == "matmul":
        k = int(rng.integers(1, 5))
        a, b = u((s[0], k)), u((k, s[1]))
        return GradCase(op, [a, b], ad.matmul)
    if op in ("add", "sub", "mul"):
        # second operand sometimes broadcasts along a row
        b_shape = s if rng.random() < 0.5 else (1, s[1])
        return GradCase(op, [u(s), u(b_shape)], ad.OPS[op])
    if op == "div":
        den = rng.uniform(0.5, 2.0, size=s) * rng.choice([-1.0, 1.0], size=s)
        return GradCase(op, [u(s), Tensor(den, requires_grad=True)], ad.div)
    if op == "log":
        return GradCase(op, [u(s, 0.1, 2.0)], ad.log)
    if op == "sqrt":
        return GradCase(op, [u(s, 0.1, 2.0)], ad.sqrt)
    if op in ("abs", "relu"):
        x = _away_from(rng.uniform(-2, 2, size=s), [0.0], KINK_MARGIN)
        return GradCase(op, [Tensor(x, requires_grad=True)], ad.OPS[op])
    if op == "clamp":
        lo, hi = -1.0, 1.0
        x = _away_from(rng.uniform(-2, 2, size=s), [lo, hi], KINK_MARGIN)
        return GradCase(op, [Tensor(x, requires_grad=True)], lambda t: ad.clamp(t, lo, hi))
    if op in ("neg", "exp", "square", "tanh", "sigmoid", "softplus", "transpose"):
        return GradCase(op, [u(s)], ad.OPS[op])
    if op in ("sum", "mean"):
        axis = [None, 0, 1][int(rng.integers(0, 3))]
        fn = ad.OPS[op]
        return GradCase(op, [u(s)], lambda t: fn(t, axis=axis))
    if op == "logsumexp":
        axis = int(rng.integers(0, 2))
        return GradCase(op, [u(s)], lambda t: ad.logsumexp(t, axis=axis))
    if op == "broadcast":
        return GradCase(op, [u((1, s[1]))], lambda t: ad.broadcast(t, (3, s[1])))
    if op == "reshape":
        return GradCase(op, [u(s)], lambda t: ad.reshape(t, (s[0] * s[1],)))
    if op == "concat":
        return GradCase(op, [u(s), u((int(rng.integers(1, 4)), s[1]))], lambda a, b: ad.concat([a, b], axis=0))
    if op == "getitem":
        return GradCase(op, [u(s)], lambda t: t[:, : max(1, s[1] // 2)])
    raise KeyError(op)


def check_case(case: GradCase, rng: np.random.Generator, h: float = FD_STEP) -> float:
    """Relative error between tape and finite-difference gradients of a random projection."""
    out = case.build(*case.inputs)
    weights = rng.uniform(-1.0, 1.0, size=out.shape)
    analytic = tape_grad(lambda: case.loss(weights), case.inputs)
    numeric = numeric_grad(lambda: case.loss(weights).item(), [t.data for t in case.inputs], h)
    return relative_error(np.concatenate([g.ravel() for g in analytic]),
                          np.concatenate([g.ravel() for g in numeric]))
