"""Fisher information, differential entropy and Fisher-Shannon plane coordinates.

Two independent routes are kept side by side: closed forms for diagonal
Gaussians, and grid quadrature for arbitrary smooth 1-D densities.  Tests
play one against the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import ContractError, NumericError

LOG_2PI_E = math.log(2.0 * math.pi * math.e)
DEFAULT_GRID_STEP = 1e-3


@dataclass(frozen=True)
class DiagGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        if mu.shape != sigma.shape or mu.ndim != 1:
            raise ContractError(f"mu {mu.shape} and sigma {sigma.shape} must be matching vectors")
        if not (sigma > 0).all() or not np.isfinite(sigma).all() or not np.isfinite(mu).all():
            raise ContractError("sigma must be finite and strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class InfoPoint:
    """A point in the Fisher-Shannon plane.

    ``product`` is normalised per dimension so Gaussians with equal
    variances sit exactly on ``product == 1`` whatever ``dim`` is.
    """

    entropy_power: float
    fisher_trace: float
    product: float
    dim: int

    def __post_init__(self):
        vals = (self.entropy_power, self.fisher_trace, self.product)
        if not all(math.isfinite(v) for v in vals):
            raise NumericError(f"non-finite InfoPoint {vals}")
        if self.entropy_power < 0 or self.fisher_trace < 0 or self.dim < 1:
            raise ContractError("InfoPoint coordinates must be nonnegative and dim >= 1")

    @classmethod
    def from_coords(cls, entropy_power: float, fisher_trace: float, dim: int) -> "InfoPoint":
        return cls(float(entropy_power), float(fisher_trace),
                   float(entropy_power) * float(fisher_trace) / dim, int(dim))


@dataclass
class Density1D:
    pdf: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    name: str = ""
    variance: float | None = None  # known variance, for reference only

    def grid(self, grid_step: float) -> np.ndarray:
        if grid_step <= 0:
            raise ContractError("grid_step must be positive")
        a, b = self.support
        n = int(round((b - a) / grid_step))
        return np.linspace(a, b, n + 1)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        f = np.asarray(self.pdf(x), dtype=np.float64)
        if (f < 0).any():
            raise ContractError(f"density {self.name!r} evaluated negative")
        return f


# -- closed forms -------------------------------------------------------------

def gaussian_fisher_trace(g: DiagGaussian) -> float:
    return float(np.sum(1.0 / g.sigma ** 2))


def gaussian_entropy(g: DiagGaussian) -> float:
    return float(0.5 * g.dim * LOG_2PI_E + np.sum(np.log(g.sigma)))


def gaussian_entropy_power(g: DiagGaussian) -> float:
    """``(prod sigma_d^2) ** (1/d)``, i.e. ``exp(2H/d) / (2 pi e)``."""
    return float(np.exp(2.0 * np.mean(np.log(g.sigma))))


def entropy_power_from_entropy(h: float, dim: int = 1) -> float:
    return math.exp(2.0 * h / dim - LOG_2PI_E)


def fs_point_from_sigma(sigma) -> InfoPoint:
    """Dataset-averaged FS point from a ``[batch, d]`` array of posterior std-devs."""
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    if s.ndim != 2 or s.shape[0] == 0 or s.shape[1] == 0:
        raise ContractError(f"need a nonempty [batch, d] sigma array, got shape {s.shape}")
    if not (s > 0).all():
        raise ContractError("sigma must be strictly positive")
    d = s.shape[1]
    n = np.exp(2.0 * np.log(s).mean(axis=1)).mean()
    trj = (1.0 / s ** 2).sum(axis=1).mean()
    return InfoPoint.from_coords(n, trj, d)


def fs_point_of_posterior(batch: Sequence[DiagGaussian]) -> InfoPoint:
    if len(batch) == 0:
        raise ContractError("empty posterior batch")
    dims = {g.dim for g in batch}
    if len(dims) != 1:
        raise ContractError(f"posteriors disagree on dimension: {sorted(dims)}")
    return fs_point_from_sigma(np.stack([g.sigma for g in batch]))


def conditional_entropy_fi_duality(g: DiagGaussian) -> tuple[float, float]:
    """Return ``(log J, -2H + log(2 pi e))`` for a scalar Gaussian; the two agree."""
    if g.dim != 1:
        raise ContractError("the FI/entropy duality is stated per scalar dimension")
    return math.log(gaussian_fisher_trace(g)), -2.0 * gaussian_entropy(g) + LOG_2PI_E


# -- quadrature ---------------------------------------------------------------

def numeric_fisher_1d(f: Density1D, grid_step: float = DEFAULT_GRID_STEP) -> float:
    """Trapezoid estimate of ``int f'(x)^2 / f(x) dx`` with a central-difference ``f'``."""
    x = f.grid(grid_step)
    h = grid_step
    fx = f.evaluate(x)
    dfx = (f.evaluate(x + h) - f.evaluate(x - h)) / (2.0 * h)
    integrand = np.divide(dfx * dfx, fx, out=np.zeros_like(fx), where=fx > 0)
    return float(np.trapezoid(integrand, x))


def numeric_entropy_1d(f: Density1D, grid_step: float = DEFAULT_GRID_STEP) -> float:
    """Trapezoid estimate of ``-int f log f``, with ``0 log 0 = 0``."""
    x = f.grid(grid_step)
    fx = f.evaluate(x)
    logf = np.log(np.where(fx > 0, fx, 1.0))
    return float(-np.trapezoid(fx * logf, x))


def numeric_variance_1d(f: Density1D, grid_step: float = DEFAULT_GRID_STEP) -> float:
    x = f.grid(grid_step)
    fx = f.evaluate(x)
    mass = np.trapezoid(fx, x)
    m1 = np.trapezoid(x * fx, x) / mass
    return float(np.trapezoid((x - m1) ** 2 * fx, x) / mass)


def numeric_mass_1d(f: Density1D, grid_step: float = DEFAULT_GRID_STEP) -> float:
    x = f.grid(grid_step)
    return float(np.trapezoid(f.evaluate(x), x))


def uncertainty_product(f: Density1D, grid_step: float = DEFAULT_GRID_STEP) -> float:
    """``N(f) * J(f)``; at least 1, with equality only for Gaussians."""
    return entropy_power_from_entropy(numeric_entropy_1d(f, grid_step)) * numeric_fisher_1d(f, grid_step)


def location_fisher_1d(pdf_at: Callable[[np.ndarray, float], np.ndarray], theta: float,
                       support: tuple[float, float], grid_step: float = DEFAULT_GRID_STEP) -> float:
    """Parametric FI ``int (d/dtheta p_theta(x))^2 / p_theta(x) dx`` by differencing in ``theta``."""
    a, b = support
    x = np.linspace(a, b, int(round((b - a) / grid_step)) + 1)
    h = grid_step
    p = pdf_at(x, theta)
    dp = (pdf_at(x, theta + h) - pdf_at(x, theta - h)) / (2.0 * h)
    integrand = np.divide(dp * dp, p, out=np.zeros_like(p), where=p > 0)
    return float(np.trapezoid(integrand, x))


def parametric_nonparametric_check(sigma: float, grid_step: float | None = None) -> tuple[float, float]:
    """Non-parametric FI of ``N(0, sigma^2)`` and parametric FI w.r.t. its mean.

    The grid step defaults to ``1e-3 * sigma`` so the relative discretisation
    error is the same for every scale.
    """
    if sigma <= 0:
        raise ContractError("sigma must be positive")
    step = DEFAULT_GRID_STEP * sigma if grid_step is None else grid_step
    support = (-10.0 * sigma, 10.0 * sigma)
    nonparam = numeric_fisher_1d(normal_density(0.0, sigma), step)

    def pdf_at(x, theta):
        return np.exp(-0.5 * ((x - theta) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))

    return nonparam, location_fisher_1d(pdf_at, 0.0, support, step)


# -- the 1-D test family --------------------------------------------------------

def normal_density(mu: float = 0.0, sigma: float = 1.0, width: float = 10.0) -> Density1D:
    c = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    return Density1D(lambda x: c * np.exp(-0.5 * ((x - mu) / sigma) ** 2),
                     (mu - width * sigma, mu + width * sigma), f"normal({mu},{sigma})", sigma ** 2)


def laplace_density(b: float = 1.0, smooth: float = 1e-3, width: float = 40.0) -> Density1D:
    """Laplace(0, b) with the cusp rounded: ``exp(-sqrt(x^2 + s^2) / b)``.

    Normaliser ``2 s K1(s / b)`` is exact for the rounded density.
    """
    if smooth > 0:
        z = 2.0 * smooth * special.k1(smooth / b)
        pdf = lambda x: np.exp(-np.sqrt(x * x + smooth * smooth) / b) / z  # noqa: E731
    else:
        pdf = lambda x: np.exp(-np.abs(x) / b) / (2.0 * b)  # noqa: E731
    return Density1D(pdf, (-width * b, width * b), f"laplace({b})", 2.0 * b * b)


def uniform_density(a: float = 0.0, b: float = 1.0) -> Density1D:
    return Density1D(lambda x: np.where((x >= a) & (x <= b), 1.0 / (b - a), 0.0), (a, b),
                     f"uniform({a},{b})", (b - a) ** 2 / 12.0)


def mixture_density(means: Sequence[float], sigmas: Sequence[float],
                    weights: Sequence[float] | None = None, width: float = 10.0) -> Density1D:
    means = np.asarray(means, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    w = np.full(means.size, 1.0 / means.size) if weights is None else np.asarray(weights, dtype=np.float64)

    def pdf(x):
        x = np.asarray(x)[..., None]
        comp = np.exp(-0.5 * ((x - means) / sigmas) ** 2) / (sigmas * math.sqrt(2 * math.pi))
        return comp @ w

    lo = float((means - width * sigmas).min())
    hi = float((means + width * sigmas).max())
    return Density1D(pdf, (lo, hi), "mixture")


def logistic_density(s: float = 1.0, width: float = 40.0) -> Density1D:
    def pdf(x):
        e = np.exp(-np.abs(x) / s)
        return e / (s * (1.0 + e) ** 2)

    return Density1D(pdf, (-width * s, width * s), f"logistic({s})", (math.pi * s) ** 2 / 3.0)


def student_t_density(nu: float = 5.0, width: float = 400.0) -> Density1D:
    c = math.exp(special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)) / math.sqrt(nu * math.pi)
    return Density1D(lambda x: c * (1.0 + x * x / nu) ** (-(nu + 1) / 2), (-width, width),
                     f"student_t({nu})", nu / (nu - 2) if nu > 2 else None)


def reference_family() -> list[Density1D]:
    """1-D densities used by the Cramér-Rao and uncertainty-inequality checks."""
    return [
        normal_density(0.0, 1.0),
        normal_density(1.5, 0.5),
        normal_density(-3.0, 2.5),
        laplace_density(1.0),
        laplace_density(0.5),
        logistic_density(1.0),
        student_t_density(5.0),
        mixture_density([-2.0, 2.0], [1.0, 1.0]),
        mixture_density([0.0, 3.0], [0.5, 1.5], [0.3, 0.7]),
    ]
