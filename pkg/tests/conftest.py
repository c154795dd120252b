import numpy as np
import pytest

from fisher_plane.vae import build_vae


def tiny_vae(likelihood="bernoulli", data_dim=4, latent_dim=2, hidden=(5, 5), seed=0, activation="tanh"):
    """Small model with nonzero heads so every parameter carries gradient."""
    return build_vae(data_dim, latent_dim, likelihood, hidden=list(hidden), activation=activation,
                     seed=seed, zero_heads=False)


def binary_batch(n=6, d=4, seed=0):
    return (np.random.default_rng(seed).random((n, d)) < 0.5).astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def linear_gaussian_toy(a=1.5, b=0.3, s=0.8, exact=True, shift=0.4, widen=1.6):
    """``z ~ N(0, 1)``, ``x | z ~ N(a z + b, s^2)``, with the exact (or a perturbed) posterior as encoder.

    Returns ``(model, marginal_std)``; the marginal of ``x`` is ``N(b, a^2 + s^2)``.
    """
    import math

    model = build_vae(1, 1, "gaussian", hidden=[], seed=0)
    v = a * a + s * s
    post_w, post_c = a / v, -a * b / v
    post_log_sigma = 0.5 * math.log(s * s / v)
    if not exact:
        post_c += shift
        post_log_sigma += math.log(widen)
    enc = model.encoder.layers[-1]
    enc.weight.data[:] = [[post_w], [0.0]]
    enc.bias.data[:] = [post_c, post_log_sigma]
    dec = model.decoder.layers[-1]
    dec.weight.data[:] = [[a], [0.0]]
    dec.bias.data[:] = [b, math.log(math.expm1(s - 1e-3))]
    return model, math.sqrt(v)


def linear_gaussian_nll(x, b=0.3, std=None):
    import math

    x = np.asarray(x).ravel()
    return float(np.mean(0.5 * ((x - b) / std) ** 2 + math.log(std) + 0.5 * math.log(2 * math.pi)))


# -- acceptance summary ---------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
