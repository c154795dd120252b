import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from fisher_plane import autodiff as ad
from fisher_plane.errors import ConfigError, UnsupportedLikelihoodError
from fisher_plane.gradcheck import numeric_grad, relative_error, tape_grad
from fisher_plane.info import gaussian_entropy, DiagGaussian, mixture_density, normal_density, numeric_entropy_1d
from fisher_plane.nn import init_mlp
from fisher_plane.objectives import (FaeConfig, MaeConfig, fae_loss, fi_entropy_tradeoff_report, init_aux,
                                     kl_to_standard_normal, mae_loss, mixture_entropy, vae_loss)
from fisher_plane.vae import build_vae, encode, gaussian_head, log_normal_diag, reparameterize

from conftest import binary_batch, tiny_vae


def _posterior(mu, sigma):
    mu, sigma = np.atleast_2d(mu), np.atleast_2d(sigma)
    return gaussian_head(ad.Tensor(np.concatenate([mu, np.log(sigma)], axis=1)), mu.shape[1])


def _mc_kl(mu, sigma, n=1_000_000, seed=0):
    z = np.random.default_rng(seed).normal(mu, sigma, n)
    r = np.log(1.0 / sigma) - 0.5 * ((z - mu) / sigma) ** 2 + 0.5 * z ** 2
    return r.mean(), r.std() / math.sqrt(n)


# -- KL -------------------------------------------------------------------------------------

def test_kl_zero_at_prior():
    assert kl_to_standard_normal(_posterior([0.0, 0.0], [1.0, 1.0])).data[0] == 0.0


@pytest.mark.parametrize("mu,sigma,expected", [(1.0, 1.0, 0.5), (0.0, 0.5, 0.5 * (0.25 - 1 - math.log(0.25)))])
def test_kl_against_monte_carlo(mu, sigma, expected):
    kl = kl_to_standard_normal(_posterior([mu], [sigma])).data[0]
    assert kl == pytest.approx(expected, rel=1e-12)
    mc, _ = _mc_kl(mu, sigma)
    assert abs(mc - kl) < 3e-3


@settings(max_examples=200, deadline=None, derandomize=True)
@given(st.lists(st.tuples(st.floats(-4, 4), st.floats(0.05, 5)), min_size=1, max_size=5))
def test_kl_nonnegative(pairs):
    mu = np.array([p[0] for p in pairs])
    sigma = np.array([p[1] for p in pairs])
    kl = kl_to_standard_normal(_posterior(mu, sigma)).data[0]
    assert kl >= -1e-12
    if np.all(mu == 0) and np.all(np.abs(np.log(sigma)) < 1e-9):
        assert kl == pytest.approx(0.0, abs=1e-12)


# -- FAE ------------------------------------------------------------------------------------

def test_fae_without_penalty_is_negative_elbo():
    model, x = tiny_vae(), binary_batch()
    rep = fae_loss(model, x, FaeConfig(lambda_z=0.0), seed=3)
    assert rep.total == -rep.elbo
    assert rep.elbo == rep.recon - rep.kl


def test_zero_heads_meet_unit_target():
    model = build_vae(4, 3, hidden=[5], seed=0)
    rep = fae_loss(model, binary_batch(), FaeConfig(lambda_z=1.0, f_z=1.0), seed=0)
    assert rep.fisher_z == 1.0 and rep.fi_term_z == 0.0


def test_fi_term_plug_in():
    model = build_vae(4, 1, hidden=[5], seed=0)
    model.encoder.layers[-1].bias.data[1] = math.log(0.5)
    rep = fae_loss(model, binary_batch(), FaeConfig(lambda_z=1.0, f_z=20.0), seed=0)
    assert rep.fisher_z == pytest.approx(4.0)
    assert rep.fi_term_z == pytest.approx(16.0)


def test_fi_term_shrinks_toward_target_from_both_sides():
    f_z = 4.0
    model = build_vae(4, 1, hidden=[5], seed=0)
    vals = {}
    for scale in (0.8, 1.0, 1.25):
        model.encoder.layers[-1].bias.data[1] = 0.5 * math.log(scale / f_z)
        vals[scale] = fae_loss(model, binary_batch(), FaeConfig(1.0, f_z=f_z), seed=0).fi_term_z
    assert vals[1.0] == pytest.approx(0.0, abs=1e-12)
    assert vals[0.8] > vals[1.0] and vals[1.25] > vals[1.0]


@pytest.mark.parametrize("f_z", [0.25, 0.5, 2.0, 4.0, 20.0])
def test_constrained_variance_side(f_z):
    """Minimising KL + lambda |1/s^2 - F| over s alone puts s^2 on the side of 1 opposite to F."""
    lam = 50.0

    def objective(log_s):
        post = _posterior([0.0], [math.exp(log_s)])
        kl = kl_to_standard_normal(post).data[0]
        return kl + lam * abs(math.exp(-2 * log_s) - f_z)

    found = optimize.minimize_scalar(objective, bounds=(-4.0, 4.0), method="bounded",
                                     options={"xatol": 1e-10}).x
    grid = np.linspace(-4.0, 4.0, 80_001)
    var = np.exp(2 * grid)
    oracle = grid[np.argmin(0.5 * (var - 1.0 - np.log(var)) + lam * np.abs(1.0 / var - f_z))]
    assert found == pytest.approx(oracle, abs=2e-4)
    var = math.exp(2 * found)
    assert (var <= 1.0) if f_z > 1 else (var >= 1.0)


def test_lambda_x_needs_gaussian_likelihood():
    with pytest.raises(UnsupportedLikelihoodError, match="likelihood"):
        fae_loss(tiny_vae("bernoulli"), binary_batch(), FaeConfig(lambda_x=1.0), seed=0)


def test_negative_weights_rejected():
    with pytest.raises(ConfigError):
        FaeConfig(lambda_z=-1.0).validate()


def test_gaussian_decoder_term_reported():
    rng = np.random.default_rng(0)
    model = tiny_vae("gaussian")
    rep = fae_loss(model, rng.normal(size=(6, 4)),
                   FaeConfig(lambda_z=0.0, lambda_x=2.0, f_x=0.5, likelihood="gaussian"), seed=0)
    assert rep.fi_term_x == pytest.approx(2.0 * abs(rep.fisher_x - 0.5))
    assert rep.total == pytest.approx(-rep.elbo + rep.fi_term_x)


@pytest.mark.parametrize("likelihood,lambda_x", [("bernoulli", 0.0), ("gaussian", 0.7)])
def test_fae_gradient_matches_finite_differences(likelihood, lambda_x):
    rng = np.random.default_rng(4)
    model = tiny_vae(likelihood)
    x = binary_batch(5) if likelihood == "bernoulli" else rng.normal(size=(5, 4))
    cfg = FaeConfig(lambda_z=1.3, lambda_x=lambda_x, f_z=2.0, f_x=0.5, likelihood=likelihood)
    params = model.parameters()
    analytic = tape_grad(lambda: fae_loss(model, x, cfg, seed=9).loss, params)
    numeric = numeric_grad(lambda: fae_loss(model, x, cfg, seed=9).total, [p.data for p in params])
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) < 1e-4


# -- MAE ------------------------------------------------------------------------------------

def _mae_cfg(model, c=1.0, m=0.0, seed=5):
    return MaeConfig(c=c, m=m, aux=init_aux(model, hidden=[5], seed=seed, activation="tanh"))


def test_mae_without_penalty_is_bitwise_vae():
    model, x = tiny_vae(), binary_batch()
    mae = mae_loss(model, x, _mae_cfg(model, c=0.0), seed=17)
    fae = fae_loss(model, x, FaeConfig(lambda_z=0.0, lambda_x=0.0), seed=17)
    assert mae.total == fae.total == -mae.elbo
    assert mae.total.hex() == fae.total.hex()
    assert vae_loss(model, x, seed=17).total == fae.total


def test_mae_needs_auxiliary_network():
    with pytest.raises(ConfigError):
        mae_loss(tiny_vae(), binary_batch(), MaeConfig(c=1.0), seed=0)


def test_mae_gradient_routing():
    """VAE parameters see d(total); auxiliary parameters see only the log r term."""
    model, x = tiny_vae(), binary_batch(5)
    cfg = _mae_cfg(model, c=0.8, m=0.3)
    vae_p, aux_p = model.parameters(), cfg.aux.parameters()
    analytic = tape_grad(lambda: mae_loss(model, x, cfg, seed=2).loss, vae_p + aux_p)

    def total():
        return mae_loss(model, x, cfg, seed=2).total

    def aux_part():
        rep = mae_loss(model, x, cfg, seed=2)
        return rep.loss.item() - rep.total

    num_vae = numeric_grad(total, [p.data for p in vae_p])
    num_aux = numeric_grad(aux_part, [p.data for p in aux_p])
    for a, n in zip(analytic, num_vae + num_aux):
        assert relative_error(a, n) < 1e-4


def _linear_toy(means=(-2.0, 2.0), log_sigma=0.0):
    """D = 1 encoder mapping x in {0, 1} to N(means[x], exp(log_sigma)^2); r equals q."""
    model = build_vae(1, 1, hidden=[], seed=0)
    head = model.encoder.layers[-1]
    head.weight.data[:] = [[means[1] - means[0]], [0.0]]
    head.bias.data[:] = [means[0], log_sigma]
    aux = copy.deepcopy(model.encoder)
    return model, aux


def test_gibbs_equality_when_r_is_q():
    model, aux = _linear_toy(means=(0.5, 0.5))
    x = np.zeros((2000, 1))
    rep = mae_loss(model, x, MaeConfig(c=1.0, aux=aux), seed=0)
    post = encode(model, x)
    z = reparameterize(post, 0)
    h_cond = gaussian_entropy(DiagGaussian([0.5], [1.0]))
    expected = mixture_entropy(z, post).item() - h_cond
    assert rep.mi_estimate == pytest.approx(expected, abs=0.1)
    assert rep.mi_estimate == pytest.approx(0.0, abs=0.1)


def test_two_component_mutual_information():
    model, aux = _linear_toy()
    x = np.repeat([[0.0], [1.0]], 1000, axis=0)
    rep = mae_loss(model, x, MaeConfig(c=1.0, aux=aux), seed=1)
    exact = numeric_entropy_1d(mixture_density([-2.0, 2.0], [1.0, 1.0])) - numeric_entropy_1d(normal_density())
    assert 0.0 < exact < math.log(2.0)
    assert rep.mi_estimate == pytest.approx(exact, abs=0.1)


def test_mixture_entropy_single_point_mass():
    post = _posterior([[0.0]], [[1.0]])
    h = mixture_entropy(ad.Tensor([[0.0]]), post).item()
    assert h == pytest.approx(-log_normal_diag(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1))).item())


# -- tradeoff report ------------------------------------------------------------------------

def test_tradeoff_unit_sigma():
    r = fi_entropy_tradeoff_report(np.ones((8, 3)))
    assert r.fi_coord == pytest.approx(0.0, abs=1e-12) and r.entropy_coord == pytest.approx(0.0, abs=1e-12)


def test_tradeoff_half_sigma():
    r = fi_entropy_tradeoff_report(np.full((8, 1), 0.5))
    assert r.fi_coord == pytest.approx(math.log(4.0)) and r.entropy_coord == pytest.approx(math.log(4.0))


@settings(max_examples=100, deadline=None, derandomize=True)
@given(st.lists(st.floats(0.05, 10.0), min_size=2, max_size=20))
def test_tradeoff_gap_is_jensen(sigmas):
    s = np.asarray(sigmas)[:, None]
    r = fi_entropy_tradeoff_report(s)
    assert r.gap >= -1e-9
    if np.ptp(s) > 1e-3:
        assert r.gap > 0
