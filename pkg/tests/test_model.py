import math

import numpy as np
import pytest

from sisrnn import numerics as nx
from sisrnn.distributions import NoiseSpec, RngState, sample_noise
from sisrnn.model import (
    GROUPS,
    ModelConfig,
    decoder_params,
    encoder_psi,
    encoder_psi_repeated,
    gru_step,
    init_model,
    parameter_count,
    prior_params,
    zero_model,
)
from sisrnn.numerics import ShapeError

TINY = ModelConfig(obs_dim=3, latent_dim=2, hidden=4, prior_hidden=(5,), encoder_hidden=(5, 4),
                   noise=NoiseSpec((3, 2)), decoder_hidden=(4,))


def test_gru_zero_weights_halves_state():
    m = zero_model(TINY)
    v = np.array([0.4, -1.2, 2.0, 0.0])
    np.testing.assert_array_equal(gru_step(m, np.ones(3), np.ones(2), v).value, 0.5 * v)
    np.testing.assert_array_equal(gru_step(m, np.ones(3), np.ones(2), np.zeros(4)).value, np.zeros(4))


def test_gru_output_shape_and_dim_errors():
    m = init_model(TINY, 0)
    for x in (np.zeros(3), 10 * np.ones(3)):
        assert gru_step(m, x, np.full(2, -3.0), np.zeros(4)).shape == (4,)
    with pytest.raises(ShapeError):
        gru_step(m, np.zeros(2), np.zeros(2), np.zeros(4))
    with pytest.raises(ShapeError):
        gru_step(m, np.zeros(3), np.zeros(2), np.zeros(5))


def test_prior_zero_network_and_positive_scales():
    d = prior_params(zero_model(TINY), np.zeros(4))
    np.testing.assert_array_equal(d.mean.value, [0.0, 0.0])
    np.testing.assert_allclose(d.scale.value, [math.log(2.0)] * 2, rtol=0, atol=1e-15)
    assert d.shape == (2,)
    for seed in range(1000):
        m = init_model(TINY, seed)
        h = np.random.default_rng(seed).normal(scale=3.0, size=(2, 4))
        assert np.all(prior_params(m, h).scale.value > 0)
    with pytest.raises(ShapeError):
        prior_params(zero_model(TINY), np.zeros(3))


def test_encoder_purity_and_noise_dependence():
    m = init_model(TINY, 1)
    x, h = np.array([1.0, 0.0, 1.0]), np.array([0.1, -0.2, 0.3, 0.0])
    eps = sample_noise(TINY.noise, RngState(0))
    a, b = encoder_psi(m, x, h, eps), encoder_psi(m, x, h, eps)
    assert np.array_equal(a.mean.value, b.mean.value) and np.array_equal(a.scale.value, b.scale.value)
    other = [1.0 - e for e in eps]
    c = encoder_psi(m, x, h, other)
    assert not np.allclose(a.mean.value, c.mean.value)
    with pytest.raises(ShapeError):
        encoder_psi(m, x, h, eps[:1])


def test_zero_noise_encoder_is_a_point_mass():
    cfg = TINY.without_noise()
    m = init_model(cfg, 2)
    x, h = np.ones((1, 3)), np.full((1, 4), 0.5)
    draws = [encoder_psi(m, x, h, sample_noise(cfg.noise, RngState(s))) for s in range(20)]
    for d in draws[1:]:
        assert np.array_equal(d.mean.value, draws[0].mean.value)
        assert np.array_equal(d.scale.value, draws[0].scale.value)


def test_repeated_encoder_matches_row_repetition():
    m = init_model(TINY, 3)
    rng = np.random.default_rng(0)
    x, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    eps = sample_noise(TINY.noise, RngState(5), rows=6)
    fast = encoder_psi_repeated(m, x, h, eps, 3)
    slow = encoder_psi(m, np.repeat(x, 3, axis=0), np.repeat(h, 3, axis=0), eps)
    np.testing.assert_allclose(fast.mean.value, slow.mean.value, rtol=0, atol=1e-14)
    np.testing.assert_allclose(fast.scale.value, slow.scale.value, rtol=0, atol=1e-14)


def test_decoder_heads():
    p = decoder_params(zero_model(TINY), np.zeros(2), np.zeros(4))
    np.testing.assert_array_equal(p.value, [0.5, 0.5, 0.5])
    m = init_model(TINY, 4)
    z = np.random.default_rng(1).normal(scale=5.0, size=(1000, 2))
    h = np.random.default_rng(2).uniform(-1, 1, size=(1000, 4))
    probs = decoder_params(m, z, h).value
    assert probs.shape == (1000, 3) and np.all((probs > 0) & (probs < 1))
    g = decoder_params(init_model(ModelConfig(obs_dim=3, latent_dim=2, hidden=4, emission="gaussian"), 0),
                       np.zeros(2), np.zeros(4))
    assert g.shape == (3,) and np.all(g.scale.value > 0)
    with pytest.raises(ShapeError):
        decoder_params(m, np.zeros(3), np.zeros(4))


def test_init_is_deterministic_and_glorot():
    a, b = init_model(TINY, 7), init_model(TINY, 7)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    for name, w in a.numpy_params().items():
        if w.ndim == 1:
            assert not w.any(), name
    w = a.numpy_params()["gru.w_h"]
    bound = math.sqrt(6.0 / (w.shape[0] + w.shape[1]))
    assert np.abs(w).max() <= bound
    assert set(a.groups()) == set(GROUPS)


def test_parameter_count_closed_form():
    cfg = ModelConfig(obs_dim=28, latent_dim=16, hidden=64)
    # gru: 44*192 + 64*192 + 192 = 20928
    # prior: 2 * (64*64 + 64) + 2 * (64*16 + 16) = 10400
    # encoder: (92+150)*128+128 + (128+100)*128+128 + (128+50)*128+128 + 2*(128*16+16) = 87456
    # decoder: 80*64 + 64 + 64*28 + 28 = 7004
    assert parameter_count(cfg) == 125788
    assert init_model(cfg, 0).n_params == 125788


@pytest.mark.parametrize("kw", [{"hidden": 0}, {"latent_dim": 0}, {"obs_dim": 0},
                                {"emission": "poisson"}, {"encoder_hidden": (4, 4)}])
def test_invalid_configs_rejected(kw):
    base = dict(obs_dim=3, latent_dim=2, hidden=4)
    with pytest.raises(ValueError):
        init_model(ModelConfig(**{**base, **kw}), 0)


def test_end_to_end_composite_gradient():
    m = init_model(TINY, 9)
    rng = np.random.default_rng(3)
    params = {k: v + 0.2 * rng.normal(size=v.shape) for k, v in m.numpy_params().items()}
    x, h0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    eps = sample_noise(TINY.noise, RngState(1), rows=2)
    xb = (rng.random((2, 3)) < 0.5).astype(float)

    def loss(p):
        mm = m.with_params(p)
        psi = encoder_psi(mm, x, h0, eps)
        z = psi.mean + psi.scale * 0.3
        h1 = gru_step(mm, x, z, h0)
        prior = prior_params(mm, h1)
        probs = decoder_params(mm, prior.mean + prior.scale, h1)
        return nx.sum(probs * xb) + nx.sum(nx.log(prior.scale))

    assert nx.finite_difference_check(loss, params) < 1e-4
