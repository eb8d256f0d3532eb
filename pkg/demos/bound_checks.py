# %% [markdown]
# Sanity checks on a tiny model: gradients against central differences, the
# K-ordering of the bound, and the bound against exact quadrature for a
# single step with a scalar latent.

# %%
import numpy as np

from sisrnn import ModelConfig, NoiseSpec, RngState, TrainConfig, init_model, regularized_bound
from sisrnn.analysis import gradcheck_report
from sisrnn.model import decoder_params, prior_params

for line in gradcheck_report(TrainConfig()).lines():
    print(line)

# %% [markdown]
# Same seed for every K, so the differences between rows are paired and
# their standard errors are small.

# %%
cfg = ModelConfig(obs_dim=3, latent_dim=2, hidden=4, prior_hidden=(6,), encoder_hidden=(8, 8, 8),
                  noise=NoiseSpec((6, 4, 2)), decoder_hidden=(6,))
model = init_model(cfg, 3)
x = (np.random.default_rng(3).random((4, 3)) < 0.5).astype(float)
for K in (0, 1, 10, 100):
    est = regularized_bound(model, x, K, 1.0, RngState(2024), n_z=2000)
    print("K=%3d  bound %.4f +- %.4f   B_K %.4f" % (K, est.total, est.stderr, est.b_k))

# %% [markdown]
# With T=1 and one latent dimension the marginal likelihood is a 1-D
# integral, done here with 128 Gauss-Hermite nodes.

# %%
cfg1 = ModelConfig(obs_dim=4, latent_dim=1, hidden=3, prior_hidden=(4,), encoder_hidden=(4, 4),
                   noise=NoiseSpec((2, 2)), decoder_hidden=(4,))
m1 = init_model(cfg1, 8)
x1 = np.array([[1.0, 0.0, 0.0, 1.0]])
h0 = np.zeros((1, cfg1.hidden))
prior = prior_params(m1, h0)
mu, sd = float(prior.mean.value[0, 0]), float(prior.scale.value[0, 0])
nodes, weights = np.polynomial.hermite_e.hermegauss(128)
z = (mu + sd * nodes)[:, None]
probs = decoder_params(m1, z, np.repeat(h0, 128, axis=0)).value
loglik = (x1 * np.log(probs) + (1 - x1) * np.log1p(-probs)).sum(axis=1)
exact = np.log(weights @ np.exp(loglik) / np.sqrt(2 * np.pi))
for K in (0, 10, 100):
    est = regularized_bound(m1, x1, K, 1.0, RngState(1), n_z=4096)
    print("K=%3d  bound %.4f +- %.4f   exact log p(x) %.4f" % (K, est.total, est.stderr, exact))
