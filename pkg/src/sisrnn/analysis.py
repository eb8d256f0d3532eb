"""Ancestral sampling, posterior draws, a bimodality statistic, and gradient checks."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from .distributions import RngState, sample_noise
from .inference import as_batch, bound_objective
from .model import GROUPS, SisRnnModel, decoder_params, encoder_psi, gru_step, init_model, prior_params

GRADCHECK_TOLERANCE = 1e-4


def generate(model: SisRnnModel, n: int, T: int, rng: RngState | int):
    """Ancestral samples: z_t from the conditional prior, x_t from the decoder.

    Returns ``(x, params)``: sampled observations ``(n, T, D)`` and the emission
    means (Bernoulli probabilities or Gaussian means) they were drawn from.
    """
    if n < 1 or T < 0:
        raise ValueError("generate: need n >= 1 and T >= 0")
    rng = rng if isinstance(rng, RngState) else RngState(int(rng))
    g_latent, g_obs = rng.generator(), rng.generator()
    cfg = model.config
    model = model.with_params(model.numpy_params())
    h = np.zeros((n, cfg.hidden))
    xs = np.zeros((n, T, cfg.obs_dim))
    means = np.zeros((n, T, cfg.obs_dim))
    for t in range(T):
        prior = prior_params(model, h)
        z = prior.mean.value + prior.scale.value * g_latent.standard_normal(prior.shape)
        emission = decoder_params(model, z, h)
        if cfg.emission == "bernoulli":
            p = emission.value
            x = (g_obs.random(p.shape) < p).astype(np.float64)
            means[:, t] = p
        else:
            mu, sd = emission.mean.value, emission.scale.value
            x = mu + sd * g_obs.standard_normal(mu.shape)
            means[:, t] = mu
        xs[:, t] = x
        h = gru_step(model, x, z, h).value
    return xs, means


def posterior_samples(model: SisRnnModel, x1, n: int, rng: RngState | int, h0=None) -> np.ndarray:
    """``n`` draws of z_1 through the hierarchy, fresh layer noise for each draw."""
    if n < 1:
        raise ValueError("posterior_samples: n must be >= 1")
    rng = rng if isinstance(rng, RngState) else RngState(int(rng))
    cfg = model.config
    model = model.with_params(model.numpy_params())
    x1 = np.broadcast_to(np.asarray(x1, dtype=np.float64).reshape(1, cfg.obs_dim), (n, cfg.obs_dim))
    h = np.zeros((n, cfg.hidden)) if h0 is None else np.broadcast_to(h0, (n, cfg.hidden))
    eps = sample_noise(cfg.noise, rng, rows=n)
    psi = encoder_psi(model, x1, h, eps)
    return psi.mean.value + psi.scale.value * rng.generator().standard_normal(psi.shape)


def leading_projection(samples: np.ndarray) -> np.ndarray:
    """Project multivariate samples on their leading principal axis (identity for 1-d)."""
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim == 1 or s.shape[1] == 1:
        return s.reshape(-1)
    centred = s - s.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    return centred @ vt[0]


def bimodality_ratio(samples: np.ndarray, bins: int = 64, min_peak: float = 0.1) -> float:
    """Valley-to-peak density ratio on a ``bins``-bin histogram.

    The histogram spans the 0.5%..99.5% quantiles and is smoothed with a
    5-tap binomial kernel.  Peaks are local maxima at least ``min_peak`` of the
    tallest; with fewer than two the ratio is 1.  Otherwise it is the lowest
    bin between the two tallest peaks divided by the lower of those peaks.
    """
    v = leading_projection(samples)
    lo, hi = np.quantile(v, [0.005, 0.995])
    if hi <= lo:
        return 1.0
    hist, _ = np.histogram(v, bins=bins, range=(lo, hi))
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    smooth = np.convolve(np.pad(hist.astype(float), 2, mode="edge"), kernel, mode="valid")
    top = smooth.max()
    peaks = [i for i in range(bins)
             if smooth[i] >= min_peak * top
             and (i == 0 or smooth[i] > smooth[i - 1])
             and (i == bins - 1 or smooth[i] >= smooth[i + 1])]
    if len(peaks) < 2:
        return 1.0
    a, b = sorted(sorted(peaks, key=lambda i: smooth[i])[-2:])
    valley = smooth[a:b + 1].min()
    return float(valley / min(smooth[a], smooth[b]))


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def lines(self) -> list[str]:
        out = [f"{g:<8s} max_rel_err={e:.3e} {'ok' if e < self.tolerance else 'FAIL'}"
               for g, e in self.errors.items()]
        out.append(f"overall  max_rel_err={self.max_error:.3e} {'PASS' if self.passed else 'FAIL'}")
        return out


def tiny_config(config):
    """Shrink a TrainConfig to gradient-check size (H <= 8, latent <= 4, narrow layers)."""
    shrink = lambda widths, cap: tuple(min(w, cap) for w in widths)  # noqa: E731
    return replace(
        config,
        hidden=min(config.hidden, 8),
        latent=min(config.latent, 4),
        prior_hidden=shrink(config.prior_hidden, 6),
        encoder_hidden=shrink(config.encoder_hidden, 6),
        noise_dims=shrink(config.noise_dims, 4),
        decoder_hidden=shrink(config.decoder_hidden, 6),
    )


def gradcheck_report(config, seed: int = 0, K: int = 3, beta: float = 0.7, T: int = 3,
                     n_seq: int = 2, step: float = 1e-5, corrupt: str | None = None) -> GradcheckReport:
    """Analytic vs central-difference gradients of the full regularised bound.

    Noise is replayed from the same seed on every evaluation.  ``corrupt``
    names a parameter group whose analytic gradient is deliberately perturbed,
    to exercise the failure path.
    """
    cfg = tiny_config(config)
    T = min(T, 3)
    gen = RngState(seed).generator()
    emission = "gaussian" if cfg.dataset == "two_mode" else "bernoulli"
    obs_dim = 2
    if emission == "bernoulli":
        x = (gen.random((n_seq, T, obs_dim)) < 0.5).astype(np.float64)
    else:
        x = gen.standard_normal((n_seq, T, obs_dim))
    model = init_model(cfg.model_config(obs_dim, emission), RngState(seed + 1))
    # move biases off zero so every term is generic
    params = {k: v + 0.1 * gen.standard_normal(v.shape) if v.ndim == 1 else v
              for k, v in model.numpy_params().items()}
    noise_seed = seed + 2

    def loss(p):
        x_b, _ = as_batch(x, obs_dim)
        return bound_objective(model.with_params(p), x_b, K, beta, RngState(noise_seed), n_z=1)[0]

    _, grads = nx.value_and_grad(loss, params)
    if corrupt is not None:
        name = next(k for k in grads if k.startswith(corrupt + ".") and grads[k].size)
        grads[name] = grads[name] * 1.01 + 1e-3
    per_param = nx.gradient_errors(loss, params, step=step, grads=grads)
    errors = {g: max((e for k, e in per_param.items() if k.startswith(g + ".")), default=0.0)
              for g in GROUPS}
    return GradcheckReport(errors)
