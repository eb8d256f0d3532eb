"""Sequence unrolling and the semi-implicit lower bounds.

For one trajectory the trainable objective is

    sum_t  log p(x_t | z_t, h_{t-1})
           - beta * ( KL(q(z_t | psi_t) || p(z_t | h_{t-1})) - B_t )

with ``B_t = log q(z_t | psi_t) - log g_K(z_t)`` and ``g_K`` the equal-weight
mixture of ``q(. | psi_t)`` and ``K`` further mixing draws ``psi_t^(k)`` made
with fresh noise at the same ``(x_t, h_{t-1})``.  At ``K = 0`` the correction
is identically zero and the objective is the plain surrogate bound.

Randomness: each bound evaluation takes three independent streams from the
:class:`~sisrnn.distributions.RngState`, in this order: latent noise for the
reparameterised ``z_t``, layer noise for ``psi_t``, and layer noise for the
``K`` mixture draws.  Fixing the seed therefore pairs evaluations that differ
only in ``K``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .distributions import (
    DiagGaussian,
    RngState,
    gaussian_kl,
    gaussian_log_density,
    reparam_sample,
    sample_noise,
)
from .model import (
    SisRnnModel,
    decoder_params,
    emission_log_likelihood,
    encoder_psi,
    encoder_psi_repeated,
    gru_step,
    prior_params,
)
from .numerics import NumericError, ShapeError, Tensor


@dataclass
class StepTrace:
    t: int
    h_prev: np.ndarray
    eps: list[np.ndarray]
    psi: DiagGaussian
    z: np.ndarray
    prior: DiagGaussian
    emission: object
    h: np.ndarray


@dataclass
class BoundEstimate:
    """Monte Carlo bound, averaged over sequences.

    ``per_sample`` holds one total per (replicate, sequence) with shape
    ``(n_z, n_sequences)``; ``per_sequence`` is its mean over replicates.
    """

    total: float
    reconstruction: float
    kl: float
    b_k: float
    K: int
    beta: float
    n_z: int
    n_sequences: int
    per_sample: np.ndarray = field(repr=False)

    @property
    def per_sequence(self) -> np.ndarray:
        return self.per_sample.mean(axis=0)

    @property
    def stderr(self) -> float:
        """Standard error of ``total`` across all replicate trajectories."""
        flat = self.per_sample.reshape(-1)
        if flat.size < 2:
            return float("nan")
        return float(flat.std(ddof=1) / math.sqrt(flat.size))


def as_batch(x, obs_dim: int) -> tuple[np.ndarray, bool]:
    """``(T, D)`` or ``(N, T, D)`` to ``(N, T, D)``; flag says a single sequence was given."""
    if isinstance(x, (list, tuple)):
        lengths = {np.shape(s)[0] for s in x}
        if len(lengths) > 1:
            raise ShapeError(f"sequences in one batch must share a length, got {sorted(lengths)}")
        x = np.stack([np.asarray(s, dtype=np.float64) for s in x]) if x else np.zeros((0, 0, obs_dim))
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or (x.shape[1] > 0 and x.shape[2] != obs_dim):
        raise ShapeError(f"observations must be (T, {obs_dim}) or (N, T, {obs_dim}), got {x.shape}")
    return x, single


def _streams(rng: RngState | int):
    if not isinstance(rng, RngState):
        rng = RngState(int(rng))
    return rng.generator(), rng.generator(), rng.generator()


def sivi_regularizer_bk(model: SisRnnModel, x_t, h_prev, psi_t: DiagGaussian, z_t, K: int,
                        rng) -> Tensor:
    """Per-row ``log q(z_t | psi_t) - log g_K(z_t)`` for ``K`` fresh mixing draws.

    ``rng`` is a numpy Generator or an RngState.  Returns zeros when ``K == 0``.
    """
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    z_t = nx.as_tensor(z_t)
    rows = z_t.shape[0]
    if K == 0:
        return nx.Tensor(np.zeros(rows))
    eps = sample_noise(model.config.noise, rng, rows=rows * K)
    psi_k = encoder_psi_repeated(model, x_t, h_prev, eps, K)
    log_q0 = gaussian_log_density(z_t, psi_t)
    log_qk = gaussian_log_density(nx.repeat_rows(z_t, K), psi_k)
    stacked = nx.concat([nx.reshape(log_q0, (rows, 1)), nx.reshape(log_qk, (rows, K))])
    log_mix = nx.logsumexp(stacked, axis=-1) - math.log(K + 1)
    out = log_q0 - log_mix
    if not np.all(np.isfinite(out.value)):
        raise NumericError("sivi_regularizer_bk: non-finite value")
    return out


def _unroll(model: SisRnnModel, x: np.ndarray, K: int, rng, record: bool = False):
    """Yield ``(t, rec, kl, bk, trace)`` per step for row-stacked sequences ``x``."""
    cfg = model.config
    g_latent, g_mix, g_mixture = _streams(rng)
    rows, T, _ = x.shape
    h = nx.Tensor(np.zeros((rows, cfg.hidden)))
    for t in range(T):
        x_t = nx.Tensor(x[:, t, :])
        eps = sample_noise(cfg.noise, g_mix, rows=rows)
        psi = encoder_psi(model, x_t, h, eps)
        z = reparam_sample(psi, g_latent.standard_normal((rows, cfg.latent_dim)))
        prior = prior_params(model, h)
        emission = decoder_params(model, z, h)
        rec = emission_log_likelihood(model, x_t, emission)
        kl = gaussian_kl(psi, prior)
        bk = sivi_regularizer_bk(model, x_t, h, psi, z, K, g_mixture)
        for name, term in (("reconstruction", rec), ("kl", kl)):
            if not np.all(np.isfinite(term.value)):
                raise NumericError(f"non-finite {name} term at step t={t}")
        h_new = gru_step(model, x_t, z, h)
        trace = None
        if record:
            trace = StepTrace(t, h.value, eps, _values(psi), z.value, _values(prior),
                              _values(emission), h_new.value)
        yield t, rec, kl, bk, trace
        h = h_new


def _values(d):
    if isinstance(d, DiagGaussian):
        return DiagGaussian(np.array(d.mean.value), np.array(d.scale.value))
    return np.array(nx.as_tensor(d).value)


def sequence_forward(model: SisRnnModel, x, rng) -> list[StepTrace]:
    """Run one sequence ``(T, D)`` through the model, recording every step."""
    xb, single = as_batch(x, model.config.obs_dim)
    if not single:
        raise ShapeError("sequence_forward takes a single (T, D) sequence")
    return [trace for *_, trace in _unroll(model, xb, 0, rng, record=True)]


def bound_terms(model: SisRnnModel, x, K: int, rng, n_z: int = 1):
    """Per-trajectory reconstruction, KL and B_K sums as Tensors of shape ``(n_z * N,)``.

    Rows are replicate-major: row ``j * N + i`` is replicate ``j`` of sequence ``i``.
    """
    if n_z < 1:
        raise ValueError(f"n_z must be >= 1, got {n_z}")
    xb, _ = as_batch(x, model.config.obs_dim)
    n = xb.shape[0]
    rows = np.tile(xb, (n_z, 1, 1))
    zero = nx.Tensor(np.zeros(n * n_z))
    rec = kl = bk = zero
    for _, r, k, b, _ in _unroll(model, rows, K, rng):
        rec, kl, bk = rec + r, kl + k, bk + b
    return rec, kl, bk, n


def _assemble(rec: Tensor, kl: Tensor, bk: Tensor, beta: float) -> Tensor:
    return rec - beta * (kl - bk)


def bound_objective(model: SisRnnModel, x, K: int, beta: float, rng, n_z: int = 1):
    """Mean bound over trajectories as a differentiable scalar, plus its estimate."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    rec, kl, bk, n = bound_terms(model, x, K, rng, n_z)
    per_row = _assemble(rec, kl, bk, beta)
    objective = nx.sum(per_row) * (1.0 / per_row.shape[0])
    est = BoundEstimate(
        total=float(objective.value),
        reconstruction=float(rec.value.mean()),
        kl=float(kl.value.mean()),
        b_k=float(bk.value.mean()),
        K=K,
        beta=beta,
        n_z=n_z,
        n_sequences=n,
        per_sample=per_row.value.reshape(n_z, n),
    )
    if not np.isfinite(est.total):
        raise NumericError("bound is not finite")
    return objective, est


def regularized_bound(model: SisRnnModel, x, K: int, beta: float, rng, n_z: int = 1) -> BoundEstimate:
    """Monte Carlo estimate of the K-regularised bound."""
    return bound_objective(model, x, K, beta, rng, n_z)[1]


def elbo_lower_bound(model: SisRnnModel, x, rng, n_z: int = 1) -> BoundEstimate:
    """The surrogate bound without the mixture correction (``K = 0``, ``beta = 1``)."""
    return regularized_bound(model, x, 0, 1.0, rng, n_z)


# -- schedules ---------------------------------------------------------------

@dataclass(frozen=True)
class AnnealSchedule:
    """Cyclic KL weight: ``cycles`` equal periods over ``total_steps``, each
    ramping linearly from 0 to 1 over its first ``ramp`` fraction."""

    total_steps: int
    cycles: int = 4
    ramp: float = 0.5

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("AnnealSchedule: total_steps must be >= 1")
        if self.cycles < 1:
            raise ValueError("AnnealSchedule: cycles must be >= 1")
        if not 0.0 < self.ramp <= 1.0:
            raise ValueError("AnnealSchedule: ramp must be in (0, 1]")


def kl_anneal_weight(step: int, schedule: AnnealSchedule) -> float:
    """KL weight at ``step``; steps past the schedule hold at 1."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step >= schedule.total_steps:
        return 1.0
    period = schedule.total_steps / schedule.cycles
    tau = (step % period) / period
    return min(tau / schedule.ramp, 1.0)


def k_schedule(epoch: int, ramp_epochs: int = 500, k_min: int = 1, k_max: int = 100) -> int:
    """Linear ramp of the mixture size, rounded half up and clamped to ``[k_min, k_max]``."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if ramp_epochs <= 0:
        return k_max
    k = math.floor(k_min + (k_max - k_min) * min(epoch, ramp_epochs) / ramp_epochs + 0.5)
    return int(min(max(k, k_min), k_max))
