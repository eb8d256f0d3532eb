"""SIS-RNN networks: GRU transition, conditional prior, noisy encoder, decoder.

All learnable arrays live in one flat ``dict`` keyed ``"<net>.<layer>.<kind>"``
(``gru.w_in``, ``encoder.l1.noise_w``, ...).  The network functions read the
dict through :meth:`SisRnnModel.p`, which returns a :class:`Tensor` whether
the stored value is a raw array (evaluation) or a leaf (training).

Batch convention: every per-step quantity is ``(rows, width)``.  A 1-d input
is treated as a single row and the result is returned 1-d.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import numerics as nx
from .distributions import DiagGaussian, NoiseSpec, RngState, bernoulli_log_likelihood, gaussian_log_density
from .numerics import ShapeError, Tensor

GROUPS = ("gru", "prior", "encoder", "decoder")


@dataclass(frozen=True)
class ModelConfig:
    obs_dim: int
    latent_dim: int = 16
    hidden: int = 64
    prior_hidden: tuple[int, ...] = (64, 64)
    encoder_hidden: tuple[int, ...] = (128, 128, 128)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    decoder_hidden: tuple[int, ...] = (64,)
    emission: str = "bernoulli"

    def __post_init__(self):
        for name in ("prior_hidden", "encoder_hidden", "decoder_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        for name in ("obs_dim", "latent_dim", "hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"ModelConfig: {name} must be >= 1, got {getattr(self, name)}")
        for name in ("prior_hidden", "encoder_hidden", "decoder_hidden"):
            if any(v < 1 for v in getattr(self, name)):
                raise ValueError(f"ModelConfig: {name} widths must be >= 1")
        if not self.encoder_hidden:
            raise ValueError("ModelConfig: encoder needs at least one layer")
        if len(self.noise.dims) != len(self.encoder_hidden):
            raise ValueError(
                f"ModelConfig: {len(self.noise.dims)} noise blocks for "
                f"{len(self.encoder_hidden)} encoder layers"
            )
        if self.emission not in ("bernoulli", "gaussian"):
            raise ValueError(f"ModelConfig: unknown emission {self.emission!r}")

    def without_noise(self) -> "ModelConfig":
        """Same architecture with every noise block of width zero (the VRNN case)."""
        return replace(self, noise=replace(self.noise, dims=(0,) * len(self.noise.dims)))


def _layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, Z, H = cfg.obs_dim, cfg.latent_dim, cfg.hidden
    shapes: dict[str, tuple[int, ...]] = {
        "gru.w_in": (D + Z, 3 * H),
        "gru.w_h": (H, 3 * H),
        "gru.b": (3 * H,),
    }
    width = H
    for i, w in enumerate(cfg.prior_hidden):
        shapes[f"prior.l{i}.w"] = (width, w)
        shapes[f"prior.l{i}.b"] = (w,)
        width = w
    for head in ("mean", "scale"):
        shapes[f"prior.{head}.w"] = (width, Z)
        shapes[f"prior.{head}.b"] = (Z,)

    width = D + H
    for i, (w, n) in enumerate(zip(cfg.encoder_hidden, cfg.noise.dims)):
        shapes[f"encoder.l{i}.w"] = (width, w)
        shapes[f"encoder.l{i}.noise_w"] = (n, w)
        shapes[f"encoder.l{i}.b"] = (w,)
        width = w
    for head in ("mean", "scale"):
        shapes[f"encoder.{head}.w"] = (width, Z)
        shapes[f"encoder.{head}.b"] = (Z,)

    width = Z + H
    for i, w in enumerate(cfg.decoder_hidden):
        shapes[f"decoder.l{i}.w"] = (width, w)
        shapes[f"decoder.l{i}.b"] = (w,)
        width = w
    heads = ("logits",) if cfg.emission == "bernoulli" else ("mean", "scale")
    for head in heads:
        shapes[f"decoder.{head}.w"] = (width, D)
        shapes[f"decoder.{head}.b"] = (D,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    """Closed form, with D obs dim, Z latent dim, H hidden size.

    gru      3H(D + Z) + 3H^2 + 3H
    prior    sum over layers of (in + 1) out, then 2(Z last + Z)
    encoder  layer k takes (in_k + n_k) inputs plus a bias, in_0 = D + H;
             then 2(Z last + Z)
    decoder  layers from Z + H, then one head (Bernoulli) or two (Gaussian)
             of (last + 1) D
    """
    D, Z, H = cfg.obs_dim, cfg.latent_dim, cfg.hidden
    total = 3 * H * (D + Z) + 3 * H * H + 3 * H

    width = H
    for w in cfg.prior_hidden:
        total += (width + 1) * w
        width = w
    total += 2 * (width + 1) * Z

    width = D + H
    for w, n in zip(cfg.encoder_hidden, cfg.noise.dims):
        total += (width + n + 1) * w
        width = w
    total += 2 * (width + 1) * Z

    width = Z + H
    for w in cfg.decoder_hidden:
        total += (width + 1) * w
        width = w
    heads = 1 if cfg.emission == "bernoulli" else 2
    return total + heads * (width + 1) * D


@dataclass
class SisRnnModel:
    config: ModelConfig
    params: dict[str, np.ndarray | Tensor]

    def p(self, name: str) -> Tensor:
        return nx.as_tensor(self.params[name])

    def numpy_params(self) -> dict[str, np.ndarray]:
        return {k: nx.as_tensor(v).value for k, v in self.params.items()}

    def with_params(self, params: Mapping[str, np.ndarray | Tensor]) -> "SisRnnModel":
        return SisRnnModel(self.config, dict(params))

    def leaves(self) -> tuple["SisRnnModel", dict[str, Tensor]]:
        """A copy whose parameters are differentiable leaves, plus those leaves."""
        leaves = {k: nx.leaf(nx.as_tensor(v).value, name=k) for k, v in self.params.items()}
        return self.with_params(leaves), leaves

    def groups(self) -> dict[str, list[str]]:
        out = {g: [] for g in GROUPS}
        for name in self.params:
            out[name.split(".", 1)[0]].append(name)
        return out

    @property
    def n_params(self) -> int:
        return int(sum(nx.as_tensor(v).value.size for v in self.params.values()))


def init_model(config: ModelConfig, rng: RngState | int) -> SisRnnModel:
    """Glorot-uniform weights, zero biases.

    Split weights (the encoder's input and noise blocks of one layer) are drawn
    as one matrix over the concatenated fan-in and then cut, so the
    initialisation matches a single dense layer on ``[input; noise]``.
    """
    if not isinstance(rng, RngState):
        rng = RngState(int(rng))
    gen = rng.generator()
    shapes = _layer_shapes(config)
    params: dict[str, np.ndarray] = {}

    def glorot(fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return gen.uniform(-a, a, size=(fan_in, fan_out))

    for name, shape in shapes.items():
        if name in params:
            continue
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        elif name.endswith(".noise_w"):
            continue
        elif name.startswith("encoder.l"):
            prefix = name[: -len(".w")]
            n = shapes[prefix + ".noise_w"][0]
            full = glorot(shape[0] + n, shape[1])
            params[name] = full[: shape[0]]
            params[prefix + ".noise_w"] = full[shape[0]:]
        else:
            params[name] = glorot(*shape)
    return SisRnnModel(config, {k: params[k] for k in shapes})


def zero_model(config: ModelConfig) -> SisRnnModel:
    """All-zero parameters; useful for closed-form checks."""
    return SisRnnModel(config, {k: np.zeros(s) for k, s in _layer_shapes(config).items()})


# -- networks ----------------------------------------------------------------

def _rows(x, width: int, what: str) -> tuple[Tensor, bool]:
    x = nx.as_tensor(x)
    single = x.ndim == 1
    if single:
        x = nx.reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what}: expected width {width}, got shape {x.shape}")
    return x, single


def _unrow(t: Tensor, single: bool) -> Tensor:
    return nx.reshape(t, (t.shape[1],)) if single else t


def _dense(model: SisRnnModel, prefix: str, x: Tensor) -> Tensor:
    return nx.matmul(x, model.p(prefix + ".w")) + model.p(prefix + ".b")


def _mlp(model: SisRnnModel, net: str, x: Tensor, depth: int) -> Tensor:
    for i in range(depth):
        x = nx.tanh(_dense(model, f"{net}.l{i}", x))
    return x


def gru_step(model: SisRnnModel, x_t, z_t, h_prev) -> Tensor:
    """One GRU transition on the concatenated input ``[x_t ; z_t]``.

    r = sigmoid(a_r + b_r), u = sigmoid(a_u + b_u), n = tanh(a_n + r * b_n),
    h = (1 - u) * n + u * h_prev, where ``a`` is the input projection plus
    bias and ``b`` the hidden projection.
    """
    cfg = model.config
    H = cfg.hidden
    x, single = _rows(x_t, cfg.obs_dim, "gru_step x_t")
    z, _ = _rows(z_t, cfg.latent_dim, "gru_step z_t")
    h, _ = _rows(h_prev, H, "gru_step h_prev")
    if not (x.shape[0] == z.shape[0] == h.shape[0]):
        raise ShapeError(f"gru_step: row counts differ {x.shape[0]}, {z.shape[0]}, {h.shape[0]}")
    a = nx.matmul(nx.concat([x, z]), model.p("gru.w_in")) + model.p("gru.b")
    b = nx.matmul(h, model.p("gru.w_h"))
    r = nx.sigmoid(nx.slice_cols(a, 0, H) + nx.slice_cols(b, 0, H))
    u = nx.sigmoid(nx.slice_cols(a, H, 2 * H) + nx.slice_cols(b, H, 2 * H))
    n = nx.tanh(nx.slice_cols(a, 2 * H, 3 * H) + r * nx.slice_cols(b, 2 * H, 3 * H))
    h_new = (1.0 - u) * n + u * h
    return _unrow(h_new, single)


def _gaussian_head(model: SisRnnModel, net: str, x: Tensor) -> tuple[Tensor, Tensor]:
    return _dense(model, f"{net}.mean", x), nx.softplus(_dense(model, f"{net}.scale", x))


def prior_params(model: SisRnnModel, h_prev) -> DiagGaussian:
    cfg = model.config
    h, single = _rows(h_prev, cfg.hidden, "prior_params h_prev")
    a = _mlp(model, "prior", h, len(cfg.prior_hidden))
    mean, scale = _gaussian_head(model, "prior", a)
    return DiagGaussian(_unrow(mean, single), _unrow(scale, single))


def _check_noise(model: SisRnnModel, eps, rows: int) -> list[Tensor]:
    dims = model.config.noise.dims
    if len(eps) != len(dims):
        raise ShapeError(f"encoder_psi: {len(eps)} noise blocks, expected {len(dims)}")
    out = []
    for k, (e, d) in enumerate(zip(eps, dims)):
        e = nx.as_tensor(e)
        if e.ndim == 1:
            e = nx.reshape(e, (1, e.shape[0]))
        if e.shape != (rows, d):
            raise ShapeError(f"encoder_psi: noise block {k} has shape {e.shape}, expected {(rows, d)}")
        out.append(e)
    return out


def _encoder_layer(model: SisRnnModel, i: int, pre: Tensor, eps: Tensor) -> Tensor:
    if eps.shape[1]:
        pre = pre + nx.matmul(eps, model.p(f"encoder.l{i}.noise_w"))
    return nx.tanh(pre)


def encoder_psi(model: SisRnnModel, x_t, h_prev, eps) -> DiagGaussian:
    """Mixing draw psi_t = (mean, scale) from (x_t, h_prev) and layer noise ``eps``.

    Layer ``k`` sees its input concatenated with noise block ``k``; the
    concatenation is applied as two matmuls against row blocks of one weight.
    """
    cfg = model.config
    x, single = _rows(x_t, cfg.obs_dim, "encoder_psi x_t")
    h, _ = _rows(h_prev, cfg.hidden, "encoder_psi h_prev")
    if x.shape[0] != h.shape[0]:
        raise ShapeError(f"encoder_psi: row counts differ {x.shape[0]} vs {h.shape[0]}")
    noise = _check_noise(model, eps, x.shape[0])
    a = _encoder_layer(model, 0, _dense(model, "encoder.l0", nx.concat([x, h])), noise[0])
    for i in range(1, len(cfg.encoder_hidden)):
        a = _encoder_layer(model, i, _dense(model, f"encoder.l{i}", a), noise[i])
    mean, scale = _gaussian_head(model, "encoder", a)
    return DiagGaussian(_unrow(mean, single), _unrow(scale, single))


def encoder_psi_repeated(model: SisRnnModel, x_t, h_prev, eps, k: int) -> DiagGaussian:
    """``k`` mixing draws per input row, output rows ordered ``i * k + j``.

    Equivalent to :func:`encoder_psi` on inputs with each row repeated ``k``
    times, but the noise-free part of the first layer is computed once.
    """
    cfg = model.config
    x, _ = _rows(x_t, cfg.obs_dim, "encoder_psi x_t")
    h, _ = _rows(h_prev, cfg.hidden, "encoder_psi h_prev")
    n = x.shape[0]
    noise = _check_noise(model, eps, n * k)
    shared = _dense(model, "encoder.l0", nx.concat([x, h]))
    a = _encoder_layer(model, 0, nx.repeat_rows(shared, k), noise[0])
    for i in range(1, len(cfg.encoder_hidden)):
        a = _encoder_layer(model, i, _dense(model, f"encoder.l{i}", a), noise[i])
    mean, scale = _gaussian_head(model, "encoder", a)
    return DiagGaussian(mean, scale)


def decoder_params(model: SisRnnModel, z_t, h_prev) -> Tensor | DiagGaussian:
    """Emission parameters: Bernoulli probabilities or a diagonal Gaussian."""
    cfg = model.config
    z, single = _rows(z_t, cfg.latent_dim, "decoder_params z_t")
    h, _ = _rows(h_prev, cfg.hidden, "decoder_params h_prev")
    if z.shape[0] != h.shape[0]:
        raise ShapeError(f"decoder_params: row counts differ {z.shape[0]} vs {h.shape[0]}")
    a = _mlp(model, "decoder", nx.concat([z, h]), len(cfg.decoder_hidden))
    if cfg.emission == "bernoulli":
        return _unrow(nx.sigmoid(_dense(model, "decoder.logits", a)), single)
    mean, scale = _gaussian_head(model, "decoder", a)
    return DiagGaussian(_unrow(mean, single), _unrow(scale, single))


def emission_log_likelihood(model: SisRnnModel, x_t, emission) -> Tensor:
    if model.config.emission == "bernoulli":
        return bernoulli_log_likelihood(x_t, emission)
    return gaussian_log_density(x_t, emission)
