"""Adam, the training loop, bound-based evaluation, and checkpoint files.

Checkpoints are two files sharing a stem: ``<stem>.json`` is the manifest
(format version, config echo, rng state, epoch, Adam counters, and a table of
``name``/``shape``/``offset`` rows) and ``<stem>.bin`` holds every array
listed there as little-endian float64, back to back in manifest order.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import numerics as nx
from .data import SequenceDataset
from .distributions import NoiseSpec, RngState
from .inference import AnnealSchedule, bound_objective, k_schedule, kl_anneal_weight, regularized_bound
from .model import ModelConfig, SisRnnModel, init_model
from .numerics import NumericError

FORMAT_VERSION = 1
METRICS_HEADER = ["epoch", "step", "train_bound", "eval_bound", "beta", "K", "wall_ms"]


@dataclass
class TrainConfig:
    # architecture
    hidden: int = 64
    latent: int = 16
    prior_hidden: tuple[int, ...] = (64, 64)
    encoder_hidden: tuple[int, ...] = (128, 128, 128)
    noise_dims: tuple[int, ...] = (150, 100, 50)
    noise_kind: str = "bernoulli"
    noise_p: float = 0.5
    decoder_hidden: tuple[int, ...] = (64,)
    # optimisation
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    # schedules
    k_min: int = 1
    k_max: int = 100
    k_ramp_fraction: float = 0.25
    anneal_cycles: int = 4
    anneal_ramp: float = 0.5
    n_z_train: int = 1
    n_z_eval: int = 1
    eval_seed: int = 12345
    # data
    dataset: str = "two_mode"
    mnist_images: str = ""
    mnist_labels: str = ""
    train_size: int = 1000
    test_size: int = 500
    layout: str = "row"
    binarize: str = "stochastic"
    synth_T: int = 20
    synth_drift: float = 0.15
    # output
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        positive = ["hidden", "latent", "epochs", "batch_size", "train_size", "test_size",
                    "synth_T", "anneal_cycles", "n_z_train", "n_z_eval"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        checks = [
            (self.lr > 0, "lr must be > 0"),
            (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1, "adam betas must be in [0, 1)"),
            (self.adam_eps > 0, "adam_eps must be > 0"),
            (self.clip_norm >= 0, "clip_norm must be >= 0 (0 disables clipping)"),
            (0 <= self.k_min <= self.k_max, "need 0 <= k_min <= k_max"),
            (0 <= self.k_ramp_fraction <= 1, "k_ramp_fraction must be in [0, 1]"),
            (0 < self.anneal_ramp <= 1, "anneal_ramp must be in (0, 1]"),
            (self.checkpoint_every >= 0, "checkpoint_every must be >= 0"),
            (self.dataset in ("two_mode", "mnist"), f"unknown dataset {self.dataset!r}"),
            (self.layout in ("row", "pixel"), f"unknown layout {self.layout!r}"),
            (self.binarize in ("stochastic", "threshold"), f"unknown binarize mode {self.binarize!r}"),
            (self.noise_kind in ("bernoulli", "gaussian"), f"unknown noise_kind {self.noise_kind!r}"),
            (len(self.noise_dims) == len(self.encoder_hidden),
             "noise_dims needs one entry per encoder layer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        return self

    def model_config(self, obs_dim: int, emission: str) -> ModelConfig:
        return ModelConfig(
            obs_dim=obs_dim,
            latent_dim=self.latent,
            hidden=self.hidden,
            prior_hidden=self.prior_hidden,
            encoder_hidden=self.encoder_hidden,
            noise=NoiseSpec(self.noise_dims, self.noise_kind, self.noise_p),
            decoder_hidden=self.decoder_hidden,
            emission=emission,
        )

    @property
    def k_ramp_epochs(self) -> int:
        return int(round(self.k_ramp_fraction * self.epochs))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in kinds:
                raise ValueError(f"unknown config key {k!r}")
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, **hyper)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam descent step; returns ``(new_params, new_state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for {name}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_p[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_p, replace(state, m=new_m, v=new_v, step=t)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


# -- evaluation --------------------------------------------------------------

@dataclass
class NllReport:
    """``per_sequence`` holds the negated bound for each sequence: an upper bound on its NLL."""

    per_sequence: np.ndarray
    K: int
    n_z: int

    @property
    def mean(self) -> float:
        return float(self.per_sequence.mean())


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def evaluate_nll(model: SisRnnModel, dataset: SequenceDataset | np.ndarray, n_z: int = 1, K: int = 0,
                 seed: int = 0, chunk: int = 128) -> NllReport:
    """Negated regularised bound (beta = 1) per sequence; parameters are not touched."""
    x = dataset.sequences if isinstance(dataset, SequenceDataset) else np.asarray(dataset)
    if x.ndim == 2:
        x = x[None]
    model = model.with_params(model.numpy_params())
    rng = RngState(seed)
    out = np.empty(x.shape[0])
    for sl in _chunks(x.shape[0], chunk):
        est = regularized_bound(model, x[sl], K, 1.0, rng, n_z)
        out[sl] = -est.per_sequence
    return NllReport(out, K, n_z)


# -- checkpoints -------------------------------------------------------------

class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    """Manifest and blob disagree about sizes or layout."""


@dataclass
class Checkpoint:
    model: SisRnnModel
    adam: AdamState | None
    rng: RngState
    epoch: int
    config: TrainConfig | None = None
    emission: str = "bernoulli"


def _stem(path) -> str:
    path = str(path)
    for ext in (".json", ".bin"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return path


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write ``<stem>.json`` and ``<stem>.bin``; returns the manifest path."""
    stem = _stem(path)
    os.makedirs(os.path.dirname(os.path.abspath(stem)) or ".", exist_ok=True)
    arrays = [(k, np.asarray(v, dtype=np.float64)) for k, v in ckpt.model.numpy_params().items()]
    if ckpt.adam is not None:
        arrays += [(f"adam.m.{k}", v) for k, v in ckpt.adam.m.items()]
        arrays += [(f"adam.v.{k}", v) for k, v in ckpt.adam.v.items()]
    table, offset = [], 0
    for name, a in arrays:
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    mc = ckpt.model.config
    manifest = {
        "format_version": FORMAT_VERSION,
        "epoch": ckpt.epoch,
        "rng": ckpt.rng.to_dict(),
        "config": None if ckpt.config is None else ckpt.config.to_dict(),
        "model_config": {
            "obs_dim": mc.obs_dim, "latent_dim": mc.latent_dim, "hidden": mc.hidden,
            "prior_hidden": list(mc.prior_hidden), "encoder_hidden": list(mc.encoder_hidden),
            "noise": {"dims": list(mc.noise.dims), "kind": mc.noise.kind, "p": mc.noise.p},
            "decoder_hidden": list(mc.decoder_hidden), "emission": mc.emission,
        },
        "adam": None if ckpt.adam is None else {
            "step": ckpt.adam.step, "lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1,
            "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps,
        },
        "blob": os.path.basename(stem) + ".bin",
        "blob_bytes": offset,
        "parameters": table,
    }
    with open(stem + ".bin", "wb") as fh:
        for _, a in arrays:
            fh.write(a.astype("<f8").tobytes())
    with open(stem + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return stem + ".json"


def load_checkpoint(path) -> Checkpoint:
    stem = _stem(path)
    try:
        with open(stem + ".json") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{stem}.json: not a valid manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{stem}.json: format_version {version!r}, expected {FORMAT_VERSION}")
    blob_path = os.path.join(os.path.dirname(os.path.abspath(stem)), manifest["blob"])
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    declared = manifest["blob_bytes"]
    table = manifest["parameters"]
    expected, offset = 0, 0
    for row in table:
        if row["offset"] != offset:
            raise CheckpointMismatchError(f"{row['name']}: offset {row['offset']}, expected {offset}")
        offset += int(np.prod(row["shape"], dtype=np.int64)) * 8
    expected = offset
    if expected != declared:
        raise CheckpointMismatchError(f"manifest tables {expected} bytes but declares {declared}")
    if len(blob) < declared:
        raise CheckpointTruncatedError(f"{blob_path}: {len(blob)} bytes, manifest needs {declared}")
    if len(blob) != declared:
        raise CheckpointMismatchError(f"{blob_path}: {len(blob)} bytes, manifest declares {declared}")

    arrays = {}
    for row in table:
        count = int(np.prod(row["shape"], dtype=np.int64))
        arrays[row["name"]] = np.frombuffer(blob, dtype="<f8", count=count,
                                            offset=row["offset"]).reshape(row["shape"]).astype(np.float64)
    mc = manifest["model_config"]
    noise = NoiseSpec(tuple(mc["noise"]["dims"]), mc["noise"]["kind"], mc["noise"]["p"])
    model_config = ModelConfig(
        obs_dim=mc["obs_dim"], latent_dim=mc["latent_dim"], hidden=mc["hidden"],
        prior_hidden=tuple(mc["prior_hidden"]), encoder_hidden=tuple(mc["encoder_hidden"]),
        noise=noise, decoder_hidden=tuple(mc["decoder_hidden"]), emission=mc["emission"],
    )
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    adam = None
    if manifest["adam"] is not None:
        a = manifest["adam"]
        adam = AdamState({k: arrays[f"adam.m.{k}"] for k in params}, {k: arrays[f"adam.v.{k}"] for k in params},
                         step=a["step"], lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
    config = None if manifest["config"] is None else TrainConfig.from_dict(manifest["config"])
    return Checkpoint(SisRnnModel(model_config, params), adam, RngState.from_dict(manifest["rng"]),
                      manifest["epoch"], config, model_config.emission)


# -- training loop -----------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None


def _write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def train(config: TrainConfig, dataset: SequenceDataset, eval_set: SequenceDataset | None = None,
          out_dir: str | None = None, model: SisRnnModel | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Maximise the regularised bound with Adam over ``config.epochs`` epochs.

    The metrics log gets one row per epoch; ``eval_bound`` is the bound on
    ``eval_set`` (the training set when omitted) at that epoch's K with beta = 1
    and a fixed evaluation seed.  With ``out_dir`` set, ``metrics.csv`` is
    rewritten after every epoch and checkpoints go to ``checkpoint.{json,bin}``.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("train: dataset is empty")
    eval_set = dataset if eval_set is None else eval_set
    emission = "bernoulli" if dataset.modality == "binary" else "gaussian"
    rng = RngState(config.seed)
    if model is None:
        model = init_model(config.model_config(dataset.obs_dim, emission), rng.spawn())
    params = model.numpy_params()
    adam = AdamState.zeros_like(params, lr=config.lr, beta1=config.adam_beta1,
                                beta2=config.adam_beta2, eps=config.adam_eps)
    n = len(dataset)
    per_epoch = math.ceil(n / config.batch_size)
    anneal = AnnealSchedule(config.epochs * per_epoch, config.anneal_cycles, config.anneal_ramp)
    shuffle = rng.spawn().generator()
    metrics, step, ckpt_path = [], 0, None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        K = k_schedule(epoch - 1, config.k_ramp_epochs, config.k_min, config.k_max)
        order = shuffle.permutation(n)
        total, beta = 0.0, 0.0
        for sl in _chunks(n, config.batch_size):
            idx = order[sl]
            beta = kl_anneal_weight(step, anneal)
            bound_model, leaves = model.with_params(params).leaves()
            try:
                objective, est = bound_objective(bound_model, dataset.sequences[idx], K, beta,
                                                 rng.spawn(), config.n_z_train)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {step}: {exc}") from exc
            if not math.isfinite(est.total):
                raise NumericError(f"non-finite bound at epoch {epoch}, step {step}")
            grads = nx.backward_grad(-objective, leaves)
            grads, _ = clip_by_global_norm(grads, config.clip_norm)
            try:
                params, adam = adam_step(params, grads, adam)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {step}: {exc}") from exc
            total += est.total * len(idx)
            step += 1
        model = model.with_params(params)
        evaluation = evaluate_nll(model, eval_set, n_z=config.n_z_eval, K=K, seed=config.eval_seed,
                                  chunk=config.batch_size)
        row = {
            "epoch": epoch,
            "step": step,
            "train_bound": repr(total / n),
            "eval_bound": repr(-evaluation.mean),
            "beta": repr(beta),
            "K": K,
            "wall_ms": int(round(1000 * (time.perf_counter() - started))),
        }
        metrics.append(row)
        if progress:
            progress(row)
        last = epoch == config.epochs
        if out_dir:
            _write_metrics(os.path.join(out_dir, "metrics.csv"), metrics)
            if last or (config.checkpoint_every and epoch % config.checkpoint_every == 0):
                ckpt_path = save_checkpoint(Checkpoint(model, adam, rng.copy(), epoch, config, emission),
                                            os.path.join(out_dir, "checkpoint"))
    return TrainResult(Checkpoint(model, adam, rng.copy(), config.epochs, config, emission), metrics, ckpt_path)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
