"""Diagonal Gaussians, Bernoulli emissions, and the noise sources of the mixing net.

Every function accepts plain arrays or :class:`~sisrnn.numerics.Tensor` and
returns a Tensor, so the same code path serves evaluation and training.  The
last axis is the event axis; densities are summed over it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .numerics import NumericError, ShapeError, Tensor

LOG_2PI = math.log(2.0 * math.pi)
PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with independent coordinates; ``scale`` is the standard deviation."""

    mean: Tensor
    scale: Tensor

    def __post_init__(self):
        object.__setattr__(self, "mean", nx.as_tensor(self.mean))
        object.__setattr__(self, "scale", nx.as_tensor(self.scale))
        if self.mean.shape != self.scale.shape:
            raise ShapeError(f"DiagGaussian: mean {self.mean.shape} vs scale {self.scale.shape}")

    @property
    def shape(self):
        return self.mean.shape

    def validate(self) -> "DiagGaussian":
        """Negative scales are invalid input; zero or non-finite ones signal under/overflow."""
        s = self.scale.value
        if np.any(s < 0):
            raise ValueError("DiagGaussian: scale must be strictly positive")
        if not np.all(np.isfinite(s) & (s > 0)):
            raise NumericError("DiagGaussian: scale must be strictly positive (zero or non-finite value)")
        return self


def _check_same(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} does not match {b.shape}")


def gaussian_log_density(x, dist: DiagGaussian) -> Tensor:
    """Log density summed over the last axis."""
    x = nx.as_tensor(x)
    _check_same("gaussian_log_density", x, dist.mean)
    u = (x - dist.mean) / dist.scale
    terms = -0.5 * LOG_2PI - nx.log(dist.scale) - 0.5 * (u * u)
    return nx.sum(terms, axis=-1)


def gaussian_kl(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p), summed over the last axis."""
    _check_same("gaussian_kl", q.mean, p.mean)
    q.validate()
    p.validate()
    ratio = q.scale / p.scale
    d = (q.mean - p.mean) / p.scale
    terms = -nx.log(ratio) + 0.5 * (ratio * ratio + d * d) - 0.5
    return nx.sum(terms, axis=-1)


def reparam_sample(dist: DiagGaussian, eps) -> Tensor:
    eps = nx.as_tensor(eps)
    _check_same("reparam_sample", eps, dist.mean)
    return dist.mean + dist.scale * eps


def bernoulli_log_likelihood(x, probs) -> Tensor:
    """Sum over the last axis of ``x log p + (1 - x) log(1 - p)``.

    ``p`` and ``1 - p`` are each clamped to ``[1e-7, 1 - 1e-7]`` before the
    logs, so every term is at least ``log(1e-7)``.
    """
    x, probs = nx.as_tensor(x), nx.as_tensor(probs)
    _check_same("bernoulli_log_likelihood", x, probs)
    xv = x.value
    if not np.all((xv == 0.0) | (xv == 1.0)):
        raise ValueError("bernoulli_log_likelihood: observations must be 0 or 1")
    p = nx.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = nx.clip(1.0 - probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = xv * nx.log(p) + (1.0 - xv) * nx.log(q)
    return nx.sum(terms, axis=-1)


# -- randomness --------------------------------------------------------------

class RngState:
    """Replayable source of independent random streams.

    Each call to :meth:`generator` returns a fresh Philox stream keyed by
    ``(seed, counter)`` and advances the counter, so the whole state is two
    integers and two states with equal fields produce identical draws.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & (2**64 - 1)
        self.counter = int(counter)

    def generator(self) -> np.random.Generator:
        key = (self.seed << 64) | (self.counter & (2**64 - 1))
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=key))

    def spawn(self) -> "RngState":
        """An independent child state, derived deterministically."""
        g = self.generator()
        return RngState(int(g.integers(0, 2**63)))

    def copy(self) -> "RngState":
        return RngState(self.seed, self.counter)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "counter": self.counter}

    @classmethod
    def from_dict(cls, d) -> "RngState":
        return cls(d["seed"], d["counter"])

    def __eq__(self, other):
        return isinstance(other, RngState) and (self.seed, self.counter) == (other.seed, other.counter)

    def __repr__(self):
        return f"RngState(seed={self.seed}, counter={self.counter})"


@dataclass(frozen=True)
class NoiseSpec:
    """Noise injected into the mixing network, one block per encoder layer."""

    dims: tuple[int, ...] = (150, 100, 50)
    kind: str = "bernoulli"
    p: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.dims:
            raise ValueError("NoiseSpec: dims must be nonempty")
        if any(d < 0 for d in self.dims):
            raise ValueError(f"NoiseSpec: negative noise width in {self.dims}")
        if self.kind not in ("bernoulli", "gaussian"):
            raise ValueError(f"NoiseSpec: unknown kind {self.kind!r}")
        if self.kind == "bernoulli" and not 0.0 < self.p < 1.0:
            raise ValueError(f"NoiseSpec: bernoulli p must be in (0, 1), got {self.p}")

    @property
    def total(self) -> int:
        return sum(self.dims)


def sample_noise(spec: NoiseSpec, rng: np.random.Generator | RngState, rows: int = 1) -> list[np.ndarray]:
    """One ``(rows, d)`` array per layer; Bernoulli draws take values in {0, 1}."""
    gen = rng.generator() if isinstance(rng, RngState) else rng
    out = []
    for d in spec.dims:
        if spec.kind == "bernoulli":
            out.append((gen.random((rows, d)) < spec.p).astype(np.float64))
        else:
            out.append(gen.standard_normal((rows, d)))
    return out


def standard_normal(rng: np.random.Generator | RngState, shape: Sequence[int]) -> np.ndarray:
    gen = rng.generator() if isinstance(rng, RngState) else rng
    return gen.standard_normal(tuple(shape))
