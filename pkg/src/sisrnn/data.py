"""Datasets: IDX-format MNIST, binarisation, sequence layouts, a synthetic two-regime set."""
from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import RngState

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MNIST_SIDE = 28


class IdxError(ValueError):
    """Malformed IDX file."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxDimensionError(IdxError):
    pass


@dataclass
class SequenceDataset:
    """Equal-length sequences stored as one ``(N, T, D)`` array."""

    sequences: np.ndarray
    split: str = "train"
    modality: str = "binary"
    images: np.ndarray | None = field(default=None, repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)
    regimes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.float64)
        if self.sequences.ndim != 3:
            raise ValueError(f"sequences must be (N, T, D), got {self.sequences.shape}")
        if self.modality not in ("binary", "real"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.modality == "binary" and not np.all((self.sequences == 0) | (self.sequences == 1)):
            raise ValueError("binary dataset contains values outside {0, 1}")

    def __len__(self):
        return self.sequences.shape[0]

    @property
    def T(self) -> int:
        return self.sequences.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.sequences.shape[2]

    def subset(self, idx) -> "SequenceDataset":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return replace(self, sequences=self.sequences[idx], images=pick(self.images),
                       labels=pick(self.labels), regimes=pick(self.regimes))


# -- IDX ---------------------------------------------------------------------

def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxTruncatedError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write ``uint8`` images ``(N, R, C)`` or labels ``(N,)`` as IDX."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("IDX writer takes uint8 arrays")
    magic = {3: IMAGE_MAGIC, 1: LABEL_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError(f"unsupported IDX rank {array.ndim}")
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def load_mnist_idx(images_path, labels_path=None, limit: int | None = None,
                   layout: str = "row", split: str = "train") -> SequenceDataset:
    """Grayscale images scaled to [0, 1]; call :func:`binarize` before training."""
    images = _read_idx(images_path, IMAGE_MAGIC, 3)
    if images.shape[1:] != (MNIST_SIDE, MNIST_SIDE):
        raise IdxDimensionError(f"{images_path}: images are {images.shape[1:]}, expected 28x28")
    labels = None
    if labels_path is not None:
        labels = _read_idx(labels_path, LABEL_MAGIC, 1)
        if labels.shape[0] != images.shape[0]:
            raise IdxDimensionError(
                f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images"
            )
    if limit is not None:
        images = images[:limit]
        labels = None if labels is None else labels[:limit]
    gray = images.astype(np.float64) / 255.0
    seqs = np.stack([to_sequence(im, layout) for im in gray]) if len(gray) else np.zeros((0, 28, 28))
    return SequenceDataset(seqs, split=split, modality="real", images=gray,
                           labels=None if labels is None else labels.astype(np.int64))


def to_sequence(image: np.ndarray, layout: str = "row") -> np.ndarray:
    """Row layout gives 28 steps of 28 pixels; pixel layout 784 steps of one pixel."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (MNIST_SIDE, MNIST_SIDE):
        raise ValueError(f"to_sequence: expected a 28x28 image, got {image.shape}")
    if layout == "row":
        return image.copy()
    if layout == "pixel":
        return image.reshape(MNIST_SIDE * MNIST_SIDE, 1)
    raise ValueError(f"to_sequence: unknown layout {layout!r}")


def from_sequence(seq: np.ndarray) -> np.ndarray:
    return np.asarray(seq).reshape(MNIST_SIDE, MNIST_SIDE)


def binarize(dataset: SequenceDataset, mode: str = "stochastic", seed: int = 0,
             threshold: float = 0.5) -> SequenceDataset:
    """Threshold (``>= threshold`` is 1) or draw each pixel once as Bernoulli(intensity)."""
    x = dataset.sequences
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("binarize: intensities must lie in [0, 1]")
    if mode == "threshold":
        out = (x >= threshold).astype(np.float64)
    elif mode == "stochastic":
        gen = RngState(seed).generator()
        out = (gen.random(x.shape) < x).astype(np.float64)
    else:
        raise ValueError(f"binarize: unknown mode {mode!r}")
    return replace(dataset, sequences=out, modality="binary")


def split_dataset(dataset: SequenceDataset, n_train: int, n_test: int, seed: int = 0):
    """Shuffle once with ``seed`` and cut disjoint train/test subsets."""
    if n_train + n_test > len(dataset):
        raise ValueError(f"need {n_train + n_test} sequences, dataset has {len(dataset)}")
    order = RngState(seed).generator().permutation(len(dataset))
    train = dataset.subset(order[:n_train])
    test = dataset.subset(order[n_train:n_train + n_test])
    return replace(train, split="train"), replace(test, split="test")


# -- synthetic ---------------------------------------------------------------

def synth_two_mode(n: int, T: int, seed: int, drift: float = 0.15, noise: float = 0.1,
                   period: float = 10.0, split: str = "train") -> SequenceDataset:
    """Sinusoid with a regime-dependent linear drift.

    Each sequence draws its regime ``s`` in {+1, -1} once with probability 1/2
    and emits ``x_t = sin(2 pi t / period) + s * drift * t + noise * e_t`` for
    ``t = 0 .. T-1``, so the first observation carries no regime information.
    """
    if n < 1 or T < 1:
        raise ValueError("synth_two_mode: n and T must be >= 1")
    gen = RngState(seed).generator()
    regimes = np.where(gen.random(n) < 0.5, 1.0, -1.0)
    t = np.arange(T, dtype=np.float64)
    base = np.sin(2.0 * np.pi * t / period)
    x = base[None, :] + regimes[:, None] * drift * t[None, :] + noise * gen.standard_normal((n, T))
    return SequenceDataset(x[:, :, None], split=split, modality="real", regimes=regimes)


def export_csv(dataset: SequenceDataset, path) -> None:
    """Long format, header ``seq_id,t,dim,value``."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", "t", "dim", "value"])
        n, T, D = dataset.sequences.shape
        for i in range(n):
            for t in range(T):
                for d in range(D):
                    w.writerow([i, t, d, repr(float(dataset.sequences[i, t, d]))])


def import_csv(path, split: str = "test") -> SequenceDataset:
    """Inverse of :func:`export_csv`; binary modality when every value is 0 or 1."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["seq_id", "t", "dim", "value"]:
            raise ValueError(f"{path}: expected header seq_id,t,dim,value, got {header}")
        rows = [(int(a), int(b), int(c), float(v)) for a, b, c, v in reader]
    if not rows:
        raise ValueError(f"{path}: no rows")
    idx = np.array([r[:3] for r in rows])
    n, T, D = idx.max(axis=0) + 1
    if len(rows) != n * T * D:
        raise ValueError(f"{path}: {len(rows)} rows do not fill a {n}x{T}x{D} grid")
    x = np.full((n, T, D), np.nan)
    x[idx[:, 0], idx[:, 1], idx[:, 2]] = [r[3] for r in rows]
    if np.isnan(x).any():
        raise ValueError(f"{path}: duplicate or missing (seq_id, t, dim) entries")
    modality = "binary" if np.all((x == 0) | (x == 1)) else "real"
    return SequenceDataset(x, split=split, modality=modality)
