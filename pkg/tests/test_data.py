import gzip
import hashlib
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sisrnn.data import (
    IdxDimensionError,
    IdxMagicError,
    IdxTruncatedError,
    SequenceDataset,
    binarize,
    export_csv,
    from_sequence,
    import_csv,
    load_mnist_idx,
    split_dataset,
    synth_two_mode,
    to_sequence,
    write_idx,
)

DATA = os.path.join(os.path.dirname(__file__), "data")
IMAGES = os.path.join(DATA, "mnist-1500-images-idx3-ubyte.gz")
LABELS = os.path.join(DATA, "mnist-1500-labels-idx1-ubyte.gz")


def digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def test_vendored_mnist_loads_without_mutation():
    before = digest(IMAGES), digest(LABELS)
    d = load_mnist_idx(IMAGES, LABELS, limit=100)
    assert len(d) == 100 and d.sequences.shape == (100, 28, 28)
    assert d.sequences.min() >= 0.0 and d.sequences.max() <= 1.0
    assert d.labels.shape == (100,) and set(d.labels) <= set(range(10))
    full = load_mnist_idx(IMAGES)
    assert len(full) == 1500
    assert (digest(IMAGES), digest(LABELS)) == before


def test_idx_header_and_errors(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (5, 28, 28), dtype=np.uint8)
    good = tmp_path / "img.idx"
    write_idx(good, imgs)
    raw = good.read_bytes()
    assert struct.unpack(">I", raw[:4])[0] == 0x00000803
    np.testing.assert_array_equal(load_mnist_idx(good).images, imgs / 255.0)

    (tmp_path / "magic.idx").write_bytes(struct.pack(">I", 0x801) + raw[4:])
    with pytest.raises(IdxMagicError):
        load_mnist_idx(tmp_path / "magic.idx")
    (tmp_path / "short.idx").write_bytes(raw[:-10])
    with pytest.raises(IdxTruncatedError):
        load_mnist_idx(tmp_path / "short.idx")
    (tmp_path / "hdr.idx").write_bytes(raw[:9])
    with pytest.raises(IdxTruncatedError):
        load_mnist_idx(tmp_path / "hdr.idx")
    write_idx(tmp_path / "wide.idx", np.zeros((2, 28, 27), dtype=np.uint8))
    with pytest.raises(IdxDimensionError):
        load_mnist_idx(tmp_path / "wide.idx")
    write_idx(tmp_path / "lab.idx", np.zeros(4, dtype=np.uint8))
    with pytest.raises(IdxDimensionError):
        load_mnist_idx(good, tmp_path / "lab.idx")


def test_idx_gzip_matches_plain(tmp_path):
    imgs = np.arange(2 * 28 * 28, dtype=np.int64).reshape(2, 28, 28).astype(np.uint8)
    write_idx(tmp_path / "a.idx", imgs)
    with gzip.open(tmp_path / "a.idx.gz", "wb") as fh:
        fh.write((tmp_path / "a.idx").read_bytes())
    a = load_mnist_idx(tmp_path / "a.idx").sequences
    b = load_mnist_idx(tmp_path / "a.idx.gz").sequences
    assert a.tobytes() == b.tobytes()


def test_binarize_examples():
    img = np.zeros((1, 28, 28))
    img[0, 0, 0] = 128 / 255
    img[0, 0, 1] = 127 / 255
    d = SequenceDataset(img, modality="real")
    t = binarize(d, "threshold")
    assert t.sequences[0, 0, 0] == 1.0 and t.sequences[0, 0, 1] == 0.0
    assert t.sequences[0, 5, 5] == 0.0 and binarize(d, "stochastic", seed=1).sequences[0, 5, 5] == 0.0
    real = load_mnist_idx(IMAGES, limit=20)
    a, b = binarize(real, "stochastic", seed=3), binarize(real, "stochastic", seed=3)
    assert a.modality == "binary" and a.sequences.tobytes() == b.sequences.tobytes()
    assert not np.array_equal(a.sequences, binarize(real, "stochastic", seed=4).sequences)
    with pytest.raises(ValueError):
        binarize(SequenceDataset(np.full((1, 2, 2), 1.5), modality="real"))
    with pytest.raises(ValueError):
        binarize(d, "otsu")


def test_layouts():
    img = np.random.default_rng(0).random((28, 28))
    row, pix = to_sequence(img, "row"), to_sequence(img, "pixel")
    assert row.shape == (28, 28) and pix.shape == (784, 1)
    np.testing.assert_array_equal(row.reshape(-1), pix[:, 0])
    with pytest.raises(ValueError):
        to_sequence(np.zeros((27, 28)))
    with pytest.raises(ValueError):
        to_sequence(img, "column")


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (28, 28), elements=st.floats(0, 1)), st.sampled_from(["row", "pixel"]))
def test_layouts_round_trip(img, layout):
    np.testing.assert_array_equal(from_sequence(to_sequence(img, layout)), img)


def test_binary_dataset_rejects_non_binary_values():
    with pytest.raises(ValueError):
        SequenceDataset(np.full((1, 2, 2), 0.5), modality="binary")
    with pytest.raises(ValueError):
        SequenceDataset(np.zeros((2, 2)))


def test_synth_two_mode():
    a, b = synth_two_mode(50, 7, seed=2), synth_two_mode(50, 7, seed=2)
    assert a.sequences.tobytes() == b.sequences.tobytes() and a.sequences.shape == (50, 7, 1)
    big = synth_two_mode(10_000, 1, seed=0)
    assert abs((big.regimes > 0).mean() - 0.5) < 0.015
    up = synth_two_mode(2000, 20, seed=1, noise=0.0)
    slope = up.sequences[:, -1, 0] - up.sequences[:, 0, 0]
    assert set(np.round(slope, 9)) == {round(np.sin(2 * np.pi * 19 / 10) + s * 0.15 * 19, 9) for s in (1, -1)}
    with pytest.raises(ValueError):
        synth_two_mode(0, 5, seed=0)


def test_split_and_csv_round_trip(tmp_path):
    d = synth_two_mode(30, 4, seed=5)
    tr, te = split_dataset(d, 20, 10, seed=1)
    assert tr.split == "train" and te.split == "test"
    rows = {r.tobytes() for r in tr.sequences} | {r.tobytes() for r in te.sequences}
    assert len(rows) == 30
    with pytest.raises(ValueError):
        split_dataset(d, 25, 10)
    export_csv(te, tmp_path / "test.csv")
    assert (tmp_path / "test.csv").read_text().splitlines()[0] == "seq_id,t,dim,value"
    back = import_csv(tmp_path / "test.csv")
    assert back.sequences.tobytes() == te.sequences.tobytes()
