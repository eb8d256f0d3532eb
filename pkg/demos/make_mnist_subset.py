"""Build the IDX-format MNIST subset used by the tests and the MNIST demo.

Source: the 5000-image MNIST sample bundled with mlxtend
(``mlxtend/data/data/mnist_5k.csv.gz``, 785 columns, label last, sorted by
label).  We shuffle it with a fixed seed and keep the first 1500 images.

    pip install --no-deps mlxtend
    python3 demos/make_mnist_subset.py tests/data
"""
import gzip
import os
import sys

import numpy as np

from sisrnn.data import write_idx


def main(out_dir: str, n: int = 1500, seed: int = 2024) -> None:
    import mlxtend

    src = os.path.join(os.path.dirname(mlxtend.__file__), "data", "data", "mnist_5k.csv.gz")
    with gzip.open(src, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    order = np.random.default_rng(seed).permutation(len(table))[:n]
    images = table[order, :784].reshape(n, 28, 28).astype(np.uint8)
    labels = table[order, 784].astype(np.uint8)
    os.makedirs(out_dir, exist_ok=True)
    write_idx(os.path.join(out_dir, f"mnist-{n}-images-idx3-ubyte.gz"), images)
    write_idx(os.path.join(out_dir, f"mnist-{n}-labels-idx1-ubyte.gz"), labels)
    print(f"wrote {n} images to {out_dir}; label counts {np.bincount(labels, minlength=10).tolist()}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
