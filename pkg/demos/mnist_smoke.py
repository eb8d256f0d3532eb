# %% [markdown]
# Row-by-row binarised MNIST: 28 steps of 28 pixels. The vendored subset in
# tests/data has 1500 images; we train on 1000 and evaluate on 500.
#
#     python demos/mnist_smoke.py [epochs]

# %%
import os
import sys

from sisrnn import RngState, TrainConfig, evaluate_nll, load_checkpoint, train
from sisrnn.analysis import generate
from sisrnn.config import datasets_from_config

here = os.path.dirname(os.path.abspath(__file__))
images = os.path.join(here, "..", "tests", "data", "mnist-1500-images-idx3-ubyte.gz")
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
cfg = TrainConfig(dataset="mnist", mnist_images=images, epochs=epochs, k_max=11)
train_set, test_set = datasets_from_config(cfg)
print(train_set.sequences.shape, test_set.sequences.shape, "ink fraction %.3f" % train_set.sequences.mean())

# %%
res = train(cfg, train_set, test_set, out_dir="mnist_run", progress=lambda r: print(r["epoch"], r["eval_bound"], r["K"]))

# %% [markdown]
# The checkpoint holds every parameter as little-endian float64, so a
# reloaded model reproduces the evaluation to the bit.

# %%
loaded = load_checkpoint(res.checkpoint_path).model
a = evaluate_nll(res.checkpoint.model, test_set, K=11, seed=1).per_sequence
b = evaluate_nll(loaded, test_set, K=11, seed=1).per_sequence
print("test -L_11 %.2f nats, identical after reload: %s" % (a.mean(), a.tobytes() == b.tobytes()))

# %% [markdown]
# A few samples, printed as ASCII.

# %%
x, _ = generate(loaded, 2, 28, RngState(0))
for img in x:
    print("\n".join("".join("#" if v else "." for v in row) for row in img.astype(bool)), "\n")
