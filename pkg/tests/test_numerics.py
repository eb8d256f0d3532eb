import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sisrnn import numerics as nx
from sisrnn.numerics import NumericError, ShapeError


def test_forward_examples():
    assert nx.forward_eval(lambda a: nx.sigmoid(a), {"a": 0.0}) == 0.5
    assert nx.forward_eval(lambda a: nx.tanh(a), {"a": 0.0}) == 0.0
    out = nx.forward_eval(lambda x, w, b: nx.matmul(x, w) + b,
                          {"x": [[1.0, 0.0]], "w": [[2.0, 3.0], [4.0, 5.0]], "b": [1.0, 1.0]})
    np.testing.assert_array_equal(out, [[3.0, 4.0]])


def test_forward_eval_unbound_input_and_shape_error():
    with pytest.raises(KeyError, match="w"):
        nx.forward_eval(lambda x: x, {"x": 1.0}, required=["x", "w"])
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        nx.forward_eval(lambda a, b: nx.matmul(a, b), {"a": np.ones((2, 3)), "b": np.ones((2, 2))})
    with pytest.raises(ShapeError):
        nx.forward_eval(lambda a, b: a + b, {"a": np.ones((2, 3)), "b": np.ones((3, 2))})


def test_forward_eval_is_referentially_transparent():
    rng = np.random.default_rng(0)
    inputs = {"x": rng.standard_normal((4, 3)), "w": rng.standard_normal((3, 5))}
    fn = lambda x, w: nx.softplus(nx.tanh(nx.matmul(x, w)))  # noqa: E731
    a, b = nx.forward_eval(fn, inputs), nx.forward_eval(fn, inputs)
    assert a.tobytes() == b.tobytes()


def test_backward_examples():
    x = nx.leaf(3.0)
    assert nx.backward_grad(x * x, [x])[0] == 6.0
    x = nx.leaf(0.0)
    assert nx.backward_grad(nx.sigmoid(x), [x])[0] == 0.25


def test_backward_non_scalar_and_unreached():
    x, unused = nx.leaf(np.ones(3)), nx.leaf(np.ones((2, 2)))
    with pytest.raises(ValueError, match="scalar"):
        nx.backward_grad(x * 2.0, [x])
    gx, gu = nx.backward_grad(nx.sum(x * x), [x, unused])
    np.testing.assert_array_equal(gx, 2.0 * np.ones(3))
    np.testing.assert_array_equal(gu, np.zeros((2, 2)))


def test_two_layer_perceptron_gradient():
    rng = np.random.default_rng(1)
    params = {"w1": rng.standard_normal((3, 2)), "b1": rng.standard_normal(2), "w2": rng.standard_normal((2, 1))}
    assert sum(p.size for p in params.values()) == 10
    x = rng.standard_normal((5, 3))

    def loss(p):
        return nx.sum(nx.tanh(nx.matmul(nx.tanh(nx.matmul(x, p["w1"]) + p["b1"]), p["w2"])))

    assert nx.finite_difference_check(loss, params, step=1e-5) < 1e-6


def test_finite_difference_examples():
    assert nx.finite_difference_check(lambda p: p["x"] * p["x"], {"x": 2.0}) < 1e-8
    kink = lambda p: nx.clip(p["x"], 0.0, np.inf) * 2.0 - p["x"]  # |x|  # noqa: E731
    assert nx.finite_difference_check(kink, {"x": 0.0}) > 0.1
    assert nx.finite_difference_check(lambda p: p["x"] * 0.0 + 7.0, {"x": 1.5}) == 0.0
    with pytest.raises(NumericError), np.errstate(all="ignore"):
        nx.finite_difference_check(lambda p: nx.log(p["x"]), {"x": 0.0})
    with pytest.raises(ValueError):
        nx.finite_difference_check(lambda p: p["x"], {"x": 1.0}, step=0.0)


# every primitive against central differences, 100 seeds each

def _unary(op, lo=-2.0, hi=2.0):
    return lambda rng: ({"a": rng.uniform(lo, hi, (3, 4))}, lambda p: op(p["a"]))


PRIMITIVES = {
    "add": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))},
                        lambda p: p["a"] + p["b"]),
    "add_bias": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(4)},
                             lambda p: p["a"] + p["b"]),
    "sub": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(4)},
                        lambda p: p["a"] - p["b"]),
    "mul": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))},
                        lambda p: p["a"] * p["b"]),
    "div": lambda rng: ({"a": rng.standard_normal((3, 4)), "b": rng.uniform(0.5, 2.0, (3, 4))},
                        lambda p: p["a"] / p["b"]),
    "matmul": lambda rng: ({"a": rng.standard_normal((3, 5)), "b": rng.standard_normal((5, 4))},
                           lambda p: nx.matmul(p["a"], p["b"])),
    "concat": lambda rng: ({"a": rng.standard_normal((3, 2)), "b": rng.standard_normal((3, 2))},
                           lambda p: nx.concat([p["a"], nx.tanh(p["b"])])),
    "slice": lambda rng: ({"a": rng.standard_normal((3, 6))}, lambda p: nx.slice_cols(p["a"], 1, 5)),
    "repeat_rows": lambda rng: ({"a": rng.standard_normal((3, 4))}, lambda p: nx.repeat_rows(p["a"], 3)),
    "reshape": lambda rng: ({"a": rng.standard_normal((3, 4))}, lambda p: nx.reshape(p["a"], (2, 6))),
    "sigmoid": _unary(nx.sigmoid, -4, 4),
    "tanh": _unary(nx.tanh),
    "softplus": _unary(nx.softplus, -5, 5),
    "exp": _unary(nx.exp),
    "log": _unary(nx.log, 0.2, 3.0),
    "neg": _unary(lambda a: -a),
    "clip": _unary(lambda a: nx.clip(a, -5.0, 5.0)),
    "sum_axis": _unary(lambda a: nx.sum(a, axis=0)),
    "logsumexp": _unary(lambda a: nx.logsumexp(a, axis=-1), -3, 3),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_central_differences(name):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        params, op = PRIMITIVES[name](rng)
        out_shape = nx.forward_eval(lambda **p: op(p), params).shape
        weights = rng.standard_normal(out_shape)
        loss = lambda p: nx.sum(op(p) * weights)  # noqa: E731
        worst = max(worst, nx.finite_difference_check(loss, params, step=1e-5))
    assert worst < 1e-4, f"{name}: {worst:.2e}"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_batch_gradient_is_sum_of_example_gradients(seed, n):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((3, 2))
    x = rng.standard_normal((n, 3))

    def loss_rows(rows):
        wl = nx.leaf(w)
        out = nx.sum(nx.softplus(nx.matmul(nx.as_tensor(x[rows]), wl)))
        return nx.backward_grad(out, [wl])[0]

    total = loss_rows(slice(None))
    parts = sum(loss_rows(slice(i, i + 1)) for i in range(n))
    np.testing.assert_allclose(total, parts, rtol=1e-12, atol=1e-12)


def test_softplus_is_stable_for_large_inputs():
    out = nx.forward_eval(lambda a: nx.softplus(a), {"a": np.array([-800.0, 0.0, 800.0])})
    np.testing.assert_allclose(out, [0.0, np.log(2.0), 800.0])
    x = nx.leaf(np.array([-800.0, 800.0]))
    np.testing.assert_allclose(nx.backward_grad(nx.sum(nx.softplus(x)), [x])[0], [0.0, 1.0])
