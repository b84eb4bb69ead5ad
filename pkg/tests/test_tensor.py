import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hypergen import tensor as T
from hypergen.tensor import Tensor, gradcheck, no_grad

TOL = 1e-4
INSTANCES = 20


def leaf(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    return Tensor(np.abs(x) + 0.5 if positive else x, requires_grad=True)


def _pool_input(rng):
    # distinct values so the max is unique and finite differences stay on one branch
    x = rng.permutation(2 * 4 * 4 * 3).reshape(2, 4, 4, 3) / 7.0
    return Tensor(x, requires_grad=True)


def _conv_case(rng, stride):
    x = leaf(rng, 2, 4, 4, 2)
    w = leaf(rng, 3, 3, 2, 3)
    return (lambda: T.conv2d(x, w, stride=stride)), [x, w]


def _bn_case(rng, training):
    x, g, b = leaf(rng, 5, 3), leaf(rng, 3), leaf(rng, 3)
    rm, rv = rng.standard_normal(3), np.abs(rng.standard_normal(3)) + 0.5
    return (lambda: T.batch_norm(x, g, b, rm, rv, training=training) if not training else T.batch_norm(x, g, b)), [x, g, b]


def _binary(op, positive_b=False):
    def make(rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 1, 4, positive=positive_b)
        return (lambda: op(a, b)), [a, b]

    return make


def _unary(op, positive=False, shape=(3, 4)):
    def make(rng):
        a = leaf(rng, *shape, positive=positive)
        return (lambda: op(a)), [a]

    return make


CASES = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, positive_b=True),
    "scale": _unary(lambda a: T.scale(a, -2.5)),
    "power": _unary(lambda a: T.power(a, 1.7), positive=True),
    "sqrt": _unary(T.sqrt, positive=True),
    "leaky_relu": _unary(lambda a: T.leaky_relu(a, 0.1)),
    "log": _unary(T.log, positive=True),
    "exp": _unary(T.exp),
    "sum": _unary(lambda a: T.sum_(a, axis=1)),
    "mean": _unary(lambda a: T.mean(a, axis=0, keepdims=True)),
    "reshape": _unary(lambda a: T.reshape(a, (4, 3)) * Tensor(np.arange(12.0).reshape(4, 3))),
    "transpose": _unary(lambda a: T.transpose(a) @ Tensor(np.ones((3, 2)))),
    "broadcast_to": _unary(lambda a: T.broadcast_to(a, (2, 3, 4)), shape=(3, 1)),
    "take": _unary(lambda a: T.take(a, (np.array([0, 2, 2]), np.array([1, 1, 3])))),
    "slice": _unary(lambda a: a[1:, ::2]),
    "concat": _binary(lambda a, b: T.concat([a, b], axis=0)),
    "stack": _unary(lambda a: T.stack([a, a * a], axis=1)),
    "matmul": lambda rng: (lambda a, b: ((lambda: a @ b), [a, b]))(leaf(rng, 3, 4), leaf(rng, 4, 2)),
    "log_softmax": _unary(T.log_softmax),
    "sum_squares": _unary(lambda a: T.sum_squares(a, axis=1)),
    "l2_norm": _unary(lambda a: T.l2_norm(a, axis=1)),
    "pairwise_sqdist": _unary(T.pairwise_sqdist, shape=(5, 3)),
    "conv2d_stride1": lambda rng: _conv_case(rng, 1),
    "conv2d_stride2": lambda rng: _conv_case(rng, 2),
    "maxpool2x2": lambda rng: (lambda x: ((lambda: T.maxpool2x2(x)), [x]))(_pool_input(rng)),
    "batch_norm_train": lambda rng: _bn_case(rng, True),
    "batch_norm_infer": lambda rng: _bn_case(rng, False),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(INSTANCES):
        f, inputs = CASES[name](rng)
        worst = max(worst, gradcheck(f, inputs))
    assert worst < TOL, f"{name}: relative error {worst:.2e}"


def test_maxpool_example():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1), requires_grad=True)
    y = T.maxpool2x2(x)
    assert y.data.ravel().tolist() == [4.0]
    (g,) = T.grad(y, [x])
    assert g.ravel().tolist() == [0.0, 0.0, 0.0, 1.0]


def test_maxpool_tie_routes_to_first():
    x = Tensor(np.full((1, 2, 2, 1), 3.0), requires_grad=True)
    (g,) = T.grad(T.maxpool2x2(x), [x])
    assert g.ravel().tolist() == [1.0, 0.0, 0.0, 0.0]


def test_maxpool_odd_size_keeps_edge():
    x = np.arange(9.0).reshape(1, 3, 3, 1)
    y = T.maxpool2x2(Tensor(x)).data
    assert y.shape == (1, 2, 2, 1)
    assert y.ravel().tolist() == [4.0, 5.0, 7.0, 8.0]


def _conv_reference(x, w, stride):
    n, h, wd, c = x.shape
    kh, kw, _, f = w.shape
    ph, pw = T.same_padding(h, kh, stride), T.same_padding(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (ph[1], ph[2]), (pw[1], pw[2]), (0, 0)))
    out = np.zeros((n, ph[0], pw[0], f))
    for i in range(ph[0]):
        for j in range(pw[0]):
            patch = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw, :]
            out[:, i, j, :] = np.tensordot(patch, w, axes=([1, 2, 3], [0, 1, 2]))
    return out


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("size", [5, 6, 7])
def test_conv2d_matches_direct_loop(stride, size):
    rng = np.random.default_rng(size * 10 + stride)
    x = rng.standard_normal((3, size, size, 2))
    w = rng.standard_normal((5, 5, 2, 4))
    got = T.conv2d(Tensor(x), Tensor(w), stride=stride).data
    np.testing.assert_allclose(got, _conv_reference(x, w, stride), rtol=1e-12, atol=1e-12)


def test_conv2d_batched_weights():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 6, 6, 1))
    w = rng.standard_normal((2, 3, 3, 1, 2))
    got = T.conv2d(Tensor(x), Tensor(w)).data
    for g in range(2):
        np.testing.assert_allclose(got[g], _conv_reference(x[g], w[g], 1), atol=1e-12)


def test_conv2d_batched_gradient():
    rng = np.random.default_rng(4)
    x, w = leaf(rng, 2, 2, 4, 4, 1), leaf(rng, 2, 3, 3, 1, 2)
    assert gradcheck(lambda: T.conv2d(x, w), [x, w]) < TOL


def test_same_padding_values():
    assert T.same_padding(28, 5, 1) == (28, 2, 2)
    assert T.same_padding(28, 5, 2) == (14, 1, 2)


def test_nonfinite_values_are_reported_with_op():
    a = Tensor(np.array([-1.0, 1.0]))
    with pytest.raises(T.NonFiniteError, match="log"):
        T.log(a)
    with pytest.raises(T.NonFiniteError):
        Tensor([np.nan])


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = T.exp(x)
    assert not y.requires_grad
    assert T.is_grad_enabled()


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x
    (g,) = T.grad(T.sum_(y), [x])
    assert g.tolist() == [5.0]


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    (g,) = T.grad(T.sum_(y), [x])
    assert g.tolist() == [1.0]


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=finite))
def test_log_softmax_rows_normalize(a):
    p = np.exp(T.log_softmax(Tensor(a)).data)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=finite))
def test_pairwise_sqdist_matches_definition(a):
    d = T.pairwise_sqdist(Tensor(a)).data
    ref = ((a[:, None, :] - a[None, :, :]) ** 2).sum(-1)
    np.testing.assert_allclose(d, ref, atol=1e-9)
    assert np.all(d >= 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 4, 4, 1), elements=finite))
def test_maxpool_matches_reshape_max(a):
    got = T.maxpool2x2(Tensor(a)).data
    ref = a.reshape(2, 2, 2, 2, 2, 1).max(axis=(2, 4))
    np.testing.assert_array_equal(got, ref)
