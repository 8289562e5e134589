import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emtts import autodiff as ad
from emtts.autodiff import GradientError, Parameter, Tape, Tensor, backward, gaussian_init, grad_check
from emtts.layers import conv1d, conv1d_forward, conv1d_transpose, highway_conv_block
from oracles import conv_oracle, deconv_oracle, sigmoid


def grads_of(f, *params):
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    return [p.grad for p in params]


# --- gaussian_init ----------------------------------------------------------

def test_gaussian_init_is_reproducible():
    a = gaussian_init([2, 2], 1.0, 7)
    b = gaussian_init([2, 2], 1.0, 7)
    assert np.array_equal(a.data, b.data)


def test_gaussian_init_statistics():
    x = gaussian_init([10000], 0.1, 3).data
    assert abs(x.mean()) <= 0.01
    assert 0.09 <= x.std() <= 0.11


@pytest.mark.parametrize("shape,std", [([2, 2], 0.0), ([0, 3], 1.0), ([], 1.0)])
def test_gaussian_init_rejects_bad_requests(shape, std):
    with pytest.raises(ValueError):
        gaussian_init(shape, std, 0)


# --- conv1d -----------------------------------------------------------------

def test_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 9))
    out = conv1d(Tensor(x), Tensor(np.ones((1, 1, 1))), Tensor(np.zeros(1)))
    assert np.array_equal(out.data, x)


def test_causal_delay_tap_convention():
    out = conv1d(Tensor(np.array([[1.0, 2.0, 3.0]])), Tensor(np.array([[[1.0, 0.0]]])),
                 causal=True)
    assert out.data.tolist() == [[0.0, 1.0, 2.0]]


@pytest.mark.parametrize("k,d,causal", [(3, 2, False), (3, 1, True), (3, 9, True), (5, 3, False),
                                        (1, 1, False), (2, 4, True)])
def test_conv_matches_loop_oracle(k, d, causal):
    rng = np.random.default_rng(k * 100 + d)
    x, w, b = rng.normal(size=(3, 13)), rng.normal(size=(4, 3, k)), rng.normal(size=4)
    out = conv1d(Tensor(x), Tensor(w), Tensor(b), d, causal).data
    np.testing.assert_allclose(out, conv_oracle(x, w, b, d, causal), rtol=0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3])
@pytest.mark.parametrize("d", [1, 3, 9, 27])
def test_conv_preserves_length(k, d):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2, 11))
    for causal in (False, True):
        assert conv1d_forward(x, rng.normal(size=(3, 2, k)), None, d, causal).shape == (2, 3, 11)


def test_conv_batched_equals_per_item():
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=(3, 2, 8)), rng.normal(size=(5, 2, 3)), rng.normal(size=5)
    batched = conv1d(Tensor(x), Tensor(w), Tensor(b), 2, True).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], conv_oracle(x[i], w, b, 2, True), atol=1e-12)


def test_conv_rejects_even_noncausal_kernel_and_channel_mismatch():
    x = Tensor(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        conv1d(x, Tensor(np.zeros((1, 2, 2))))
    with pytest.raises(ValueError):
        conv1d(x, Tensor(np.zeros((1, 3, 3))))


@settings(max_examples=25, deadline=None)
@given(k=st.sampled_from([1, 2, 3]), d=st.integers(1, 4), t=st.integers(1, 12),
       cut=st.integers(0, 11), seed=st.integers(0, 2**16))
def test_causal_conv_ignores_future(k, d, t, cut, seed):
    cut = min(cut, t - 1)
    rng = np.random.default_rng(seed)
    x, w = rng.normal(size=(2, t)), rng.normal(size=(2, 2, k))
    y = x.copy()
    y[:, cut + 1:] += rng.normal(size=(2, t - cut - 1))
    a = conv1d_forward(x, w, None, d, True)
    b = conv1d_forward(y, w, None, d, True)
    np.testing.assert_allclose(a[:, :cut + 1], b[:, :cut + 1], rtol=0, atol=1e-12)


# --- transposed conv --------------------------------------------------------

def test_deconv_scatter_example():
    out = conv1d_transpose(Tensor(np.array([[1.0, 2.0]])), Tensor(np.ones((1, 1, 2))))
    assert out.data.tolist() == [[1.0, 1.0, 2.0, 2.0]]


def test_deconv_zero_input():
    w = np.random.default_rng(0).normal(size=(3, 2, 2))
    assert not conv1d_transpose(Tensor(np.zeros((3, 4))), Tensor(w)).data.any()


def test_deconv_matches_scatter_oracle_and_quadruples_twice():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(3, 7)), rng.normal(size=(3, 2, 2))
    out = conv1d_transpose(Tensor(x), Tensor(w))
    np.testing.assert_allclose(out.data, deconv_oracle(x, w), rtol=0, atol=1e-12)
    twice = conv1d_transpose(out, Tensor(rng.normal(size=(2, 5, 2))))
    assert twice.shape == (5, 28)


def test_deconv_rejects_other_strides():
    with pytest.raises(ValueError):
        conv1d_transpose(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 1, 2))), stride=3)


# --- highway ----------------------------------------------------------------

def _highway_case(seed=5, c=3, k=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(c, 10)), rng.normal(size=(2 * c, c, k)), rng.normal(size=2 * c)


@pytest.mark.parametrize("causal", [False, True])
def test_highway_matches_composition(causal):
    x, w, b = _highway_case()
    h = conv_oracle(x, w, b, 2, causal)
    gate = sigmoid(h[:3])
    expect = gate * h[3:] + (1 - gate) * x
    out = highway_conv_block(Tensor(x), Tensor(w), Tensor(b), 2, causal).data
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_highway_closed_and_open_gates():
    x, w, b = _highway_case()
    closed, opened = b.copy(), b.copy()
    closed[:3], opened[:3] = -1e6, 1e6
    np.testing.assert_allclose(highway_conv_block(Tensor(x), Tensor(w), Tensor(closed)).data,
                               x, rtol=0, atol=1e-12)
    h2 = conv_oracle(x, w, opened, 1, False)[3:]
    np.testing.assert_allclose(highway_conv_block(Tensor(x), Tensor(w), Tensor(opened)).data,
                               h2, rtol=0, atol=1e-12)


def test_highway_rejects_wrong_width():
    x, w, b = _highway_case()
    with pytest.raises(ValueError):
        highway_conv_block(Tensor(x), Tensor(w[:4]), Tensor(b[:4]))


# --- softmax ----------------------------------------------------------------

def test_softmax_columns_examples():
    m = np.array([[0.0, math.log(1), 1000.0],
                  [0.0, math.log(2), 0.0],
                  [0.0, math.log(3), 0.0]])
    a = ad.softmax_columns(Tensor(m)).data
    np.testing.assert_allclose(a[:, 0], [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(a[:, 1], [1 / 6, 2 / 6, 3 / 6], atol=1e-15)
    np.testing.assert_allclose(a[:, 2], [1, 0, 0], atol=1e-15)
    assert np.isfinite(a).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.1, 300), st.integers(0, 2**16))
def test_softmax_columns_are_distributions(n, t, scale, seed):
    m = np.random.default_rng(seed).normal(size=(n, t)) * scale
    a = ad.softmax_columns(Tensor(m)).data
    assert np.all((a >= 0) & (a <= 1))
    np.testing.assert_allclose(a.sum(axis=0), 1.0, atol=1e-9)


# --- backward ---------------------------------------------------------------

def test_sum_and_quadratic_gradients():
    x = Parameter("x", np.random.default_rng(0).normal(size=(2, 3, 4)))
    (g,) = grads_of(lambda: ad.tsum(x), x)
    assert np.array_equal(g, np.ones_like(x.data))
    (g,) = grads_of(lambda: ad.mul(ad.tsum(ad.mul(x, x)), 0.5), x)
    np.testing.assert_allclose(g, x.data, rtol=0, atol=1e-15)


def test_backward_accumulates_until_reset():
    x = Parameter("x", np.array([1.0, -2.0]))
    for _ in range(2):
        with Tape() as tape:
            loss = ad.tsum(ad.mul(x, 3.0))
        backward(loss, tape)
    assert x.grad.tolist() == [6.0, 6.0]
    ad.zero_grads([x])
    assert x.grad is None


def test_backward_rejects_non_scalar():
    x = Parameter("x", np.ones(3))
    with Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(GradientError):
        backward(y, tape)


def test_shared_subexpression_gradients_add():
    x = Parameter("x", np.array([0.3, -0.7]))
    (g,) = grads_of(lambda: ad.tsum(ad.mul(ad.sigmoid(x), ad.sigmoid(x))), x)
    s = sigmoid(x.data)
    np.testing.assert_allclose(g, 2 * s * s * (1 - s), atol=1e-15)


def test_nothing_recorded_without_tape():
    x = Parameter("x", np.ones(2))
    y = ad.sigmoid(x)
    assert not y.requires_grad


def test_embedding_scatter_adds_repeated_ids():
    table = Parameter("t", np.arange(8.0).reshape(4, 2))
    (g,) = grads_of(lambda: ad.tsum(ad.embedding(table, np.array([[1, 1, 3]]))), table)
    assert g.tolist() == [[0, 0], [2, 2], [0, 0], [1, 1]]


def test_dropout_identity_without_rng_and_scaled_with():
    x = Tensor(np.ones((50, 40)))
    assert ad.dropout(x, 0.05, None) is x
    y = ad.dropout(x, 0.2, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 1.25}
    assert abs((y == 0).mean() - 0.2) < 0.03


# --- grad_check -------------------------------------------------------------

def test_grad_check_sigmoid_of_linear():
    rng = np.random.default_rng(0)
    w = Parameter("w", rng.normal(size=(3, 4)))
    x = rng.normal(size=(4, 2))
    assert grad_check(lambda: ad.tsum(ad.sigmoid(ad.matmul(w, x))), [w]) < 1e-6


def test_grad_check_catches_corrupted_rule():
    x = Parameter("x", np.random.default_rng(1).normal(size=5))

    def bad_square(t):
        return ad.primitive("bad_square", t.data ** 2, (t,), lambda g: (g * t.data,))  # should be 2x

    assert grad_check(lambda: ad.tsum(bad_square(x)), [x]) > 1e-2


def test_grad_check_constant_function():
    x = Parameter("x", np.ones(3))
    assert grad_check(lambda: ad.tsum(ad.mul(Tensor(np.ones(3)), 2.0)), [x]) == 0.0


def test_grad_check_requires_float64_and_finite_loss():
    with pytest.raises(GradientError):
        grad_check(lambda: ad.tsum(x32), [x32 := Parameter("x", np.ones(2, dtype=np.float32))])
    x = Parameter("x", np.array([-1.0, 2.0]))
    with pytest.raises(GradientError), np.errstate(invalid="ignore"):
        grad_check(lambda: ad.tsum(ad.log(x)), [x])


@pytest.mark.parametrize("causal,d", [(False, 1), (True, 3)])
def test_layer_gradients(causal, d):
    rng = np.random.default_rng(d)
    x = Parameter("x", rng.normal(size=(2, 3, 7)))
    w = Parameter("w", rng.normal(size=(6, 3, 3)))
    b = Parameter("b", rng.normal(size=6))
    r = rng.normal(size=(2, 3, 7))
    f = lambda: ad.tsum(ad.mul(highway_conv_block(x, w, b, d, causal), r))  # noqa: E731
    assert grad_check(f, [x, w, b]) < 1e-4


def test_forward_is_deterministic():
    x, w, b = _highway_case(9)
    a = highway_conv_block(Tensor(x), Tensor(w), Tensor(b), 3, True).data
    again = highway_conv_block(Tensor(x), Tensor(w), Tensor(b), 3, True).data
    assert a.tobytes() == again.tobytes()
