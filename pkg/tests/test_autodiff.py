import math

import numpy as np
import pytest

from pulsesep import autodiff as ad
from pulsesep.autodiff import (
    AutodiffError,
    GradTape,
    ParamLayer,
    Tensor,
    backward,
    bce,
    concat_channels,
    conv1d,
    sigmoid,
    sum_squares,
    transposed_conv1d,
)

from oracles import (
    central_difference,
    max_relative_error,
    naive_conv1d,
    naive_transposed_conv1d,
)


def conv_layer(w, b, stride=1, padding=0, activation="identity",
               kind="conv1d"):
    return ParamLayer(kind, Tensor(np.asarray(w, float)),
                      Tensor(np.asarray(b, float)), stride, padding, activation)


def test_tensor_rejects_nonfinite():
    with pytest.raises(AutodiffError):
        Tensor([1.0, np.nan])
    with pytest.raises(AutodiffError):
        Tensor([np.inf])


def test_conv1d_identity_kernel():
    layer = conv_layer([[[1.0]]], [0.0])
    out = conv1d(Tensor([[[1.0, 2.0, 3.0, 4.0]]]), layer)
    np.testing.assert_array_equal(out.data, [[[1.0, 2.0, 3.0, 4.0]]])


def test_conv1d_zero_kernel():
    layer = conv_layer([[[0.0, 0.0]]], [0.0])
    out = conv1d(Tensor([[[1.0, 2.0, 3.0, 4.0]]]), layer)
    np.testing.assert_array_equal(out.data, np.zeros((1, 1, 3)))


def test_conv1d_box_kernel_matches_direct_summation():
    x = [[[1.0, 2.0, 3.0, 4.0]]]
    w = [[[1.0, 1.0]]]
    oracle = naive_conv1d(x, w, [0.0])
    np.testing.assert_array_equal(oracle, [[[3.0, 5.0, 7.0]]])
    out = conv1d(Tensor(x), conv_layer(w, [0.0]))
    np.testing.assert_allclose(out.data, [[[3.0, 5.0, 7.0]]], atol=0)


@pytest.mark.parametrize("b,ci,co,l,k,stride,pad", [
    (1, 1, 1, 8, 3, 1, 0),
    (2, 3, 4, 16, 5, 2, 2),
    (2, 2, 3, 11, 4, 3, 1),
])
def test_conv1d_random_matches_oracle(b, ci, co, l, k, stride, pad):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(b, ci, l))
    w = rng.normal(size=(co, ci, k))
    bias = rng.normal(size=co)
    out = conv1d(Tensor(x), conv_layer(w, bias, stride, pad))
    np.testing.assert_allclose(out.data, naive_conv1d(x, w, bias, stride, pad),
                               rtol=1e-12, atol=1e-12)


def test_conv1d_shape_mismatch_reports_both_shapes():
    layer = conv_layer(np.zeros((1, 2, 3)), [0.0])
    with pytest.raises(AutodiffError) as err:
        conv1d(Tensor(np.zeros((1, 1, 8))), layer)
    assert "(1, 1, 8)" in str(err.value) and "(1, 2, 3)" in str(err.value)


def test_conv1d_wrong_kind_rejected():
    layer = conv_layer(np.zeros((1, 1, 2)), [0.0], kind="transposed-conv1d")
    with pytest.raises(AutodiffError):
        conv1d(Tensor(np.zeros((1, 1, 8))), layer)


def test_transposed_conv_output_length():
    # input length 3, K=2, stride 2, pad 0 -> length 6
    layer = conv_layer(np.ones((1, 1, 2)), [0.0], stride=2,
                       kind="transposed-conv1d")
    out = transposed_conv1d(Tensor(np.zeros((1, 1, 3))), layer)
    assert out.shape == (1, 1, 6)


def test_transposed_conv_matches_direct_summation():
    x = [[[1.0, 0.0]]]
    w = [[[1.0, 1.0]]]
    oracle = naive_transposed_conv1d(x, w, [0.0])
    np.testing.assert_array_equal(oracle, [[[1.0, 1.0, 0.0]]])
    layer = conv_layer(w, [0.0], kind="transposed-conv1d")
    out = transposed_conv1d(Tensor(x), layer)
    np.testing.assert_array_equal(out.data, [[[1.0, 1.0, 0.0]]])


def test_transposed_conv_zero_input_zero_output():
    layer = conv_layer(np.ones((2, 3, 4)), np.zeros(2), stride=2,
                       kind="transposed-conv1d")
    out = transposed_conv1d(Tensor(np.zeros((1, 3, 5))), layer)
    assert not out.data.any()


@pytest.mark.parametrize("b,ci,co,l,k,stride,pad", [
    (1, 1, 1, 5, 2, 2, 0),
    (2, 3, 2, 7, 4, 2, 1),
    (1, 2, 2, 6, 5, 3, 2),
])
def test_transposed_conv_random_matches_oracle(b, ci, co, l, k, stride, pad):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(b, ci, l))
    w = rng.normal(size=(co, ci, k))
    bias = rng.normal(size=co)
    layer = conv_layer(w, bias, stride, pad, kind="transposed-conv1d")
    out = transposed_conv1d(Tensor(x), layer)
    np.testing.assert_allclose(
        out.data, naive_transposed_conv1d(x, w, bias, stride, pad),
        rtol=1e-12, atol=1e-12)


def test_sigmoid_values():
    out = sigmoid(Tensor([0.0, 50.0, math.log(3.0)]))
    assert out.data[0] == 0.5
    assert abs(out.data[1] - 1.0) < 1e-15
    assert abs(out.data[2] - 0.75) < 1e-12
    # open-interval range holds away from float saturation
    moderate = sigmoid(Tensor(np.linspace(-30, 30, 101))).data
    assert np.all((moderate > 0) & (moderate < 1))


def test_bce_values():
    half = Tensor(np.full(4, 0.5))
    target = Tensor([0.0, 1.0, 0.3, 0.9])
    assert abs(bce(half, target).item() - math.log(2.0)) < 1e-12

    # perfect match at the clamp boundary: residual is eps * |ln eps| ~ 1.7e-6
    almost_one = Tensor(np.full(3, 1.0 - ad.BCE_EPS))
    assert bce(almost_one, almost_one).item() < 1e-5

    out = bce(Tensor([0.75]), Tensor([1.0]))
    assert abs(out.item() - (-math.log(0.75))) < 1e-12

    # x=[0,1], xhat=[0.25,0.75] -> mean(-ln 0.75, -ln 0.75)
    out = bce(Tensor([0.25, 0.75]), Tensor([0.0, 1.0]))
    assert abs(out.item() - (-math.log(0.75))) < 1e-12

    with pytest.raises(AutodiffError):
        bce(Tensor(np.full(3, 0.5)), Tensor(np.full(4, 0.5)))


def test_backward_linear_case():
    # loss = sum(w * x) for fixed x -> grad w = x
    x = np.array([[[1.0, -2.0, 3.0]]])
    layer = conv_layer(np.array([[[2.0]]]), [0.0])
    with GradTape() as tape:
        y = conv1d(Tensor(x), layer)
        loss = sum_squares(y)  # placeholder graph; replaced below
    # direct linear case via masked sum: use conv with kernel 1 and sum
    layer2 = conv_layer(np.array([[[0.5]]]), [0.0])
    with GradTape() as tape2:
        y2 = conv1d(Tensor(x), layer2)
        s = ad.scale(sum_squares(y2), 1.0)
    backward(s, tape2)
    # d/dw sum((w*x)^2) = sum(2*w*x^2)
    expected = np.sum(2.0 * 0.5 * x * x)
    assert abs(layer2.weights.grad[0, 0, 0] - expected) < 1e-12


def test_backward_twice_is_an_error():
    layer = conv_layer(np.ones((1, 1, 1)), [0.0])
    with GradTape() as tape:
        y = conv1d(Tensor(np.ones((1, 1, 4))), layer)
        loss = sum_squares(y)
    backward(loss, tape)
    with pytest.raises(AutodiffError):
        backward(loss, tape)


def test_unreached_parameters_get_zero_gradients():
    used = conv_layer(np.ones((1, 1, 1)), [0.0])
    unused = conv_layer(np.ones((1, 1, 1)), [0.0])
    with GradTape() as tape:
        y = conv1d(Tensor(np.ones((1, 1, 4))), used)
        loss = sum_squares(y)
    backward(loss, tape, parameters=used.parameters() + unused.parameters())
    assert unused.weights.grad is not None
    assert not unused.weights.grad.any()
    assert used.weights.grad.any()


def test_conv_backward_input_gradients_match_oracle():
    # shapes up to [2,3,16], random layers; FD on the input itself
    rng = np.random.default_rng(3)
    for (b, ci, l, co, k, stride, pad) in [
        (1, 1, 6, 1, 3, 1, 0), (2, 3, 16, 2, 5, 2, 2), (2, 2, 9, 3, 3, 3, 1),
    ]:
        x = rng.normal(size=(b, ci, l))
        w = rng.normal(size=(co, ci, k))
        bias = rng.normal(size=co)
        layer = conv_layer(w, bias, stride, pad, activation="relu")
        xt = Tensor(x, copy=True)
        with GradTape() as tape:
            y = conv1d(xt, layer)
            loss = sum_squares(y)
        backward(loss, tape)

        def f():
            out = naive_conv1d(xt.data, w, bias, stride, pad)
            return float(np.sum(np.maximum(out, 0.0) ** 2))

        fd = central_difference(f, xt.data)
        assert max_relative_error(xt.grad, fd) < 1e-4


def test_transposed_conv_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 2, 6))
    w = rng.normal(size=(3, 2, 4))
    bias = rng.normal(size=3)
    layer = conv_layer(w, bias, stride=2, padding=1,
                       kind="transposed-conv1d", activation="sigmoid")
    xt = Tensor(x, copy=True)
    with GradTape() as tape:
        y = transposed_conv1d(xt, layer)
        loss = bce(y, Tensor(np.full(y.shape, 0.25)))
    backward(loss, tape)

    def f():
        pre = naive_transposed_conv1d(xt.data, layer.weights.data,
                                      layer.bias.data, 2, 1)
        p = np.clip(1.0 / (1.0 + np.exp(-pre)), ad.BCE_EPS, 1 - ad.BCE_EPS)
        t = 0.25
        return float(-np.mean(t * np.log(p) + (1 - t) * np.log1p(-p)))

    for tensor in (xt, layer.weights, layer.bias):
        fd = central_difference(f, tensor.data)
        assert max_relative_error(tensor.grad, fd) < 1e-4


def test_concat_channels_forward_and_backward():
    a = Tensor(np.ones((2, 1, 4)))
    b = Tensor(np.full((2, 2, 4), 2.0))
    with GradTape() as tape:
        z = concat_channels([a, b])
        loss = sum_squares(z)
    assert z.shape == (2, 3, 4)
    backward(loss, tape)
    np.testing.assert_array_equal(a.grad, 2.0 * a.data)
    np.testing.assert_array_equal(b.grad, 2.0 * b.data)


def test_ops_are_deterministic():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(2, 3, 32))
    layer = conv_layer(rng.normal(size=(4, 3, 7)), rng.normal(size=4),
                       stride=2, padding=3, activation="relu")
    first = conv1d(Tensor(x), layer).data
    second = conv1d(Tensor(x), layer).data
    np.testing.assert_array_equal(first, second)
