"""Unit tests of the tensor/autodiff core: oracles first, then gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfstereo import autodiff as ad
from selfstereo.autodiff import (
    DeterminismError,
    DomainError,
    NonFiniteError,
    ShapeError,
    TapeError,
    Tensor,
    backward,
    grad_check,
)

from conftest import seeded


# ---------------------------------------------------------------------------
# Tensor basics


def test_tensor_is_float64_and_frozen():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    with pytest.raises(ValueError):
        t.data[0, 0] = 9.0


def test_tensor_rejects_empty_extents():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 0, 3)))


def test_tensor_rejects_nan_and_inf():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_op_boundary_rejects_overflow():
    x = Tensor([800.0], requires_grad=True)
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        ad.exp(x)


def test_detach_leaves_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ad.square(x).detach()
    assert not y.requires_grad
    assert np.array_equal(y.data, [1.0, 4.0])


# ---------------------------------------------------------------------------
# elementwise ops


def test_abs_definition():
    assert np.array_equal(ad.absolute(Tensor([-2.0, 0.0, 3.0])).data, [2.0, 0.0, 3.0])


def test_add_zero_is_bit_exact_identity():
    x = Tensor(seeded(1).uniform(-5, 5, (3, 4)))
    y = ad.add(x, 0.0)
    assert np.array_equal(y.data, x.data)


def test_square_gradient_fixture():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ad.reduce_sum(ad.square(x)))
    assert np.allclose(x.grad, [2.0, 4.0], rtol=0, atol=1e-12)


def test_div_by_zero_element_is_domain_error():
    with pytest.raises(DomainError):
        ad.div(Tensor([1.0, 2.0]), Tensor([1.0, 0.0]))


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_scalar_broadcast_allowed():
    y = ad.mul(Tensor(np.ones((2, 2))), Tensor(3.0))
    assert np.array_equal(y.data, np.full((2, 2), 3.0))


def test_clamp_min_values_and_subgradient():
    x = Tensor([-1.0, 0.5, 2.0], requires_grad=True)
    y = ad.clamp_min(x, 0.0)
    assert np.array_equal(y.data, [0.0, 0.5, 2.0])
    backward(ad.reduce_sum(y))
    assert np.array_equal(x.grad, [0.0, 1.0, 1.0])


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_elementwise_grads_match_finite_differences(seed):
    rng = seeded(seed)
    x = Tensor(rng.uniform(0.2, 2.0, (2, 3)), requires_grad=True)

    def f(t):
        return ad.reduce_mean(ad.mul(ad.exp(ad.neg(t)), ad.add(ad.square(t), ad.absolute(t))))

    assert grad_check(f, x) < 1e-6


# ---------------------------------------------------------------------------
# reductions


def test_mean_constant():
    assert ad.reduce_mean(Tensor(np.full((2, 2), 3.0))).item() == 3.0


def test_sum_ones():
    assert ad.reduce_sum(Tensor(np.ones((2, 3)))).item() == 6.0


def test_mean_gradient_is_one_over_n():
    x = Tensor(seeded(2).normal(size=(4, 5)), requires_grad=True)
    backward(ad.reduce_mean(x))
    assert np.allclose(x.grad, np.full((4, 5), 1.0 / 20.0), rtol=0, atol=1e-15)


def test_axis_reduce_and_invalid_axis():
    x = Tensor(np.arange(6, dtype=float).reshape(2, 3))
    assert np.array_equal(ad.reduce_sum(x, axes=(1,)).data, [3.0, 12.0])
    with pytest.raises(ShapeError):
        ad.reduce_sum(x, axes=(2,))


# ---------------------------------------------------------------------------
# convolution, with brute-force loop oracles written against the definition


def conv2d_oracle(x, k, b, stride, pad):
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    xp = np.zeros((c_in, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + h, pad:pad + w] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += xp[c, i * stride + u, j * stride + v] * k[o, c, u, v]
                out[o, i, j] = acc + b[o]
    return out


def conv3d_oracle(x, k, b, stride, pad):
    c_in, d, h, w = x.shape
    c_out, _, kd, kh, kw = k.shape
    xp = np.zeros((c_in, d + 2 * pad, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + d, pad:pad + h, pad:pad + w] = x
    od = (d + 2 * pad - kd) // stride + 1
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, od, oh, ow))
    for o in range(c_out):
        for z in range(od):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for c in range(c_in):
                        for t in range(kd):
                            for u in range(kh):
                                for v in range(kw):
                                    acc += (
                                        xp[c, z * stride + t, i * stride + u, j * stride + v]
                                        * k[o, c, t, u, v]
                                    )
                    out[o, z, i, j] = acc + b[o]
    return out


def test_conv2d_identity_kernel():
    x = Tensor(seeded(3).uniform(size=(2, 4, 5)))
    k = np.zeros((2, 2, 1, 1))
    k[0, 0, 0, 0] = 1.0
    k[1, 1, 0, 0] = 1.0
    y = ad.conv2d(x, Tensor(k), Tensor(np.zeros(2)))
    assert np.array_equal(y.data, x.data)


def test_conv2d_all_ones_sum():
    y = ad.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    assert y.shape == (1, 1, 1)
    assert y.item() == 9.0


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        ad.conv2d(Tensor(np.ones((3, 4, 4))), Tensor(np.ones((1, 2, 3, 3))), Tensor(np.zeros(1)))


@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.sampled_from([0, 1, 2]))
@settings(max_examples=30, deadline=None)
def test_conv2d_matches_loop_oracle(seed, stride, pad):
    rng = seeded(seed)
    x = rng.normal(size=(2, 5, 6))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=pad)
    want = conv2d_oracle(x, k, b, stride, pad)
    assert np.max(np.abs(got.data - want)) < 1e-12


@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.sampled_from([0, 1]))
@settings(max_examples=15, deadline=None)
def test_conv3d_matches_loop_oracle(seed, stride, pad):
    rng = seeded(seed)
    x = rng.normal(size=(2, 4, 4, 5))
    k = rng.normal(size=(2, 2, 3, 3, 3))
    b = rng.normal(size=2)
    got = ad.conv3d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=pad)
    want = conv3d_oracle(x, k, b, stride, pad)
    assert np.max(np.abs(got.data - want)) < 1e-12


def test_conv3d_identity_and_ones():
    x = Tensor(seeded(4).uniform(size=(1, 3, 3, 3)))
    k = np.ones((1, 1, 1, 1, 1))
    assert np.array_equal(ad.conv3d(x, Tensor(k), Tensor(np.zeros(1))).data, x.data)
    y = ad.conv3d(Tensor(np.ones((1, 3, 3, 3))), Tensor(np.ones((1, 1, 3, 3, 3))), Tensor(np.zeros(1)))
    assert y.item() == 27.0


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_gradients(stride, pad):
    rng = seeded(5)
    k = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    x = Tensor(rng.normal(size=(2, 5, 6)), requires_grad=True)

    def fx(t):
        return ad.reduce_mean(ad.square(ad.conv2d(t, k.detach(), b.detach(), stride, pad)))

    def fk(t):
        return ad.reduce_mean(ad.square(ad.conv2d(x.detach(), t, b.detach(), stride, pad)))

    def fb(t):
        return ad.reduce_mean(ad.square(ad.conv2d(x.detach(), k.detach(), t, stride, pad)))

    assert grad_check(fx, x) < 1e-5
    assert grad_check(fk, k) < 1e-5
    assert grad_check(fb, b) < 1e-5


def test_conv3d_gradients():
    rng = seeded(6)
    x = Tensor(rng.normal(size=(1, 3, 4, 4)), requires_grad=True)
    k = Tensor(rng.normal(size=(2, 1, 3, 3, 3)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)

    def fx(t):
        return ad.reduce_mean(ad.square(ad.conv3d(t, k.detach(), b.detach(), padding=1)))

    def fk(t):
        return ad.reduce_mean(ad.square(ad.conv3d(x.detach(), t, b.detach(), padding=1)))

    assert grad_check(fx, x) < 1e-5
    assert grad_check(fk, k) < 1e-5


# ---------------------------------------------------------------------------
# softmax / pooling / upsampling


def test_softmax_uniform_and_stability():
    y = ad.softmax_axis(Tensor(np.zeros(4)), axis=0)
    assert np.allclose(y.data, 0.25, rtol=0, atol=1e-15)
    z = ad.softmax_axis(Tensor([1000.0, 0.0]), axis=0)
    assert np.all(np.isfinite(z.data))
    assert abs(z.data[0] - 1.0) < 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_softmax_slices_sum_to_one(seed):
    rng = seeded(seed)
    x = Tensor(rng.normal(scale=5.0, size=(3, 4, 2)))
    axis = int(rng.integers(0, 3))
    y = ad.softmax_axis(x, axis=axis)
    assert np.all(y.data >= 0.0) and np.all(y.data <= 1.0)
    assert np.max(np.abs(y.data.sum(axis=axis) - 1.0)) < 1e-12


def test_softmax_gradient():
    x = Tensor(seeded(7).normal(size=3), requires_grad=True)

    def f(t):
        return ad.reduce_sum(ad.square(ad.softmax_axis(t, axis=0)))

    assert grad_check(f, x) < 1e-6


def test_avg_pool_full_window_equals_mean():
    x = Tensor(seeded(8).uniform(size=(2, 4, 4)))
    y = ad.avg_pool2d(x, 4, 4)
    assert y.shape == (2, 1, 1)
    assert np.max(np.abs(y.data[:, 0, 0] - x.data.mean(axis=(1, 2)))) < 1e-15


def test_avg_pool_fixture():
    y = ad.avg_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
    assert y.shape == (1, 1, 1)
    assert y.item() == 2.5


def avg_pool_oracle(x, window, stride):
    c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((c, oh, ow))
    for ci in range(c):
        for i in range(oh):
            for j in range(ow):
                out[ci, i, j] = x[ci, i * stride:i * stride + window,
                                  j * stride:j * stride + window].mean()
    return out


@given(st.integers(0, 10_000), st.sampled_from([(2, 2), (3, 1), (2, 1)]))
@settings(max_examples=20, deadline=None)
def test_avg_pool_matches_oracle(seed, spec):
    window, stride = spec
    x = seeded(seed).normal(size=(2, 5, 6))
    got = ad.avg_pool2d(Tensor(x), window, stride)
    assert np.max(np.abs(got.data - avg_pool_oracle(x, window, stride))) < 1e-12


def test_avg_pool_gradient():
    x = Tensor(seeded(9).normal(size=(1, 4, 4)), requires_grad=True)

    def f(t):
        return ad.reduce_mean(ad.square(ad.avg_pool2d(t, 2, 2)))

    assert grad_check(f, x) < 1e-6


def test_upsample_same_size_is_identity():
    x = Tensor(seeded(10).uniform(size=(2, 3, 5)))
    y = ad.upsample_bilinear2d(x, 3, 5)
    assert np.array_equal(y.data, x.data)


def test_upsample_constant_fill_from_single_pixel():
    y = ad.upsample_bilinear2d(Tensor([[[7.0]]]), 4, 4)
    assert np.array_equal(y.data, np.full((1, 4, 4), 7.0))


def test_upsample_gradients():
    x2 = Tensor(seeded(11).normal(size=(1, 3, 4)), requires_grad=True)
    x3 = Tensor(seeded(12).normal(size=(1, 3, 3, 4)), requires_grad=True)

    def f2(t):
        return ad.reduce_mean(ad.square(ad.upsample_bilinear2d(t, 6, 7)))

    def f3(t):
        return ad.reduce_mean(ad.square(ad.upsample_trilinear3d(t, 5, 6, 7)))

    assert grad_check(f2, x2) < 1e-5
    assert grad_check(f3, x3) < 1e-5


def test_diff_ops_gradients():
    x = Tensor(seeded(13).normal(size=(4, 5)), requires_grad=True)

    def fwd(t):
        return ad.reduce_mean(ad.square(ad.diff_forward(t, axis=1)))

    def snd(t):
        return ad.reduce_mean(ad.square(ad.diff_second(t, axis=0)))

    assert grad_check(fwd, x) < 1e-6
    assert grad_check(snd, x) < 1e-6


def test_concat_and_reshape_gradients():
    x = Tensor(seeded(14).normal(size=(2, 3)), requires_grad=True)

    def f(t):
        stacked = ad.concat([t, ad.square(t)], axis=0)
        return ad.reduce_mean(ad.square(ad.reshape(stacked, (12,))))

    assert grad_check(f, x) < 1e-6


# ---------------------------------------------------------------------------
# backward semantics and the tape


def test_backward_sum_gives_ones():
    x = Tensor(seeded(15).normal(size=(3, 2)), requires_grad=True)
    backward(ad.reduce_sum(x))
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_backward_mean_square_fixture():
    x = Tensor([3.0], requires_grad=True)
    backward(ad.reduce_mean(ad.square(x)))
    assert np.allclose(x.grad, [6.0], rtol=0, atol=1e-12)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(TapeError):
        backward(ad.square(x))


def test_tape_is_single_use():
    x = Tensor([2.0], requires_grad=True)
    loss = ad.reduce_sum(ad.square(x))
    backward(loss)
    with pytest.raises(TapeError):
        backward(loss)


def test_backward_off_tape_loss():
    with pytest.raises(TapeError):
        backward(ad.reduce_sum(Tensor(np.ones(3))))


def test_gradient_accumulates_across_shared_use():
    x = Tensor([1.5], requires_grad=True)
    y = ad.add(ad.square(x), ad.square(x))
    backward(ad.reduce_sum(y))
    assert np.allclose(x.grad, [6.0], rtol=0, atol=1e-12)  # 2 * 2x


def test_no_grad_suppresses_recording():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ad.no_grad():
        y = ad.square(x)
    assert y._tape is None
    with pytest.raises(TapeError):
        backward(ad.reduce_sum(y))


# ---------------------------------------------------------------------------
# grad_check itself


def test_grad_check_sum_is_near_machine_precision():
    # For a linear map the only residual is rounding in the central difference.
    x = Tensor(seeded(16).normal(size=(2, 2)), requires_grad=True)
    assert grad_check(ad.reduce_sum, x) < 1e-10


def test_grad_check_mean_square():
    x = Tensor(seeded(17).normal(size=(3,)), requires_grad=True)

    def f(t):
        return ad.reduce_mean(ad.square(t))

    assert grad_check(f, x) < 1e-6


def test_grad_check_detects_nondeterminism():
    x = Tensor([1.0], requires_grad=True)
    state = {"n": 0}

    def flaky(t):
        state["n"] += 1
        return ad.reduce_sum(ad.mul(t, float(state["n"])))

    with pytest.raises(DeterminismError):
        grad_check(flaky, x)


def test_forward_passes_are_bit_identical():
    def forward():
        rng = seeded(18)
        x = Tensor(rng.normal(size=(2, 6, 6)))
        k = Tensor(rng.normal(size=(3, 2, 3, 3)))
        y = ad.conv2d(x, k, Tensor(np.zeros(3)), stride=2, padding=1)
        return ad.softmax_axis(y, axis=0).data

    assert np.array_equal(forward(), forward())
