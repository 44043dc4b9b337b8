"""Tensor core: forward semantics, backward correctness, FD verification."""

import numpy as np
import pytest

import promptseg.autodiff as ad
from promptseg.errors import ContractError, NumericsError, ShapeError
from promptseg.rng import CounterRng


def rnd(shape, seed=0, lo=-1.0, hi=1.0):
    r = CounterRng(seed, 77)
    return r.uniforms(int(np.prod(shape)), lo, hi).reshape(shape)


# -- forward basics ----------------------------------------------------------

def test_conv2d_1x1_kernel_is_scaling():
    x = ad.tensor(np.ones((1, 1, 2, 2)))
    w = ad.tensor(np.full((1, 1, 1, 1), 3.0))
    y = ad.conv2d(x, w, stride=1, padding=0)
    assert y.shape == (1, 1, 2, 2)
    assert np.allclose(y.data, 3.0)


def test_activation_symmetry_points():
    assert ad.gelu(ad.tensor([0.0])).data[0] == 0.0
    assert ad.sigmoid(ad.tensor([0.0])).data[0] == 0.5


def test_matmul_identity():
    a = ad.tensor([[1.0, 2.0], [3.0, 4.0]])
    y = ad.matmul(a, ad.tensor(np.eye(2)))
    assert np.array_equal(y.data, a.data)


def test_strict_add_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((3, 2))))
    # size-1 operands are fine
    y = ad.add(ad.tensor(np.zeros((2, 3))), ad.tensor(1.0))
    assert np.allclose(y.data, 1.0)


def test_primitive_dispatch():
    y = ad.primitive_forward("relu", ad.tensor([-1.0, 2.0]))
    assert np.array_equal(y.data, [0.0, 2.0])
    with pytest.raises(ContractError):
        ad.primitive_forward("no_such_op", ad.tensor([0.0]))


def test_forward_deterministic():
    x = rnd((4, 5), seed=3)
    w = rnd((5, 6), seed=4)
    y1 = ad.matmul(ad.gelu(ad.tensor(x)), ad.tensor(w)).data
    y2 = ad.matmul(ad.gelu(ad.tensor(x)), ad.tensor(w)).data
    assert np.array_equal(y1, y2)


def test_numerics_guards():
    with pytest.raises(NumericsError):
        ad.log(ad.tensor([0.0]))
    with pytest.raises(NumericsError):
        ad.div(ad.tensor([1.0]), ad.tensor([0.0]))
    with pytest.raises(NumericsError):
        ad.exp(ad.tensor([1000.0]))


# -- backward basics ----------------------------------------------------------

def test_backward_square_sum():
    x = ad.tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = ad.tsum(ad.mul(x, x))
    ad.backward(loss)
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_mean_sigmoid_at_zero():
    x = ad.tensor([0.0], requires_grad=True)
    ad.backward(ad.tmean(ad.sigmoid(x)))
    assert np.allclose(x.grad, [0.25])


def test_backward_rejects_nonscalar():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        ad.backward(ad.mul(x, x))


def test_two_consumer_fanout_sums():
    x = ad.tensor([1.5], requires_grad=True)
    y = ad.add(x, x)
    ad.backward(ad.tsum(y))
    assert np.allclose(x.grad, [2.0])


def test_repeated_backward_accumulates():
    x = ad.tensor([2.0], requires_grad=True)
    loss = ad.tsum(ad.mul(x, x))
    ad.backward(loss)
    ad.backward(loss)
    assert np.allclose(x.grad, [8.0])  # 2 * (2x)


def test_conv_relu_chain_matches_fd():
    x0 = rnd((1, 2, 5, 5), seed=11, lo=0.1, hi=0.9)
    w = rnd((3, 2, 3, 3), seed=12, lo=-0.5, hi=0.5)

    def f(wt):
        y = ad.conv2d(ad.tensor(x0), wt, stride=1, padding=1)
        return ad.tmean(ad.relu(y))

    rep = ad.finite_difference_check(f, ad.tensor(w), h=1e-5, tol=1e-4)
    assert rep.passed, rep


# -- FD checker itself ---------------------------------------------------------

def test_fd_check_constant_function():
    f = lambda t: ad.tsum(ad.mul(t, ad.tensor(np.zeros(4))))
    rep = ad.finite_difference_check(f, ad.tensor(np.ones(4)))
    assert rep.passed and rep.max_rel_err == 0.0


def test_fd_check_subsampling_deterministic():
    x = rnd((40,), seed=5)
    f = lambda t: ad.tsum(ad.mul(t, t))
    r1 = ad.finite_difference_check(f, ad.tensor(x), max_coords=7)
    r2 = ad.finite_difference_check(f, ad.tensor(x), max_coords=7)
    assert r1.n_coords == r2.n_coords <= 7
    assert r1.max_rel_err == r2.max_rel_err


# -- per-primitive gradients against FD ----------------------------------------

SMOOTH_UNARY = [
    ("gelu", ad.gelu, (-2.0, 2.0)),
    ("sigmoid", ad.sigmoid, (-3.0, 3.0)),
    ("tanh", ad.tanh, (-2.0, 2.0)),
    ("cos", ad.cos, (-3.0, 3.0)),
    ("exp", ad.exp, (-2.0, 1.0)),
    ("log", ad.log, (0.2, 3.0)),
    ("softplus", ad.softplus, (-3.0, 3.0)),
    ("softmax", ad.softmax, (-2.0, 2.0)),
]


@pytest.mark.parametrize("name,fn,rng", SMOOTH_UNARY, ids=[s[0] for s in SMOOTH_UNARY])
def test_unary_gradients(name, fn, rng):
    x = rnd((3, 7), seed=hash(name) % 1000, lo=rng[0], hi=rng[1])
    f = lambda t: ad.tmean(ad.mul(fn(t), ad.tensor(rnd((3, 7), seed=9))))
    rep = ad.finite_difference_check(f, ad.tensor(x))
    assert rep.passed, (name, rep)


def test_reduction_and_structural_gradients():
    x = rnd((2, 3, 4), seed=21, lo=0.1, hi=1.0)
    cases = [
        lambda t: ad.tsum(t),
        lambda t: ad.tmean(t, axis=(1, 2)).sum(),
        lambda t: ad.tsum(ad.amax(t, axis=2)),
        lambda t: ad.tsum(ad.amin(t, axis=(0, 1))),
        lambda t: ad.tsum(ad.reshape(t, (6, 4))[1:4, ::2]),
        lambda t: ad.tsum(ad.transpose(t, (2, 0, 1))),
        lambda t: ad.tsum(ad.concat([t, t], axis=1)),
        lambda t: ad.tsum(ad.clip(t, 0.3, 0.8)),
        lambda t: ad.tmean(ad.bilinear_upsample_2x(t)),
        lambda t: ad.tmean(ad.box_downsample(t, 2)),
        lambda t: ad.tsum(ad.adaptive_avg_pool_1x1(t)),
    ]
    for i, f in enumerate(cases):
        if i == 9:  # box_downsample needs even H, W
            xx = rnd((2, 4, 4), seed=22, lo=0.1, hi=1.0)
        else:
            xx = x
        rep = ad.finite_difference_check(f, ad.tensor(xx))
        assert rep.passed, (i, rep)


def test_binary_gradients():
    a = rnd((4, 4), seed=31, lo=0.5, hi=1.5)
    b = rnd((4, 4), seed=32, lo=0.5, hi=1.5)
    for name, fn in [("add", ad.add), ("sub", ad.sub), ("mul", ad.mul), ("div", ad.div),
                     ("min", ad.minimum), ("max", ad.maximum),
                     ("badd", ad.badd), ("bmul", ad.bmul)]:
        f = lambda t: ad.tmean(fn(t, ad.tensor(b)))
        rep = ad.finite_difference_check(f, ad.tensor(a))
        assert rep.passed, (name, rep)
        f2 = lambda t: ad.tmean(fn(ad.tensor(a), t))
        rep2 = ad.finite_difference_check(f2, ad.tensor(b))
        assert rep2.passed, (name, rep2)


def test_broadcast_gradients_reduce():
    a = rnd((3, 1, 5), seed=41)
    b = rnd((4, 5), seed=42, lo=0.5, hi=1.5)
    for fn in (ad.badd, ad.bsub, ad.bmul, ad.bdiv):
        f = lambda t: ad.tmean(fn(t, ad.tensor(b)))
        rep = ad.finite_difference_check(f, ad.tensor(a))
        assert rep.passed, rep
        g = lambda t: ad.tmean(fn(ad.tensor(a), t))
        rep = ad.finite_difference_check(g, ad.tensor(b))
        assert rep.passed, rep


def test_matmul_gradients():
    a = rnd((3, 4), seed=51)
    b = rnd((4, 2), seed=52)
    f = lambda t: ad.tsum(ad.matmul(t, ad.tensor(b)))
    assert ad.finite_difference_check(f, ad.tensor(a)).passed
    g = lambda t: ad.tsum(ad.matmul(ad.tensor(a), t))
    assert ad.finite_difference_check(g, ad.tensor(b)).passed
    # batched against shared weight
    ab = rnd((2, 3, 4), seed=53)
    gb = lambda t: ad.tsum(ad.matmul(ad.tensor(ab), t))
    assert ad.finite_difference_check(gb, ad.tensor(b)).passed
    fb = lambda t: ad.tsum(ad.matmul(t, ad.tensor(b)))
    assert ad.finite_difference_check(fb, ad.tensor(ab)).passed


def test_layer_norm_gradients():
    x = rnd((3, 6), seed=61)
    gmm = rnd((6,), seed=62, lo=0.5, hi=1.5)
    bta = rnd((6,), seed=63)
    f = lambda t: ad.tmean(ad.layer_norm(t, ad.tensor(gmm), ad.tensor(bta)))
    assert ad.finite_difference_check(f, ad.tensor(x)).passed
    fg = lambda t: ad.tmean(ad.layer_norm(ad.tensor(x), t, ad.tensor(bta)))
    assert ad.finite_difference_check(fg, ad.tensor(gmm)).passed
    fb = lambda t: ad.tmean(ad.layer_norm(ad.tensor(x), ad.tensor(gmm), t))
    assert ad.finite_difference_check(fb, ad.tensor(bta)).passed


def test_conv2d_gradients_all_parents():
    x = rnd((2, 3, 6, 6), seed=71, lo=0.1, hi=0.9)
    w = rnd((4, 3, 3, 3), seed=72, lo=-0.4, hi=0.4)
    b = rnd((4,), seed=73)
    tw, tb = ad.tensor(w), ad.tensor(b)
    f = lambda t: ad.tmean(ad.conv2d(t, tw, tb, stride=1, padding=1))
    assert ad.finite_difference_check(f, ad.tensor(x)).passed
    f = lambda t: ad.tmean(ad.conv2d(ad.tensor(x), t, tb, stride=1, padding=1))
    assert ad.finite_difference_check(f, ad.tensor(w)).passed
    f = lambda t: ad.tmean(ad.conv2d(ad.tensor(x), tw, t, stride=1, padding=1))
    assert ad.finite_difference_check(f, ad.tensor(b)).passed
    # strided (patch-embedding style)
    f = lambda t: ad.tmean(ad.conv2d(ad.tensor(x), t, stride=2, padding=0))
    w2 = rnd((5, 3, 2, 2), seed=74, lo=-0.4, hi=0.4)
    assert ad.finite_difference_check(f, ad.tensor(w2)).passed


def test_replicate_pad_gradient():
    x = rnd((2, 5, 5), seed=81)
    probe = ad.tensor(rnd((2, 9, 9), seed=82))
    f = lambda t: ad.tmean(ad.mul(ad.replicate_pad2d(t, 2), probe))
    rep = ad.finite_difference_check(f, ad.tensor(x))
    assert rep.passed, rep


def test_pow_const_gradient():
    x = rnd((5,), seed=91, lo=0.3, hi=1.2)
    f = lambda t: ad.tsum(ad.pow_const(t, 2.5))
    assert ad.finite_difference_check(f, ad.tensor(x)).passed


def test_grad_none_for_frozen_path():
    x = ad.tensor([1.0, 2.0], requires_grad=False)
    w = ad.tensor([3.0, 4.0], requires_grad=True)
    loss = ad.tsum(ad.mul(x, w))
    ad.backward(loss)
    assert x.grad is None
    assert np.allclose(w.grad, [1.0, 2.0])
