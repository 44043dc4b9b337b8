"""Prompt generator, tuning layers, and adaptor MLP contracts."""

import numpy as np
import pytest

import promptseg.autodiff as ad
from promptseg.autodiff import Tensor
from promptseg.blocks import (DiffAdaptor, EmbeddingTune, Linear, PromptGenerator,
                              ShallowEncoder, VPTune)
from promptseg.errors import ContractError, ShapeError
from promptseg.rng import CounterRng


def rnd_img(seed, h=16, w=16, n=None):
    r = CounterRng(seed, 5)
    if n is None:
        return Tensor(r.uniforms(3 * h * w, 0.1, 0.9).reshape(3, h, w))
    return Tensor(r.uniforms(n * 3 * h * w, 0.1, 0.9).reshape(n, 3, h, w))


def test_encoder_dim_independent_of_resolution():
    enc = ShallowEncoder(24, CounterRng(1, 1))
    for size in (16, 32, 64):
        out = enc(rnd_img(2, size, size))
        assert out.shape == (1, 24)


def test_encoder_has_exactly_five_convs():
    enc = ShallowEncoder(8, CounterRng(2, 1))
    assert len(enc.convs) == 5
    assert [w.shape[0] for w, _ in enc.convs] == [16, 32, 32, 64, 64]
    assert all(w.shape[2:] == (3, 3) for w, _ in enc.convs)


def test_encoder_zero_weights_give_bias_embedding():
    enc = ShallowEncoder(6, CounterRng(3, 1))
    for w, b in enc.convs:
        w.data[:] = 0.0
        b.data[:] = 0.0
    enc.fc.w.data[:] = 0.0
    enc.fc.b.data[:] = np.arange(6, dtype=np.float64)
    out = enc(rnd_img(4))
    assert np.allclose(out.data[0], np.arange(6))


def test_prompt_generator_contracts():
    gen = PromptGenerator(8, CounterRng(5, 1))
    out = gen(rnd_img(6))
    assert out.image.shape == (1, 3, 16, 16)
    assert out.embedding.shape == (1, 8)
    assert np.isfinite(out.embedding.data).all()
    assert out.image.data.min() >= 0.0 and out.image.data.max() <= 1.0
    with pytest.raises(ShapeError):
        gen(Tensor(np.zeros((3, 12, 12))))  # not a power of two
    with pytest.raises(ContractError):
        gen(Tensor(np.full((3, 16, 16), 1.5)))  # out of range


def test_prompt_generator_zero_encoder_golden_deterministic():
    gen = PromptGenerator(8, CounterRng(7, 1))
    for w, b in gen.encoder.convs:
        w.data[:] = 0.0
        b.data[:] = 0.0
    gen.encoder.fc.w.data[:] = 0.0
    gen.encoder.fc.b.data[:] = 0.3
    img = rnd_img(8)
    a = gen(img, hfc_mode="hard")
    b2 = gen(img, hfc_mode="hard")
    assert np.allclose(a.embedding.data, 0.3)
    assert np.array_equal(a.image.data, b2.image.data)


def test_gradcheck_through_prompt_generator():
    gen = PromptGenerator(6, CounterRng(9, 1))
    img = rnd_img(10, 16, 16)
    w0 = gen.encoder.convs[0][0]

    from promptseg.gradcheck import check_param
    rep = check_param(lambda: ad.tmean(gen(img, hfc_mode="soft").image), w0, max_coords=6)
    assert rep.passed, rep


def test_vptune_token_counts():
    vp = VPTune(8, 12, CounterRng(11, 1))
    img = rnd_img(12, 32, 32)
    tokens = vp(img)
    assert tokens.shape == (1, 16, 12)
    const = Tensor(np.full((3, 32, 32), 0.4))
    t2 = vp(const)
    assert np.allclose(t2.data, t2.data[0, 0])  # all tokens identical
    vp_full = VPTune(16, 5, CounterRng(12, 1))
    t3 = vp_full(rnd_img(13, 16, 16))
    assert t3.shape == (1, 1, 5)
    with pytest.raises(ShapeError):
        vp(rnd_img(14, 20, 20))


def test_embedding_tune_per_token_map():
    et = EmbeddingTune(6, 4, CounterRng(15, 1))
    feats = Tensor(CounterRng(16, 1).uniforms(2 * 5 * 6).reshape(2, 5, 6))
    out = et(feats)
    assert out.shape == (2, 5, 4)
    zero = et(Tensor(np.zeros((1, 3, 6))))
    assert np.allclose(zero.data, et.b.data)  # bias-only tokens
    perm = [3, 1, 4, 0, 2]
    out_p = et(Tensor(feats.data[:, perm]))
    assert np.allclose(out_p.data, out.data[:, perm])  # token equivariance


def test_adaptor_layer_delta():
    rng = CounterRng(17, 1)
    a = DiffAdaptor([0, 1], embed_dim=6, patch=4, d_mid=4, d_model=8, rng=rng)
    shared = Linear(4, 8, rng.child(9))
    vp_tokens = Tensor(CounterRng(18, 1).uniforms(1 * 4 * 4).reshape(1, 4, 4))
    feat = Tensor(CounterRng(19, 1).uniforms(1 * 4 * 8).reshape(1, 4, 8))
    d0 = a.layer_delta(0, vp_tokens, feat, shared)
    d1 = a.layer_delta(1, vp_tokens, feat, shared)
    assert d0.shape == (1, 4, 8)
    assert not np.allclose(d0.data, d1.data)  # unshared per-layer MLPs
    with pytest.raises(ContractError):
        a.layer_delta(5, vp_tokens, feat, shared)
    # Eq-style strict shape: wrong token width is a hard error
    with pytest.raises(ShapeError):
        a.layer_delta(0, Tensor(np.zeros((1, 4, 3))), feat, shared)


def test_adaptor_zero_tunes_give_constant_tokens():
    rng = CounterRng(21, 1)
    a = DiffAdaptor([0], embed_dim=6, patch=4, d_mid=4, d_model=8, rng=rng)
    shared = Linear(4, 8, rng.child(9))
    a.vptune.w.data[:] = 0.0
    a.vptune.b.data[:] = 0.0
    a.embed_tune[0].w.data[:] = 0.0
    a.embed_tune[0].b.data[:] = 0.0
    img = rnd_img(22, 8, 8)
    feat = Tensor(CounterRng(23, 1).uniforms(1 * 4 * 8).reshape(1, 4, 8))
    delta = a.layer_delta(0, a.vptune(img), feat, shared)
    assert np.allclose(delta.data, delta.data[:, 0:1])  # same for every token


def test_gelu_zero_fixed_point_through_adaptor():
    rng = CounterRng(25, 1)
    mlp_n = Linear(4, 4, rng.child(1))
    shared = Linear(4, 8, rng.child(2))
    mlp_n.w.data[:] = np.eye(4)
    mlp_n.b.data[:] = 0.0
    shared.w.data[:] = np.eye(4, 8)
    shared.b.data[:] = 0.0
    x = Tensor(np.zeros((1, 3, 4)))
    out = shared(ad.gelu(mlp_n(x)))
    assert np.allclose(out.data, 0.0)


def test_diffadaptor_forward_products():
    rng = CounterRng(27, 1)
    a = DiffAdaptor([0, 1], embed_dim=6, patch=4, d_mid=4, d_model=8, rng=rng)
    shared = Linear(4, 8, rng.child(9))
    img = rnd_img(28, 16, 16)
    feats = {n: Tensor(CounterRng(30 + n, 1).uniforms(1 * 16 * 8).reshape(1, 16, 8)) for n in (0, 1)}
    image, emb, deltas = a.forward_products(img, feats, shared)
    assert image.shape == (1, 3, 16, 16)
    assert emb.shape == (1, 6)
    assert set(deltas) == {0, 1}
    assert all(d.shape == (1, 16, 8) for d in deltas.values())
