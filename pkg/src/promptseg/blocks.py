"""Prompt generation and adaptor building blocks.

A shallow five-layer CNN summarizes the image into a global embedding;
the gated enhancer turns that embedding into an enhanced image (the
visual prompt). Patch-level tuning layers project the prompt and the
backbone's token features into a shared bottleneck, and per-layer +
shared MLPs emit the residual features injected at each transformer
layer.

The shallow encoder first box-averages its input down to at most 16x16:
the embedding only carries global context, and the stride-1 conv stack
at full resolution would dominate the training budget on one core. The
pooling is linear and differentiable, so gradient checks are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError
from .imageproc import GatedEnhancer
from .rng import CounterRng

ENCODER_MAX_RES = 16


def he_conv(rng: CounterRng, c_out: int, c_in: int, k: int) -> Tensor:
    scale = np.sqrt(2.0 / (c_in * k * k))
    return Tensor(rng.normals((c_out, c_in, k, k), scale=scale), requires_grad=True)


def xavier(rng: CounterRng, d_in: int, d_out: int) -> Tensor:
    scale = np.sqrt(1.0 / d_in)
    return Tensor(rng.normals((d_in, d_out), scale=scale), requires_grad=True)


class Linear:
    """Affine map on the last axis; weights shared across leading axes."""

    def __init__(self, d_in: int, d_out: int, rng: CounterRng, zero: bool = False):
        self.w = Tensor(np.zeros((d_in, d_out)), requires_grad=True) if zero else xavier(rng, d_in, d_out)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.badd(ad.matmul(x, self.w), self.b)

    def params(self, prefix: str):
        yield f"{prefix}/w", self.w
        yield f"{prefix}/b", self.b


class ShallowEncoder:
    """Five k3/s1/p1 convs (3->16->32->32->64->64) with ReLU, global average
    pooling, and an affine head producing the embedding."""

    WIDTHS = (3, 16, 32, 32, 64, 64)

    def __init__(self, embed_dim: int, rng: CounterRng):
        self.embed_dim = embed_dim
        self.convs = []
        for i in range(5):
            c_in, c_out = self.WIDTHS[i], self.WIDTHS[i + 1]
            self.convs.append((he_conv(rng, c_out, c_in, 3),
                               Tensor(np.zeros(c_out), requires_grad=True)))
        self.fc = Linear(self.WIDTHS[-1], embed_dim, rng)

    def __call__(self, images: Tensor) -> Tensor:
        x = images if images.ndim == 4 else ad.reshape(images, (1,) + images.shape)
        h = x.shape[2]
        pool = max(1, h // ENCODER_MAX_RES)
        if pool > 1:
            x = ad.box_downsample(x, pool)
        for w, b in self.convs:
            x = ad.relu(ad.conv2d(x, w, b, stride=1, padding=1))
        pooled = ad.adaptive_avg_pool_1x1(x)  # (N, 64)
        return self.fc(pooled)

    def params(self, prefix: str):
        for i, (w, b) in enumerate(self.convs):
            yield f"{prefix}/conv{i}/w", w
            yield f"{prefix}/conv{i}/b", b
        yield from self.fc.params(f"{prefix}/fc")


@dataclass
class PromptOutput:
    """Visual prompt (enhanced image) plus its source embedding."""
    image: Tensor      # (N, 3, H, W) in [0, 1]
    embedding: Tensor  # (N, E)


class PromptGenerator:
    """Shallow encoder + gated enhancer: image -> (enhanced image, embedding)."""

    def __init__(self, embed_dim: int, rng: CounterRng):
        self.encoder = ShallowEncoder(embed_dim, rng.child(1))
        self.enhancer = GatedEnhancer(embed_dim, rng.child(2))

    def __call__(self, image: Tensor, hfc_mode: str = "soft") -> PromptOutput:
        x = image if image.ndim == 4 else ad.reshape(image, (1,) + image.shape)
        n, c, h, w = x.shape
        if c != 3:
            raise ShapeError(f"prompt generator expects 3-channel images, got {c}")
        if h & (h - 1) or w & (w - 1):
            raise ShapeError(f"H, W must be powers of two for the FFT path, got {h}x{w}")
        if float(x.data.min()) < -1e-9 or float(x.data.max()) > 1.0 + 1e-9:
            raise ContractError("prompt generator input must lie in [0, 1]")
        f_emb = self.encoder(x)
        enhanced = self.enhancer.apply(f_emb, x, hfc_mode=hfc_mode)
        return PromptOutput(image=enhanced, embedding=f_emb)

    def params(self, prefix: str):
        yield from self.encoder.params(f"{prefix}/encoder")
        yield from self.enhancer_params(prefix)

    def enhancer_params(self, prefix: str):
        for name, t in self.enhancer.params():
            yield f"{prefix}/{name}", t


class VPTune:
    """Non-overlapping patch convolution turning the visual prompt into
    (N, T, D_mid) tokens."""

    def __init__(self, patch: int, d_mid: int, rng: CounterRng):
        self.patch = patch
        self.w = he_conv(rng, d_mid, 3, patch)
        self.b = Tensor(np.zeros(d_mid), requires_grad=True)

    def __call__(self, image: Tensor) -> Tensor:
        x = image if image.ndim == 4 else ad.reshape(image, (1,) + image.shape)
        n, c, h, w = x.shape
        if h % self.patch or w % self.patch:
            raise ShapeError(f"image {h}x{w} not divisible by patch {self.patch}")
        y = ad.conv2d(x, self.w, self.b, stride=self.patch, padding=0)  # (N, D_mid, hp, wp)
        d = y.shape[1]
        return ad.transpose(ad.reshape(y, (n, d, -1)), (0, 2, 1))  # (N, T, D_mid)

    def params(self, prefix: str):
        yield f"{prefix}/w", self.w
        yield f"{prefix}/b", self.b


class EmbeddingTune(Linear):
    """Per-token affine map from backbone features (D) to the bottleneck
    (D_mid); weights shared across tokens, one instance per layer."""

    def __init__(self, d_model: int, d_mid: int, rng: CounterRng):
        super().__init__(d_model, d_mid, rng)


class DiffAdaptor:
    """One prompt source plus the tuning stack for a group of layers.

    Holds the prompt generator (optional), the patch tuner, and the
    per-layer embedding tuners and bottleneck MLPs. The shared output
    MLP belongs to the owning model (one instance per model).
    """

    def __init__(self, layer_ids, embed_dim: int, patch: int, d_mid: int, d_model: int,
                 rng: CounterRng, use_prompt: bool = True):
        self.layer_ids = list(layer_ids)
        self.use_prompt = use_prompt
        self.diffvp = PromptGenerator(embed_dim, rng.child(1)) if use_prompt else None
        self.vptune = VPTune(patch, d_mid, rng.child(2))
        self.embed_tune = {n: EmbeddingTune(d_model, d_mid, rng.child(100 + n)) for n in self.layer_ids}
        self.mlp_n = {n: Linear(d_mid, d_mid, rng.child(200 + n)) for n in self.layer_ids}

    def prompt(self, image: Tensor, hfc_mode: str) -> PromptOutput:
        if self.diffvp is None:
            # no-prompt ablation: the raw image goes straight to VPTune
            return PromptOutput(image=image, embedding=None)
        return self.diffvp(image, hfc_mode=hfc_mode)

    def layer_delta(self, n: int, f_vptune: Tensor, f_feat: Tensor, mlp_shared: Linear) -> Tensor:
        """f_a for layer n: shared(GELU(MLP_n(VPTune + EmbeddingTune(feat))))."""
        if n not in self.mlp_n:
            raise ContractError(f"layer {n} not covered by this adaptor")
        x = ad.add(f_vptune, self.embed_tune[n](f_feat))  # strict shapes (hard error)
        return mlp_shared(ad.gelu(self.mlp_n[n](x)))

    def forward_products(self, image: Tensor, feats: dict, mlp_shared: Linear,
                         hfc_mode: str = "soft"):
        """Full composite: (enhanced image, embedding, {layer: f_a})."""
        out = self.prompt(image, hfc_mode)
        f_vp = self.vptune(out.image)
        deltas = {n: self.layer_delta(n, f_vp, feats[n], mlp_shared) for n in self.layer_ids}
        return out.image, out.embedding, deltas

    def params(self, prefix: str):
        if self.diffvp is not None:
            yield from self.diffvp.params(f"{prefix}/diffvp")
        yield from self.vptune.params(f"{prefix}/vptune")
        for n in self.layer_ids:
            yield from self.embed_tune[n].params(f"layer{n:02d}/embed_tune")
            yield from self.mlp_n[n].params(f"layer{n:02d}/mlp_n")
