"""Frozen-backbone transformer segmentation models with prompt adaptors.

Three topologies share one code path driven by a stage plan:

- baseline: patchify -> transformer blocks -> decoder, no adaptors;
- parallel ("pda"): one prompt computed from the raw input feeds the
  tuning stack of every layer;
- sequential ("sda"): each stage owns a prompt block whose enhanced
  image chains into the next stage's prompt block.

The "pda_noprompt" ablation keeps the tuning stack but feeds VPTune the
raw image and injects no global embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import DiffAdaptor, Linear, he_conv
from .errors import ContractError, ShapeError
from .rng import CounterRng

ARCHS = ("baseline", "pda", "sda", "pda_noprompt")


@dataclass
class ModelSpec:
    """Desk-scale backbone geometry and adaptor dimensions."""
    stages: int = 2
    layers_per_stage: int = 3
    d_model: int = 96
    heads: int = 4
    patch: int = 8
    input_size: int = 64
    arch: str = "baseline"
    embed_dim: int = 64   # shallow-encoder output E

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ContractError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.input_size % self.patch:
            raise ContractError("input size must be divisible by patch")
        if self.d_model % self.heads:
            raise ContractError("d_model must be divisible by heads")

    @property
    def d_mid(self) -> int:
        return self.d_model // 2

    @property
    def n_layers(self) -> int:
        return self.stages * self.layers_per_stage

    @property
    def tokens(self) -> int:
        return (self.input_size // self.patch) ** 2


class TransformerBlock:
    """Pre-norm self-attention + MLP with residuals."""

    def __init__(self, d: int, heads: int, rng: CounterRng):
        self.d = d
        self.heads = heads
        self.dh = d // heads
        self.ln1_g = Tensor(np.ones(d), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(d), requires_grad=True)
        self.qkv = Linear(d, 3 * d, rng.child(1))
        self.proj = Linear(d, d, rng.child(2))
        self.ln2_g = Tensor(np.ones(d), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(d), requires_grad=True)
        self.fc1 = Linear(d, 4 * d, rng.child(3))
        self.fc2 = Linear(4 * d, d, rng.child(4))
        self.last_attn = None  # filled when record_attn is set on the model

    def __call__(self, x: Tensor, record_attn: bool = False) -> Tensor:
        n, t, d = x.shape
        h = ad.layer_norm(x, self.ln1_g, self.ln1_b)
        qkv = self.qkv(h)
        q = ad.transpose(ad.reshape(qkv[:, :, 0:d], (n, t, self.heads, self.dh)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(qkv[:, :, d:2 * d], (n, t, self.heads, self.dh)), (0, 2, 1, 3))
        v = ad.transpose(ad.reshape(qkv[:, :, 2 * d:3 * d], (n, t, self.heads, self.dh)), (0, 2, 1, 3))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), Tensor(1.0 / math.sqrt(self.dh)))
        attn = ad.softmax(scores)
        if record_attn:
            self.last_attn = attn.data.copy()
        ctx = ad.matmul(attn, v)  # (N, heads, T, dh)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (n, t, d))
        x = ad.add(x, self.proj(ctx))
        h2 = ad.layer_norm(x, self.ln2_g, self.ln2_b)
        return ad.add(x, self.fc2(ad.gelu(self.fc1(h2))))

    def params(self, prefix: str):
        yield f"{prefix}/ln1/g", self.ln1_g
        yield f"{prefix}/ln1/b", self.ln1_b
        yield from self.qkv.params(f"{prefix}/qkv")
        yield from self.proj.params(f"{prefix}/proj")
        yield f"{prefix}/ln2/g", self.ln2_g
        yield f"{prefix}/ln2/b", self.ln2_b
        yield from self.fc1.params(f"{prefix}/fc1")
        yield from self.fc2.params(f"{prefix}/fc2")


class Backbone:
    """Patchifier + positional embeddings + transformer blocks. Records
    every layer's token output so tuning layers can tap them."""

    def __init__(self, spec: ModelSpec, rng: CounterRng):
        self.spec = spec
        d, p = spec.d_model, spec.patch
        self.patch_w = he_conv(rng.child(1), d, 3, p)
        self.patch_b = Tensor(np.zeros(d), requires_grad=True)
        self.pos = Tensor(rng.child(2).normals((spec.tokens, d), scale=0.02), requires_grad=True)
        self.blocks = [TransformerBlock(d, spec.heads, rng.child(10 + i)) for i in range(spec.n_layers)]

    def embed(self, image: Tensor) -> Tensor:
        x = image if image.ndim == 4 else ad.reshape(image, (1,) + image.shape)
        n = x.shape[0]
        if x.shape[2] != self.spec.input_size or x.shape[3] != self.spec.input_size:
            raise ShapeError(f"backbone expects {self.spec.input_size}^2 input, got {x.shape[2]}x{x.shape[3]}")
        y = ad.conv2d(x, self.patch_w, self.patch_b, stride=self.spec.patch)
        tokens = ad.transpose(ad.reshape(y, (n, self.spec.d_model, -1)), (0, 2, 1))
        return ad.badd(tokens, self.pos)

    def forward_features(self, image: Tensor, record_attn: bool = False):
        """Plain forward pass; returns per-layer token outputs."""
        x = self.embed(image)
        feats = []
        for blk in self.blocks:
            x = blk(x, record_attn=record_attn)
            feats.append(x)
        return feats

    def params(self, prefix: str = "backbone"):
        yield f"{prefix}/patch_embed/w", self.patch_w
        yield f"{prefix}/patch_embed/b", self.patch_b
        yield f"{prefix}/pos", self.pos
        for i, blk in enumerate(self.blocks):
            yield from blk.params(f"{prefix}/block{i:02d}")


class Decoder:
    """Progressive upsampling head: [conv3x3 + ReLU + bilinear 2x] log2(P)
    times, halving channels (floor 8), then a 1x1 conv to one logit map."""

    def __init__(self, spec: ModelSpec, rng: CounterRng):
        self.spec = spec
        steps = int(math.log2(spec.patch))
        self.convs = []
        c = spec.d_model
        for i in range(steps):
            c_out = max(c // 2, 8)
            self.convs.append((he_conv(rng.child(i + 1), c_out, c, 3),
                               Tensor(np.zeros(c_out), requires_grad=True)))
            c = c_out
        self.head_w = he_conv(rng.child(99), 1, c, 1)
        self.head_b = Tensor(np.zeros(1), requires_grad=True)

    def __call__(self, tokens: Tensor) -> Tensor:
        n, t, d = tokens.shape
        side = int(math.isqrt(t))
        x = ad.reshape(ad.transpose(tokens, (0, 2, 1)), (n, d, side, side))
        for w, b in self.convs:
            x = ad.bilinear_upsample_2x(ad.relu(ad.conv2d(x, w, b, stride=1, padding=1)))
        return ad.conv2d(x, self.head_w, self.head_b)

    def params(self, prefix: str = "decoder"):
        for i, (w, b) in enumerate(self.convs):
            yield f"{prefix}/conv{i}/w", w
            yield f"{prefix}/conv{i}/b", b
        yield f"{prefix}/head/w", self.head_w
        yield f"{prefix}/head/b", self.head_b


def bce_loss(logits: Tensor, gt: Tensor) -> Tensor:
    """Binary cross-entropy from logits in the saturation-safe form
    mean(softplus(z) - z*y); gt must be exactly {0, 1}."""
    gd = gt.data
    if not np.all((gd == 0.0) | (gd == 1.0)):
        raise ContractError("ground truth must be binary {0, 1}")
    if logits.shape != gt.shape:
        raise ShapeError(f"logits {logits.shape} vs gt {gt.shape}")
    return ad.tmean(ad.sub(ad.softplus(logits), ad.mul(logits, gt)))


class SegModel:
    """One of the four topologies over a shared backbone/decoder."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        root = CounterRng(seed, 0)
        self.backbone = Backbone(spec, root.child(1))
        self.decoder = Decoder(spec, root.child(2))
        self.record_attn = False
        self.adaptors: list[DiffAdaptor] = []
        self.femb_proj: list[Linear | None] = []
        self.mlp_shared: Linear | None = None
        L = spec.n_layers

        if spec.arch in ("pda", "pda_noprompt"):
            use_prompt = spec.arch == "pda"
            a = DiffAdaptor(range(L), spec.embed_dim, spec.patch, spec.d_mid, spec.d_model,
                            root.child(10), use_prompt=use_prompt)
            self.adaptors = [a]
            self.femb_proj = [Linear(spec.embed_dim, spec.d_model, root.child(20)) if use_prompt else None]
            self.mlp_shared = Linear(spec.d_mid, spec.d_model, root.child(5))
        elif spec.arch == "sda":
            for s in range(spec.stages):
                layers = range(s * spec.layers_per_stage, (s + 1) * spec.layers_per_stage)
                self.adaptors.append(DiffAdaptor(layers, spec.embed_dim, spec.patch, spec.d_mid,
                                                 spec.d_model, root.child(10 + s)))
                self.femb_proj.append(Linear(spec.embed_dim, spec.d_model, root.child(20 + s)))
            self.mlp_shared = Linear(spec.d_mid, spec.d_model, root.child(5))

    # -- plumbing ---------------------------------------------------------

    def named_params(self):
        out = list(self.backbone.params("backbone"))
        out += list(self.decoder.params("decoder"))
        for s, a in enumerate(self.adaptors):
            out += list(a.params(f"stage{s}"))
        for s, proj in enumerate(self.femb_proj):
            if proj is not None:
                out += list(proj.params(f"stage{s}/femb_proj"))
        if self.mlp_shared is not None:
            out += list(self.mlp_shared.params("mlp_shared"))
        return out

    def backbone_param_names(self):
        return {name for name, _ in self.backbone.params("backbone")}

    def freeze_backbone(self):
        for _, t in self.backbone.params("backbone"):
            t.requires_grad = False
            t.grad = None

    def trainable_params(self):
        return [(n, t) for n, t in self.named_params() if t.requires_grad]

    def zero_adaptor_paths(self):
        """Zero every adaptor-side weight so the residual additions vanish."""
        frozen = self.backbone_param_names() | {n for n, _ in self.decoder.params("decoder")}
        for name, t in self.named_params():
            if name not in frozen:
                t.data[:] = 0.0

    def ip_apply_count(self) -> int:
        return sum(a.diffvp.enhancer.apply_count for a in self.adaptors if a.diffvp is not None)

    def reset_ip_counters(self):
        for a in self.adaptors:
            if a.diffvp is not None:
                a.diffvp.enhancer.apply_count = 0

    # -- forward ----------------------------------------------------------

    def forward(self, image: Tensor, hfc_mode: str = "soft") -> Tensor:
        """Logits (N, 1, H, W). hfc_mode: soft relaxation while training,
        hard mask at inference."""
        x = image if image.ndim == 4 else ad.reshape(image, (1,) + image.shape)
        tokens = self.backbone.embed(x)

        if not self.adaptors:
            for blk in self.backbone.blocks:
                tokens = blk(tokens, record_attn=self.record_attn)
            return self.decoder(tokens)

        current = x
        for s, adaptor in enumerate(self.adaptors):
            src = x if self.spec.arch in ("pda", "pda_noprompt") else current
            out = adaptor.prompt(src, hfc_mode)
            current = out.image
            f_vp = adaptor.vptune(out.image)
            proj = None
            if self.femb_proj[s] is not None and out.embedding is not None:
                p = self.femb_proj[s](out.embedding)      # (N, D)
                proj = ad.reshape(p, (p.shape[0], 1, p.shape[1]))
            for n in adaptor.layer_ids:
                feat = self.backbone.blocks[n](tokens, record_attn=self.record_attn)
                delta = adaptor.layer_delta(n, f_vp, feat, self.mlp_shared)
                tokens = ad.add(feat, delta)
                if proj is not None:
                    tokens = ad.badd(tokens, proj)
        return self.decoder(tokens)

    def predict(self, image_np: np.ndarray) -> np.ndarray:
        """Probability maps for a (N,3,H,W) or (3,H,W) array, hard HFC mask."""
        single = image_np.ndim == 3
        x = Tensor(image_np[None] if single else image_np)
        logits = self.forward(x, hfc_mode="hard")
        probs = 1.0 / (1.0 + np.exp(-logits.data))
        return probs[0, 0] if single else probs[:, 0]


def freeze_partition(model: SegModel) -> dict:
    """Disjoint frozen/trainable split used for training and checkpoints."""
    frozen = model.backbone_param_names()
    all_names = [n for n, _ in model.named_params()]
    trainable = [n for n in all_names if n not in frozen]
    return {"frozen": sorted(frozen), "trainable": trainable}
