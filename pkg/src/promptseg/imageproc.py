"""Differentiable image-processing operators and the gated enhancer.

Eight operators (tone curve, contrast, sharpen, defog, gamma, white
balance, identity, and a learnable high-frequency-pass filter) transform
an image under parameters predicted from a global embedding. Each
operator output is min-max normalized, scaled by a sigmoid gate, summed,
and normalized again — a convex-ish mixture the optimizer can steer
per image.

All operators run batched on (N, C, H, W) tensors with per-image
parameters; single (C, H, W) images are accepted and returned unbatched.
Every parameter path is differentiable and FD-verified; the two
estimator-style statistics of the defog operator (dark channel and
atmospheric light) are treated as constants of the input image, like
running statistics, so the transmission stays smooth in omega.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError
from .rng import CounterRng

OP_NAMES = ("tone", "contrast", "sharpen", "defog", "gamma", "white_balance", "identity", "hfc")

N_TONE = 8
HEAD_DIM = 24  # 8 gate logits + 15 operator params + 1 tau logit
EPS_NORM = 1e-8
TAU_LO, TAU_HI = 0.1, 0.8
SOFT_MASK_TEMPERATURE = 0.05

# range maps (sigmoid u in (0,1) -> parameter)
OMEGA_LO, OMEGA_SPAN = 0.1, 0.9
GAMMA_LO, GAMMA_SPAN = 0.5, 2.5
WB_LO, WB_SPAN = 0.5, 1.0

_clamp_events = 0


def clamp_event_count() -> int:
    return _clamp_events


def make_image(arr) -> Tensor:
    """Validate/clamp an array into a unit-range image tensor (C, H, W)."""
    global _clamp_events
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ShapeError(f"image must be (C, H, W) with C in {{1,3}}, got {a.shape}")
    out = np.clip(a, 0.0, 1.0)
    _clamp_events += int(np.count_nonzero(out != a))
    return Tensor(out)


# -- shape plumbing -----------------------------------------------------------


def _batched(img: Tensor):
    if img.ndim == 3:
        return ad.reshape(img, (1,) + img.shape), True
    if img.ndim == 4:
        return img, False
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got {img.shape}")


def _unbatch(t: Tensor, squeeze: bool) -> Tensor:
    return ad.reshape(t, t.shape[1:]) if squeeze else t


def _pcol(p, n: int) -> Tensor:
    """Scalar-per-image parameter as (n, 1, 1, 1) for broadcasting."""
    if isinstance(p, Tensor):
        if p.size != n:
            raise ShapeError(f"expected {n} per-image values, got {p.size}")
        return ad.reshape(p, (n, 1, 1, 1))
    arr = np.broadcast_to(np.asarray(p, dtype=np.float64), (n,)).reshape(n, 1, 1, 1)
    return Tensor(arr)


def _pmat(p, n: int, k: int) -> Tensor:
    """Vector-per-image parameter as (n, k)."""
    if isinstance(p, Tensor):
        return ad.reshape(p, (n, k))
    arr = np.asarray(p, dtype=np.float64)
    arr = np.broadcast_to(arr, (n, k)) if arr.ndim == 1 else arr
    return Tensor(arr.reshape(n, k))


# -- normalization ------------------------------------------------------------


def normalize_minmax(x: Tensor) -> Tensor:
    """(x - min) / (max - min + 1e-8) over the whole tensor.

    Constant input maps to zeros (numerator 0 under the epsilon guard).
    """
    lo = ad.amin(x, keepdims=True)
    hi = ad.amax(x, keepdims=True)
    return ad.bdiv(ad.bsub(x, lo), ad.badd(ad.bsub(hi, lo), Tensor(EPS_NORM)))


def normalize_per_image(x: Tensor) -> Tensor:
    """Min-max normalize each (C, H, W) slice of a batch independently.

    Fused primitive (this runs nine times per enhancer application):
    out = (x - m) / D with D = M - m + eps. The extrema contributions
    d(out)/dm = (x - m - D)/D^2 and d(out)/dM = -(x - m)/D^2 scatter to
    the arg-extremum positions (ties share equally).
    """
    v = x.data
    axes = (1, 2, 3)
    lo = v.min(axis=axes, keepdims=True)
    hi = v.max(axis=axes, keepdims=True)
    den = hi - lo + EPS_NORM
    centered = v - lo
    out = centered / den

    def bw(g):
        gx = g / den
        d_lo = (g * (centered - den) / (den * den)).sum(axis=axes, keepdims=True)
        d_hi = (-(g * centered) / (den * den)).sum(axis=axes, keepdims=True)
        lo_mask = (v == lo).astype(np.float64)
        lo_mask /= lo_mask.sum(axis=axes, keepdims=True)
        hi_mask = (v == hi).astype(np.float64)
        hi_mask /= hi_mask.sum(axis=axes, keepdims=True)
        return (gx + d_lo * lo_mask + d_hi * hi_mask,)

    return ad.apply_op(out, (x,), bw)


def _unit_clip(x: Tensor) -> Tensor:
    return ad.clip(x, 0.0, 1.0)


# -- tone curve ---------------------------------------------------------------


def _tone_segments(img: Tensor) -> Tensor:
    """Stacked clip(8*I - j, 0, 1) for j = 0..7 as one (N, 8, C, H, W)
    primitive (the per-knot loop is a hot path in training)."""
    x = img.data
    j = np.arange(N_TONE, dtype=np.float64).reshape(1, N_TONE, 1, 1, 1)
    u = N_TONE * x[:, None] - j
    seg = np.clip(u, 0.0, 1.0)

    def bw(g):
        inside = (u >= 0.0) & (u <= 1.0)  # clip's inclusive subgradient
        return ((N_TONE * (g * inside)).sum(axis=1),)

    return ad.apply_op(seg, (img,), bw)


def op_tone(img: Tensor, t) -> Tensor:
    """Piecewise-linear tone curve from 8 positive knot weights:
    out = (1/sum t) * sum_j clip(8*I - j, 0, 1) * t_j."""
    x, squeeze = _batched(img)
    n = x.shape[0]
    tm = _pmat(t, n, N_TONE)
    if np.any(tm.data <= 0.0):
        raise ContractError("tone points must be positive")
    total = _pcol(ad.tsum(tm, axis=1), n)
    seg = _tone_segments(x)  # (N, 8, C, H, W)
    acc = ad.tsum(ad.bmul(seg, ad.reshape(tm, (n, N_TONE, 1, 1, 1))), axis=1)
    return _unbatch(ad.bdiv(acc, total), squeeze)


# -- contrast -----------------------------------------------------------------


def op_contrast(img: Tensor, alpha) -> Tensor:
    """Blend toward a cosine-stretched luminance rendition:
    out = alpha * I * EnLum(I)/Lum(I) + (1 - alpha) * I."""
    x, squeeze = _batched(img)
    n, c = x.shape[0], x.shape[1]
    a = _pcol(alpha, n)
    if c == 3:
        lum = ad.add(ad.add(ad.mul(x[:, 0:1], Tensor(0.27)), ad.mul(x[:, 1:2], Tensor(0.67))),
                     ad.mul(x[:, 2:3], Tensor(0.06)))
    else:
        lum = x[:, 0:1]
    enlum = ad.mul(ad.sub(Tensor(1.0), ad.cos(ad.mul(lum, Tensor(math.pi)))), Tensor(0.5))
    ratio = ad.div(enlum, ad.add(lum, Tensor(1e-6)))
    enhanced = ad.bmul(x, ratio)
    out = ad.badd(ad.bmul(enhanced, a), ad.bmul(x, ad.bsub(Tensor(1.0), a)))
    return _unbatch(_unit_clip(out), squeeze)


# -- sharpen ------------------------------------------------------------------


def _gaussian_kernel(size: int = 5, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k2 = np.outer(g, g)
    return k2 / k2.sum()

_GAUSS5 = _gaussian_kernel()


def _channelwise_kernel(c: int) -> Tensor:
    w = np.zeros((c, c, 5, 5))
    for i in range(c):
        w[i, i] = _GAUSS5
    return Tensor(w)


def op_sharpen(img: Tensor, lam) -> Tensor:
    """Unsharp masking with a fixed 5x5 sigma=1.5 Gaussian, replicate pad:
    out = I + lambda * (I - Gaussian(I))."""
    x, squeeze = _batched(img)
    n, c = x.shape[0], x.shape[1]
    l = _pcol(lam, n)
    blurred = ad.conv2d(ad.replicate_pad2d(x, 2), _channelwise_kernel(c), stride=1, padding=0)
    out = ad.badd(x, ad.bmul(ad.sub(x, blurred), l))
    return _unbatch(_unit_clip(out), squeeze)


# -- defog --------------------------------------------------------------------

DARK_WINDOW = 15


def defog_stats(img_np: np.ndarray):
    """Dark channel (on I/A) and atmospheric light per image.

    A_c = per-channel mean over the brightest 0.1% dark-channel pixels,
    floored at 0.5. Both statistics are selections/extrema, so they are
    deliberately excluded from the gradient graph.
    """
    n, c, h, w = img_np.shape
    mins = ndimage.minimum_filter(img_np, size=(1, 1, DARK_WINDOW, DARK_WINDOW), mode="nearest")
    dark_raw = mins.min(axis=1)  # (N, H, W)
    k = max(1, int(round(1e-3 * h * w)))
    atmos = np.empty((n, c))
    for i in range(n):
        idx = np.argpartition(dark_raw[i].ravel(), -k)[-k:]
        for ch in range(c):
            atmos[i, ch] = img_np[i, ch].ravel()[idx].mean()
    atmos = np.maximum(atmos, 0.5)
    scaled = img_np / atmos[:, :, None, None]
    dark_scaled = ndimage.minimum_filter(scaled, size=(1, 1, DARK_WINDOW, DARK_WINDOW), mode="nearest")
    dark = dark_scaled.min(axis=1, keepdims=True)  # (N, 1, H, W)
    return dark, atmos.reshape(n, c, 1, 1)


def op_defog(img: Tensor, omega) -> Tensor:
    """Invert the scattering model I = J*t + A*(1-t) with t estimated from
    the dark channel: t(omega) = 1 - omega * dark(I/A), floored at 0.1."""
    x, squeeze = _batched(img)
    n = x.shape[0]
    om = _pcol(omega, n)
    dark, atmos = defog_stats(x.data)
    t = ad.clip(ad.bsub(Tensor(1.0), ad.bmul(Tensor(dark), om)), 0.1, 1.0)
    numer = ad.bsub(x, ad.bmul(Tensor(atmos), ad.bsub(Tensor(1.0), t)))
    out = ad.bdiv(numer, t)
    return _unbatch(_unit_clip(out), squeeze)


# -- gamma --------------------------------------------------------------------


def op_gamma(img: Tensor, gamma) -> Tensor:
    """Power-law correction via exp(gamma * log(I + 1e-6)), clamped."""
    x, squeeze = _batched(img)
    n = x.shape[0]
    g = _pcol(gamma, n)
    out = ad.exp(ad.bmul(ad.log(ad.add(x, Tensor(1e-6))), g))
    return _unbatch(_unit_clip(out), squeeze)


# -- white balance ------------------------------------------------------------


def op_white_balance(img: Tensor, gains) -> Tensor:
    """Per-channel RGB gains in [0.5, 1.5], clamped back to unit range."""
    x, squeeze = _batched(img)
    n, c = x.shape[0], x.shape[1]
    if c != 3:
        raise ContractError("white balance is defined for 3-channel images")
    w = ad.reshape(_pmat(gains, n, 3), (n, 3, 1, 1))
    return _unbatch(_unit_clip(ad.bmul(x, w)), squeeze)


def op_identity(img: Tensor) -> Tensor:
    return img


# -- learnable high-frequency filter -------------------------------------------


def freq_grid(h: int, w: int) -> np.ndarray:
    """e(i, j) = (HW - 4|(i - H/2)(j - W/2)|) / HW; 0 at the corners (DC in
    the unshifted FFT layout), 1 at the center (Nyquist)."""
    i = np.arange(h).reshape(h, 1) - h / 2.0
    j = np.arange(w).reshape(1, w) - w / 2.0
    return (h * w - 4.0 * np.abs(i * j)) / (h * w)


def hfc_mask(h: int, w: int, tau, mode: str = "hard", temperature: float = SOFT_MASK_TEMPERATURE) -> Tensor:
    """Frequency-domain keep-mask from the cutoff tau.

    hard: 1 where e(i,j) >= tau else 0 (no gradient to tau);
    soft: sigmoid((e - tau) / temperature), pointwise -> hard as
    temperature -> 0 and monotone nonincreasing in tau.
    """
    if h < 2 or w < 2:
        raise ShapeError("mask needs H, W >= 2")
    e = freq_grid(h, w)
    if mode == "hard":
        tv = tau.data if isinstance(tau, Tensor) else np.asarray(tau, dtype=np.float64)
        return Tensor((e >= tv.reshape(-1)[0]).astype(np.float64)) if tv.size == 1 else \
            Tensor((e[None] >= tv.reshape(-1, 1, 1)).astype(np.float64))
    if mode != "soft":
        raise ContractError(f"mask mode must be 'hard' or 'soft', got {mode!r}")
    if temperature <= 0:
        raise ContractError("soft mask temperature must be positive")
    tt = tau if isinstance(tau, Tensor) else Tensor(tau)
    if tt.size == 1:
        diff = ad.bsub(Tensor(e), ad.reshape(tt, (1, 1)))
        return ad.reshape(ad.sigmoid(ad.mul(diff, Tensor(1.0 / temperature))), (h, w))
    diff = ad.bsub(Tensor(e[None]), ad.reshape(tt, (tt.size, 1, 1)))
    return ad.sigmoid(ad.mul(diff, Tensor(1.0 / temperature)))


def hfc_filter(img: Tensor, mask: Tensor) -> Tensor:
    """real(ifft2(fft2(I) * M)) per channel; differentiable in both the
    image and the (real) mask. Linear, so the image adjoint is the same
    filter applied to the gradient."""
    x, squeeze = _batched(img)
    m = mask.data
    if m.ndim == 2:
        mb = m[None, None]
    elif m.ndim == 3:  # (N, H, W) per-image masks
        mb = m[:, None]
    else:
        mb = m
    z = np.fft.fft2(x.data, axes=(-2, -1))
    out = np.fft.ifft2(z * mb, axes=(-2, -1)).real

    def bw(g):
        if squeeze:
            g = g[None] if g.ndim == 3 else g
        gi = gm = None
        if img.requires_grad:
            gi = np.fft.ifft2(np.fft.fft2(g, axes=(-2, -1)) * mb, axes=(-2, -1)).real
            if squeeze:
                gi = gi[0]
        if mask.requires_grad:
            gm_full = (z * np.fft.ifft2(g, axes=(-2, -1))).real  # d/dM_k = Re(z_k * ifft(g)_k)
            gm = gm_full.sum(axis=1, keepdims=True)
            if m.ndim == 2:
                gm = gm.sum(axis=0)[0]
            elif m.ndim == 3:
                gm = gm[:, 0]
        return gi, gm

    return ad.apply_op(out[0] if squeeze else out, (img, mask), bw)


def op_hfc(img: Tensor, tau, mode: str = "hard", temperature: float = SOFT_MASK_TEMPERATURE,
           normalize: bool = True) -> Tensor:
    """High-frequency component image: mask the spectrum with hfc_mask, take
    the real inverse transform, then min-max normalize to [0, 1]."""
    x, squeeze = _batched(img)
    n, _, h, w = x.shape
    if isinstance(tau, Tensor) and tau.size == n and n > 1:
        m = hfc_mask(h, w, tau, mode=mode, temperature=temperature)
    else:
        m = hfc_mask(h, w, tau if not isinstance(tau, Tensor) else ad.reshape(tau, (1,)), mode=mode,
                     temperature=temperature)
    filtered = hfc_filter(x, m)
    out = normalize_per_image(filtered) if normalize else filtered
    return _unbatch(out, squeeze)


def tau_from_logit(logit: Tensor) -> Tensor:
    """sigma(logit) clamped into [0.1, 0.8] (saturation-safe)."""
    return ad.clip(ad.sigmoid(logit), TAU_LO, TAU_HI)


@dataclass
class HFCState:
    """Inspection bundle for one high-pass application."""
    tau: float
    mask: np.ndarray       # (H, W) in [0, 1]; {0, 1} in hard mode
    spectrum: np.ndarray   # (C, H, W) complex FFT of the image


def hfc_state(img: Tensor, tau: float, mode: str = "hard",
              temperature: float = SOFT_MASK_TEMPERATURE) -> HFCState:
    x, _ = _batched(img)
    h, w = x.shape[2], x.shape[3]
    mask = hfc_mask(h, w, float(tau), mode=mode, temperature=temperature).data
    spectrum = np.fft.fft2(img.data if img.ndim == 3 else img.data[0], axes=(-2, -1))
    return HFCState(tau=float(tau), mask=mask, spectrum=spectrum)


# -- parameter heads ----------------------------------------------------------


@dataclass
class DiffIPParams:
    """Decoded per-image operator parameters (plain floats, for dumps/tests)."""
    gates: dict            # op name -> gate in (0, 1), all eight ops
    tone: np.ndarray       # 8 positive knots
    alpha: float           # contrast in [0, 1]
    lam: float             # sharpen in [0, 1]
    omega: float           # defog in [0.1, 1]
    gamma: float           # gamma in [0.5, 3]
    wb: np.ndarray         # 3 gains in [0.5, 1.5]
    tau: float             # frequency cutoff in [0.1, 0.8]

    def as_dump(self) -> dict:
        """Flat op-name -> {gate, params} mapping plus the tau cutoff."""
        return {
            "tone": {"gate": self.gates["tone"], "params": [float(v) for v in self.tone]},
            "contrast": {"gate": self.gates["contrast"], "params": [self.alpha]},
            "sharpen": {"gate": self.gates["sharpen"], "params": [self.lam]},
            "defog": {"gate": self.gates["defog"], "params": [self.omega]},
            "gamma": {"gate": self.gates["gamma"], "params": [self.gamma]},
            "white_balance": {"gate": self.gates["white_balance"], "params": [float(v) for v in self.wb]},
            "identity": {"gate": self.gates["identity"], "params": []},
            "hfc": {"gate": self.gates["hfc"], "params": []},
            "tau": self.tau,
        }


class GatedEnhancer:
    """Projects an embedding to 24 raw values (8 gate logits, 15 operator
    parameters, 1 tau logit) and applies the gated, normalized operator
    mixture to the image. Counts applications for topology tests."""

    def __init__(self, embed_dim: int, rng: CounterRng | None = None):
        self.embed_dim = embed_dim
        r = rng if rng is not None else CounterRng(0, 1)
        self.weight = Tensor(r.normals((embed_dim, HEAD_DIM), scale=0.01), requires_grad=True)
        self.bias = Tensor(np.zeros(HEAD_DIM), requires_grad=True)
        self.apply_count = 0

    def params(self):
        yield "heads/w", self.weight
        yield "heads/b", self.bias

    def raw(self, f_emb: Tensor) -> Tensor:
        if f_emb.ndim == 1:
            f_emb = ad.reshape(f_emb, (1, f_emb.size))
        if f_emb.shape[1] != self.embed_dim:
            raise ShapeError(f"embedding dim {f_emb.shape[1]} != heads dim {self.embed_dim}")
        return ad.badd(ad.matmul(f_emb, self.weight), self.bias)

    def predict_tau(self, f_emb: Tensor) -> Tensor:
        """Eight-tenths-capped sigmoid of the dedicated affine row."""
        raw = self.raw(f_emb)
        return tau_from_logit(raw[:, 23])

    def decode(self, f_emb: Tensor) -> dict:
        """Tensor-valued parameter bundle for the differentiable path."""
        raw = self.raw(f_emb)
        n = raw.shape[0]
        gates = ad.sigmoid(raw[:, 0:8])
        tone = ad.add(ad.softplus(raw[:, 8:16]), Tensor(1e-3))
        alpha = ad.sigmoid(raw[:, 16])
        lam = ad.sigmoid(raw[:, 17])
        omega = ad.add(ad.mul(ad.sigmoid(raw[:, 18]), Tensor(OMEGA_SPAN)), Tensor(OMEGA_LO))
        gamma = ad.add(ad.mul(ad.sigmoid(raw[:, 19]), Tensor(GAMMA_SPAN)), Tensor(GAMMA_LO))
        wb = ad.add(ad.mul(ad.sigmoid(raw[:, 20:23]), Tensor(WB_SPAN)), Tensor(WB_LO))
        tau = tau_from_logit(raw[:, 23])
        return {"n": n, "gates": gates, "tone": tone, "alpha": alpha, "lam": lam,
                "omega": omega, "gamma": gamma, "wb": wb, "tau": tau}

    def decode_values(self, f_emb: Tensor) -> DiffIPParams:
        d = self.decode(f_emb)
        g = d["gates"].data[0]
        return DiffIPParams(
            gates={name: float(g[i]) for i, name in enumerate(OP_NAMES)},
            tone=d["tone"].data[0].copy(),
            alpha=float(d["alpha"].data[0]),
            lam=float(d["lam"].data[0]),
            omega=float(d["omega"].data[0]),
            gamma=float(d["gamma"].data[0]),
            wb=d["wb"].data[0].copy(),
            tau=float(d["tau"].data[0]),
        )

    def apply(self, f_emb: Tensor, img: Tensor, hfc_mode: str = "soft") -> Tensor:
        """N( sum_op gate_op * N(op(I; params(f_emb))) ), per image."""
        x, squeeze = _batched(img)
        n = x.shape[0]
        d = self.decode(f_emb)
        if d["n"] != n:
            raise ShapeError(f"{d['n']} embeddings for a batch of {n} images")
        self.apply_count += 1

        outs = [
            op_tone(x, d["tone"]),
            op_contrast(x, d["alpha"]),
            op_sharpen(x, d["lam"]),
            op_defog(x, d["omega"]),
            op_gamma(x, d["gamma"]),
            op_white_balance(x, d["wb"]),
            x,
            op_hfc(x, d["tau"], mode=hfc_mode, normalize=False),
        ]
        gates = d["gates"]
        acc = None
        for k, o in enumerate(outs):
            normed = normalize_per_image(o)
            term = ad.bmul(normed, ad.reshape(gates[:, k], (n, 1, 1, 1)))
            acc = term if acc is None else ad.add(acc, term)
        return _unbatch(normalize_per_image(acc), squeeze)

    def gate_dump(self, f_emb: Tensor) -> dict:
        return self.decode_values(f_emb).as_dump()
