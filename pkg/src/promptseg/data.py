"""Deterministic synthetic scenes with adverse-condition corruptions.

Each sample is (clean, adverse, mask): a smooth noisy background with
1-4 solid shapes (the foreground class), degraded by fog (scattering
model), darkness (power law), both, or neither. Everything derives from
counter-based streams, so a sample is a pure function of its seed.

On-disk layout: <root>/{train,test,test_ood}/{clean,adverse,mask}/NNNNN.*
with images as PNG and masks as P5 PGM holding {0, 255}. The OOD split
draws corruption strengths from ranges disjoint from training (denser
fog, darker gamma) to probe generalization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .imageio import read_image, read_mask, write_image, write_mask
from .rng import CounterRng

TAGS = ("fog", "dark", "fog+dark", "none")

FOG_T0 = (0.3, 0.9)
FOG_A0 = (0.7, 1.0)
DARK_GAMMA = (1.5, 5.0)
OOD_FOG_T0 = (0.2, 0.3)
OOD_DARK_GAMMA = (5.0, 6.0)

MASK_FRACTION = (0.05, 0.6)


def _bilerp_upsample(lo: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize of a coarse grid to (h, w), half-pixel centers."""
    lh, lw = lo.shape
    ys = (np.arange(h) + 0.5) * lh / h - 0.5
    xs = (np.arange(w) + 0.5) * lw / w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, lh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, lw - 1)
    y1 = np.minimum(y0 + 1, lh - 1)
    x1 = np.minimum(x0 + 1, lw - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    a = lo[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
    b = lo[np.ix_(y0, x1)] * (1 - fy) * fx
    c = lo[np.ix_(y1, x0)] * fy * (1 - fx)
    d = lo[np.ix_(y1, x1)] * fy * fx
    return a + b + c + d


def _render_attempt(seed: int, attempt: int, h: int, w: int):
    root = CounterRng(seed, 1000 + attempt)
    bg_rng = root.child(1)
    shape_rng = root.child(2)
    tex_rng = root.child(3)

    # background: corner-anchored gradient + band-limited noise per channel
    clean = np.empty((3, h, w))
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    for c in range(3):
        c00, c01, c10, c11 = bg_rng.uniforms(4, 0.25, 0.75)
        grad = c00 * (1 - yy) * (1 - xx) + c01 * (1 - yy) * xx + c10 * yy * (1 - xx) + c11 * yy * xx
        coarse = bg_rng.uniforms((h // 8 + 1) * (w // 8 + 1), -0.12, 0.12).reshape(h // 8 + 1, w // 8 + 1)
        clean[c] = grad + _bilerp_upsample(coarse, h, w)
    bg_mean = clean.mean(axis=(1, 2))

    # foreground shapes with colors separated from the background
    mask = np.zeros((h, w), dtype=bool)
    n_shapes = shape_rng.randint(1, 4)
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    for _ in range(n_shapes):
        kind = shape_rng.randint(0, 1)
        cy = shape_rng.uniform(0.2 * h, 0.8 * h)
        cx = shape_rng.uniform(0.2 * w, 0.8 * w)
        a = shape_rng.uniform(0.08 * h, 0.28 * h)
        b = shape_rng.uniform(0.08 * h, 0.28 * h)
        theta = shape_rng.uniform(0.0, np.pi)
        color = shape_rng.uniforms(3, 0.05, 0.95)
        for _retry in range(8):
            if np.abs(color - bg_mean).sum() >= 0.45:
                break
            color = shape_rng.uniforms(3, 0.05, 0.95)
        u = (ys - cy) * np.cos(theta) + (xs - cx) * np.sin(theta)
        v = -(ys - cy) * np.sin(theta) + (xs - cx) * np.cos(theta)
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0 if kind == 0 else (np.abs(u) <= a) & (np.abs(v) <= b)
        texture = _bilerp_upsample(
            tex_rng.uniforms((h // 8 + 1) * (w // 8 + 1), -0.05, 0.05).reshape(h // 8 + 1, w // 8 + 1), h, w)
        for c in range(3):
            clean[c] = np.where(inside, color[c] + texture, clean[c])
        mask |= inside

    return np.clip(clean, 0.02, 0.98), mask.astype(np.float64)


def render_scene(seed: int, h: int, w: int):
    """Deterministic (clean, mask) pair; mask fraction forced into
    [0.05, 0.6] by re-rendering with a derived attempt stream."""
    for attempt in range(64):
        clean, mask = _render_attempt(seed, attempt, h, w)
        frac = mask.mean()
        if MASK_FRACTION[0] <= frac <= MASK_FRACTION[1]:
            return clean, mask
    raise ContractError(f"seed {seed}: no admissible scene in 64 attempts")


def corrupt_fog(clean: np.ndarray, t0: float, a0: float) -> np.ndarray:
    """Scattering model: adverse = clean * t0 + a0 * (1 - t0)."""
    if not 0.0 <= t0 <= 1.0:
        raise ContractError(f"transmission t0={t0} outside [0, 1]")
    return np.clip(clean * t0 + a0 * (1.0 - t0), 0.0, 1.0)


def corrupt_dark(clean: np.ndarray, gamma: float) -> np.ndarray:
    """Power-law darkening; gamma in [1.5, 6] (the top band feeds the OOD split)."""
    if not 1.5 <= gamma <= 6.0:
        raise ContractError(f"gamma={gamma} outside [1.5, 6]")
    return np.clip(clean, 0.0, 1.0) ** gamma


@dataclass
class SceneSample:
    clean: np.ndarray
    adverse: np.ndarray
    mask: np.ndarray
    tag: str
    seed: int
    params: dict


def make_sample(seed: int, h: int, w: int, tag: str, ood: bool = False) -> SceneSample:
    clean, mask = render_scene(seed, h, w)
    prng = CounterRng(seed, 7)
    t0_range = OOD_FOG_T0 if ood else FOG_T0
    g_range = OOD_DARK_GAMMA if ood else DARK_GAMMA
    t0 = prng.uniform(*t0_range)
    a0 = prng.uniform(*FOG_A0)
    gamma = prng.uniform(*g_range)
    params = {}
    adverse = clean
    if tag in ("dark", "fog+dark"):
        adverse = corrupt_dark(adverse, gamma)
        params["gamma"] = gamma
    if tag in ("fog", "fog+dark"):
        adverse = corrupt_fog(adverse, t0, a0)
        params.update(t0=t0, a0=a0)
    return SceneSample(clean=clean, adverse=adverse, mask=mask, tag=tag, seed=seed, params=params)


def _split_seeds(seed: int, n_train: int, n_test: int):
    base = seed * 10_000_000
    train = [base + 1_000_000 + i for i in range(n_train)]
    test = [base + 2_000_000 + i for i in range(n_test)]
    ood = [base + 3_000_000 + i for i in range(n_test)]
    return train, test, ood


def make_split(root, n_train: int = 200, n_test: int = 50, seed: int = 0, size: int = 64) -> dict:
    """Write the three splits to disk; corruption tags cycle so the
    histogram is uniform within one sample."""
    root = Path(root)
    train_seeds, test_seeds, ood_seeds = _split_seeds(seed, n_train, n_test)
    info = {"seed": seed, "size": size, "splits": {}}
    for split, seeds, ood in (("train", train_seeds, False), ("test", test_seeds, False),
                              ("test_ood", ood_seeds, True)):
        for sub in ("clean", "adverse", "mask"):
            (root / split / sub).mkdir(parents=True, exist_ok=True)
        tags = []
        for i, s in enumerate(seeds):
            tag = TAGS[i % len(TAGS)]
            sample = make_sample(s, size, size, tag, ood=ood)
            stem = f"{i:05d}"
            write_image(root / split / "clean" / f"{stem}.png", sample.clean)
            write_image(root / split / "adverse" / f"{stem}.png", sample.adverse)
            write_mask(root / split / "mask" / f"{stem}.pgm", sample.mask)
            tags.append(tag)
        info["splits"][split] = {"count": len(seeds), "tags": {t: tags.count(t) for t in TAGS}}
    (root / "manifest.json").write_text(json.dumps(info, indent=1, sort_keys=True))
    return info


def load_split(split_dir):
    """Load one split into memory: (clean, adverse, mask) float arrays."""
    split_dir = Path(split_dir)
    stems = sorted(p.stem for p in (split_dir / "mask").glob("*.pgm"))
    if not stems:
        raise ContractError(f"no samples under {split_dir}")
    clean = np.stack([read_image(split_dir / "clean" / f"{s}.png") for s in stems])
    adverse = np.stack([read_image(split_dir / "adverse" / f"{s}.png") for s in stems])
    mask = np.stack([read_mask(split_dir / "mask" / f"{s}.pgm") for s in stems])
    return clean, adverse, mask


def scene_checksum(seed: int, h: int, w: int) -> str:
    clean, mask = render_scene(seed, h, w)
    return hashlib.sha256(clean.tobytes() + mask.tobytes()).hexdigest()
