"""Binary-segmentation quality metrics and the pooled PR curve.

Four scalar metrics (structure, alignment, weighted overlap, absolute
error) plus a 256-threshold precision/recall curve. Every stabilizing
constant is fixed here so the brute-force oracle tests pin behavior;
absolute values are comparable within this artifact only.

Binarization rule used by the threshold sweeps: ``pred >= thr`` for
thr > 0 and ``pred > 0`` at thr == 0, which keeps binary maps fixed
points across the whole sweep (so a perfect prediction scores 1 at
every threshold).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ContractError

EPS = 1e-8
N_THRESHOLDS = 256
THRESHOLDS = np.arange(N_THRESHOLDS) / 255.0

_B_DECAY = np.log(0.5) / 5.0  # background weight 2 - exp(ln(0.5)/5 * dist)


def _check_pred(pred: np.ndarray):
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise ContractError("predictions must lie in [0, 1]")


def _check_binary(gt: np.ndarray):
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ContractError("ground truth must be binary {0, 1}")


def binarize(pred: np.ndarray, thr: float) -> np.ndarray:
    return pred > 0.0 if thr == 0.0 else pred >= thr


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    _check_pred(pred)
    return float(np.abs(pred - gt).mean())


# -- structure measure ---------------------------------------------------------


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    m = float(x.mean())
    s = float(x.std())  # population std; fixed convention
    return 2.0 * m / (m * m + 1.0 + 2.0 * s)


def _ssim_block(x: np.ndarray, y: np.ndarray) -> float:
    mx, my = float(x.mean()), float(y.mean())
    vx, vy = float(x.var()), float(y.var())
    cov = float(((x - mx) * (y - my)).mean())
    return (4.0 * mx * my * cov + EPS) / ((mx * mx + my * my) * (vx + vy) + EPS)


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """alpha * object-similarity + (1-alpha) * region-similarity.

    Degenerate masks: empty gt -> 1 - mean(pred); full gt -> mean(pred).
    Region split is at the gt centroid (clamped so all four blocks are
    nonempty), each block scored SSIM-style and weighted by block area.
    """
    _check_pred(pred)
    _check_binary(gt)
    mu = float(gt.mean())
    if mu == 0.0:
        return 1.0 - float(pred.mean())
    if mu == 1.0:
        return float(pred.mean())

    fg = gt == 1.0
    s_obj = mu * _object_score(pred[fg]) + (1.0 - mu) * _object_score(1.0 - pred[~fg])

    h, w = gt.shape
    rows, cols = np.nonzero(fg)
    cy = min(max(int(round(rows.mean())), 1), h - 1)
    cx = min(max(int(round(cols.mean())), 1), w - 1)
    s_reg = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        pb, gb = pred[rs, cs], gt[rs, cs]
        s_reg += (pb.size / (h * w)) * _ssim_block(pb, gb)
    return float(alpha * s_obj + (1.0 - alpha) * s_reg)


# -- mean enhanced-alignment measure ---------------------------------------------


def e_measure_mean(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean over 256 thresholds of the enhanced alignment between the
    binarized prediction and the mask, both bias-shifted by their means."""
    _check_pred(pred)
    _check_binary(gt)
    bins = np.stack([binarize(pred, t) for t in THRESHOLDS]).astype(np.float64)  # (256, H, W)
    if not gt.any():
        return float((1.0 - bins.mean(axis=(1, 2))).mean())
    if gt.all():
        return float(bins.mean(axis=(1, 2)).mean())
    phi_g = gt - gt.mean()
    phi_p = bins - bins.mean(axis=(1, 2), keepdims=True)
    xi = 2.0 * phi_p * phi_g / (phi_p * phi_p + phi_g * phi_g + EPS)
    enhanced = (xi + 1.0) ** 2 / 4.0
    return float(enhanced.mean(axis=(1, 2)).mean())


# -- weighted F-measure -----------------------------------------------------------


def _gaussian7(sigma: float = 5.0) -> np.ndarray:
    r = np.arange(7) - 3.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()

_K7 = _gaussian7()


def _nearest_fg_pool(err: np.ndarray, fg: np.ndarray):
    """For each background pixel: exact squared grid distance to the
    nearest foreground pixel and the mean foreground error over all tied
    nearest pixels (tie-free, so an independent oracle can match it)."""
    h, w = fg.shape
    fy, fx = np.nonzero(fg)
    by, bx = np.nonzero(~fg)
    ferr = err[fy, fx]
    d2 = np.empty(by.size, dtype=np.int64)
    pooled = np.empty(by.size, dtype=np.float64)
    chunk = max(1, 2_000_000 // max(fy.size, 1))
    for s in range(0, by.size, chunk):
        cy = by[s:s + chunk, None] - fy[None, :]
        cx = bx[s:s + chunk, None] - fx[None, :]
        dd = cy * cy + cx * cx
        dmin = dd.min(axis=1)
        tie = dd == dmin[:, None]
        pooled[s:s + chunk] = (tie * ferr).sum(axis=1) / tie.sum(axis=1)
        d2[s:s + chunk] = dmin
    dist = np.zeros((h, w))
    dist[by, bx] = np.sqrt(d2.astype(np.float64))
    err_t = err.copy()
    err_t[by, bx] = pooled
    return dist, err_t


def weighted_f(pred: np.ndarray, gt: np.ndarray, beta2: float = 1.0) -> float:
    """Location/dependency-weighted F-measure.

    Errors at background pixels first inherit the mean error of their
    nearest foreground pixels; the 7x7 sigma=5 Gaussian (zero padding)
    then smooths that field, and foreground errors take the pointwise
    min with it. Background errors are weighted by
    2 - exp(ln(0.5)/5 * dist-to-foreground). Empty gt scores 0.
    """
    _check_pred(pred)
    _check_binary(gt)
    fg = gt == 1.0
    if not fg.any():
        return 0.0
    err = np.abs(pred - gt)
    dist, err_t = _nearest_fg_pool(err, fg)
    smoothed = ndimage.convolve(err_t, _K7, mode="constant", cval=0.0)
    err_min = err.copy()
    take = fg & (smoothed < err)
    err_min[take] = smoothed[take]
    weight = np.ones_like(err)
    weight[~fg] = 2.0 - np.exp(_B_DECAY * dist[~fg])
    ew = err_min * weight
    n_fg = float(fg.sum())
    tp_w = n_fg - float(ew[fg].sum())
    fp_w = float(ew[~fg].sum())
    fn_w = float(ew[fg].sum())
    precision = tp_w / (tp_w + fp_w + EPS)
    recall = tp_w / (tp_w + fn_w + EPS)
    return float((1.0 + beta2) * precision * recall / (beta2 * precision + recall + EPS))


# -- pooled precision/recall curve ---------------------------------------------------


def pr_curve(preds, gts):
    """Dataset-pooled (threshold, precision, recall) at 256 thresholds."""
    tp = np.zeros(N_THRESHOLDS)
    fp = np.zeros(N_THRESHOLDS)
    fn = np.zeros(N_THRESHOLDS)
    for pred, gt in zip(preds, gts):
        _check_pred(pred)
        _check_binary(gt)
        pos = gt == 1.0
        for k, thr in enumerate(THRESHOLDS):
            b = binarize(pred, thr)
            tp[k] += float(np.count_nonzero(b & pos))
            fp[k] += float(np.count_nonzero(b & ~pos))
            fn[k] += float(np.count_nonzero(~b & pos))
    precision = tp / (tp + fp + EPS)
    recall = tp / (tp + fn + EPS)
    return [(float(THRESHOLDS[k]), float(precision[k]), float(recall[k])) for k in range(N_THRESHOLDS)]


# -- report -----------------------------------------------------------------------


@dataclass
class MetricsReport:
    s_alpha: float
    e_phi: float
    f_beta_w: float
    mae: float
    pr_curve: list = field(repr=False)
    n_images: int = 0

    def to_dict(self) -> dict:
        return {
            "s_alpha": self.s_alpha,
            "e_phi": self.e_phi,
            "f_beta_w": self.f_beta_w,
            "mae": self.mae,
            "n_images": self.n_images,
            "pr_curve": [list(t) for t in self.pr_curve],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["s_alpha", "e_phi", "f_beta_w", "mae", "n_images", "pr_curve"],
    "properties": {
        "s_alpha": {"type": "number", "minimum": 0, "maximum": 1},
        "e_phi": {"type": "number", "minimum": 0, "maximum": 1},
        "f_beta_w": {"type": "number", "minimum": 0, "maximum": 1},
        "mae": {"type": "number", "minimum": 0, "maximum": 1},
        "n_images": {"type": "integer", "minimum": 0},
        "pr_curve": {
            "type": "array", "minItems": 256, "maxItems": 256,
            "items": {"type": "array", "minItems": 3, "maxItems": 3,
                      "items": {"type": "number"}},
        },
    },
    "additionalProperties": False,
}


def evaluate_maps(preds, gts) -> MetricsReport:
    """Average the per-image scalars; pool the PR curve."""
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts) or not preds:
        raise ContractError("need equally many predictions and masks (>= 1)")
    s = e = f = m = 0.0
    for p, g in zip(preds, gts):
        s += s_measure(p, g)
        e += e_measure_mean(p, g)
        f += weighted_f(p, g)
        m += mae(p, g)
    n = len(preds)
    return MetricsReport(s_alpha=s / n, e_phi=e / n, f_beta_w=f / n, mae=m / n,
                         pr_curve=pr_curve(preds, gts), n_images=n)
