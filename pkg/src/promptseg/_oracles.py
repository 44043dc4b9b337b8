"""Independent brute-force reference implementations.

Deliberately written as plain per-pixel loops with no code shared with
the package: these pin the metric/optimizer semantics so the vectorized
implementations can be checked against them to tight tolerances.
"""

import math

import numpy as np

EPS = 1e-8


def mae_oracle(pred, gt):
    h, w = pred.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            total += abs(pred[y, x] - gt[y, x])
    return total / (h * w)


def _mean(vals):
    return sum(vals) / len(vals) if vals else 0.0


def _std(vals):
    if not vals:
        return 0.0
    m = _mean(vals)
    return math.sqrt(_mean([(v - m) ** 2 for v in vals]))


def s_measure_oracle(pred, gt, alpha=0.5):
    h, w = gt.shape
    mu = _mean([gt[y, x] for y in range(h) for x in range(w)])
    if mu == 0.0:
        return 1.0 - _mean([pred[y, x] for y in range(h) for x in range(w)])
    if mu == 1.0:
        return _mean([pred[y, x] for y in range(h) for x in range(w)])

    def obj(vals):
        if not vals:
            return 0.0
        m, s = _mean(vals), _std(vals)
        return 2.0 * m / (m * m + 1.0 + 2.0 * s)

    fg_vals = [pred[y, x] for y in range(h) for x in range(w) if gt[y, x] == 1.0]
    bg_vals = [1.0 - pred[y, x] for y in range(h) for x in range(w) if gt[y, x] == 0.0]
    s_obj = mu * obj(fg_vals) + (1.0 - mu) * obj(bg_vals)

    ys = [y for y in range(h) for x in range(w) if gt[y, x] == 1.0]
    xs = [x for y in range(h) for x in range(w) if gt[y, x] == 1.0]
    cy = min(max(int(round(_mean(ys))), 1), h - 1)
    cx = min(max(int(round(_mean(xs))), 1), w - 1)

    def ssim(py0, py1, px0, px1):
        pv = [pred[y, x] for y in range(py0, py1) for x in range(px0, px1)]
        gv = [gt[y, x] for y in range(py0, py1) for x in range(px0, px1)]
        mx, my = _mean(pv), _mean(gv)
        vx = _mean([(v - mx) ** 2 for v in pv])
        vy = _mean([(v - my) ** 2 for v in gv])
        cov = _mean([(a - mx) * (b - my) for a, b in zip(pv, gv)])
        return (4.0 * mx * my * cov + EPS) / ((mx * mx + my * my) * (vx + vy) + EPS)

    s_reg = 0.0
    for (y0, y1, x0, x1) in ((0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)):
        area = (y1 - y0) * (x1 - x0)
        s_reg += area / (h * w) * ssim(y0, y1, x0, x1)
    return alpha * s_obj + (1.0 - alpha) * s_reg


def _binarize_oracle(pred, thr):
    if thr == 0.0:
        return pred > 0.0
    return pred >= thr


def e_measure_oracle(pred, gt):
    h, w = gt.shape
    n_fg = int(gt.sum())
    scores = []
    for k in range(256):
        b = _binarize_oracle(pred, k / 255.0).astype(np.float64)
        if n_fg == 0:
            scores.append(1.0 - _mean([b[y, x] for y in range(h) for x in range(w)]))
            continue
        if n_fg == h * w:
            scores.append(_mean([b[y, x] for y in range(h) for x in range(w)]))
            continue
        mb = _mean([b[y, x] for y in range(h) for x in range(w)])
        mg = _mean([gt[y, x] for y in range(h) for x in range(w)])
        acc = 0.0
        for y in range(h):
            for x in range(w):
                pp = b[y, x] - mb
                gg = gt[y, x] - mg
                xi = 2.0 * pp * gg / (pp * pp + gg * gg + EPS)
                acc += (xi + 1.0) ** 2 / 4.0
        scores.append(acc / (h * w))
    return _mean(scores)


def weighted_f_oracle(pred, gt, beta2=1.0):
    h, w = gt.shape
    fg = [(y, x) for y in range(h) for x in range(w) if gt[y, x] == 1.0]
    if not fg:
        return 0.0
    err = np.abs(pred - gt)

    # nearest-foreground pooling: mean error over all tied nearest pixels
    err_t = err.copy()
    dist = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if gt[y, x] == 1.0:
                continue
            d2s = [(y - fy) ** 2 + (x - fx) ** 2 for fy, fx in fg]
            dmin = min(d2s)
            ties = [err[fy, fx] for (fy, fx), d in zip(fg, d2s) if d == dmin]
            err_t[y, x] = sum(ties) / len(ties)
            dist[y, x] = math.sqrt(dmin)

    # 7x7 sigma=5 gaussian, zero padding
    kern = [[math.exp(-(dy * dy + dx * dx) / (2.0 * 25.0)) for dx in range(-3, 4)] for dy in range(-3, 4)]
    ksum = sum(sum(row) for row in kern)
    kern = [[v / ksum for v in row] for row in kern]
    smoothed = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-3, 4):
                for dx in range(-3, 4):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += kern[dy + 3][dx + 3] * err_t[yy, xx]
            smoothed[y, x] = acc

    tp_w = 0.0
    fn_w = 0.0
    fp_w = 0.0
    for y in range(h):
        for x in range(w):
            if gt[y, x] == 1.0:
                e = min(err[y, x], smoothed[y, x])
                tp_w += 1.0 - e
                fn_w += e
            else:
                b = 2.0 - math.exp(math.log(0.5) / 5.0 * dist[y, x])
                fp_w += err[y, x] * b
    precision = tp_w / (tp_w + fp_w + EPS)
    recall = tp_w / (tp_w + fn_w + EPS)
    return (1.0 + beta2) * precision * recall / (beta2 * precision + recall + EPS)


def pr_oracle(preds, gts):
    out = []
    for k in range(256):
        thr = k / 255.0
        tp = fp = fn = 0
        for pred, gt in zip(preds, gts):
            h, w = gt.shape
            for y in range(h):
                for x in range(w):
                    b = (pred[y, x] > 0.0) if thr == 0.0 else (pred[y, x] >= thr)
                    if b and gt[y, x] == 1.0:
                        tp += 1
                    elif b:
                        fp += 1
                    elif gt[y, x] == 1.0:
                        fn += 1
        out.append((thr, tp / (tp + fp + EPS), tp / (tp + fn + EPS)))
    return out


def adamw_oracle(p0, grads, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.01):
    """Straight-line decoupled AdamW over a list of gradient arrays."""
    p = [float(v) for v in p0]
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    trace = []
    for step, g in enumerate(grads, start=1):
        for i in range(len(p)):
            m[i] = beta1 * m[i] + (1 - beta1) * float(g[i])
            v[i] = beta2 * v[i] + (1 - beta2) * float(g[i]) ** 2
            m_hat = m[i] / (1 - beta1 ** step)
            v_hat = v[i] / (1 - beta2 ** step)
            p[i] = p[i] - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * p[i])
        trace.append(list(p))
    return trace


def bce_oracle(logits, gt):
    flat_z = np.asarray(logits).reshape(-1)
    flat_y = np.asarray(gt).reshape(-1)
    total = 0.0
    for z, y in zip(flat_z, flat_y):
        p = 1.0 / (1.0 + math.exp(-z))
        total += -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))
    return total / flat_z.size
