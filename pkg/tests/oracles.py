"""Slow, obviously-correct reference implementations used by the tests."""

import math

import numpy as np


def conv2d_loops(x, w, b, stride, pad, relu=False):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = float(b[oc])
                for ic in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            acc += float(w[oc, ic, u, v]) * xp[ic, i * stride + u, j * stride + v]
                out[oc, i, j] = max(acc, 0.0) if relu else acc
    return out


def max_pool_loops(x, k, s):
    c, h, w = x.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    out = np.full((c, ho, wo), -np.inf)
    for ch in range(c):
        for i in range(ho):
            for j in range(wo):
                for u in range(k):
                    for v in range(k):
                        out[ch, i, j] = max(out[ch, i, j], x[ch, i * s + u, j * s + v])
    return out


def xcorr_loops(search, kernel):
    c, h, w = search.shape
    _, kh, kw = kernel.shape
    out = np.zeros((1, h - kh + 1, w - kw + 1))
    for i in range(h - kh + 1):
        for j in range(w - kw + 1):
            acc = 0.0
            for ch in range(c):
                for u in range(kh):
                    for v in range(kw):
                        acc += float(search[ch, i + u, j + v]) * float(kernel[ch, u, v])
            out[0, i, j] = acc
    return out


def bilinear_loops(x, px, py):
    """Weighted sum over the four neighbours; outside nodes read as zero."""
    c, h, w = x.shape
    x0, y0 = math.floor(px), math.floor(py)
    out = np.zeros(c)
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            wgt = (1.0 - abs(px - xx)) * (1.0 - abs(py - yy))
            if 0 <= xx < w and 0 <= yy < h:
                for ch in range(c):
                    out[ch] += wgt * float(x[ch, yy, xx])
    return out


def iou_scalar(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def nms_exhaustive(boxes, scores, thr):
    """Greedy NMS by repeated full scans; ties go to the lower index."""
    n = len(boxes)
    alive = [True] * n
    keep = []
    while any(alive):
        best = None
        for i in range(n):
            if alive[i] and (best is None or scores[i] > scores[best]):
                best = i
        keep.append(best)
        alive[best] = False
        for j in range(n):
            if alive[j] and iou_scalar(boxes[best], boxes[j]) > thr:
                alive[j] = False
    return keep


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def success_sum(ious, thresholds):
    """AUC by explicit double loop over thresholds and frames."""
    total = 0.0
    for t in thresholds:
        hits = 0
        for v in ious:
            if v > t or v == 1.0:
                hits += 1
        total += hits / len(ious)
    return total / len(thresholds)


def gradient_rel_error(analytic, numeric):
    """Max component error relative to the larger gradient's magnitude."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def ce_gradient_errors(n_points, seed=0):
    from spmtrack.losses import cross_entropy

    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_points):
        n = int(rng.integers(1, 6))
        z = rng.normal(0, 2, (n, 2))
        y = rng.integers(0, 2, n)
        _, g = cross_entropy(z, y)
        fd = central_difference(lambda v: cross_entropy(v, y)[0], z)
        errs.append(gradient_rel_error(g, fd))
    return np.array(errs)


def smooth_l1_gradient_errors(n_points, seed=0, kink_margin=1e-3):
    """Points with any |pred - target| within ``kink_margin`` of 1 are redrawn."""
    from spmtrack.losses import smooth_l1

    rng = np.random.default_rng(seed)
    errs = []
    while len(errs) < n_points:
        n = int(rng.integers(1, 6))
        p, t = rng.normal(0, 1.5, (n, 4)), rng.normal(0, 1.5, (n, 4))
        if (np.abs(np.abs(p - t) - 1.0) < kink_margin).any():
            continue
        _, g = smooth_l1(p, t)
        fd = central_difference(lambda v: smooth_l1(v, t)[0], p)
        errs.append(gradient_rel_error(g, fd))
    return np.array(errs)
