"""Fine matching: multi-tap RoI Align and the relation head."""

from dataclasses import dataclass

import numpy as np

from .boxes import BBox, BoxDelta, encode_deltas, iou_matrix
from .kernels import ConvParams, ShapeError, bilinear_sample_many, conv2d

ROI_TAPS = ("conv2", "conv4")


@dataclass(frozen=True)
class FmHeadConfig:
    roi_channels: int = 640
    reduce_channels: int = 256
    hidden: int = 256
    pool_size: int = 6

    def param_shapes(self, prefix="fm"):
        cin = 2 * self.roi_channels
        flat = self.reduce_channels * self.pool_size**2
        return [
            (f"{prefix}.reduce.weight", (self.reduce_channels, cin, 1, 1), cin),
            (f"{prefix}.reduce.bias", (self.reduce_channels,), cin),
            (f"{prefix}.fc1.weight", (self.hidden, flat), flat),
            (f"{prefix}.fc1.bias", (self.hidden,), flat),
            (f"{prefix}.fc2.weight", (self.hidden, self.hidden), self.hidden),
            (f"{prefix}.fc2.bias", (self.hidden,), self.hidden),
            (f"{prefix}.cls.weight", (2, self.hidden), self.hidden),
            (f"{prefix}.cls.bias", (2,), self.hidden),
            (f"{prefix}.reg.weight", (4, self.hidden), self.hidden),
            (f"{prefix}.reg.bias", (4,), self.hidden),
        ]


@dataclass(frozen=True)
class FmHeadWeights:
    reduce: ConvParams
    fc1: tuple  # (weight (out, in), bias)
    fc2: tuple
    cls: tuple
    reg: tuple

    @classmethod
    def from_weights(cls, w, cfg=FmHeadConfig(), prefix="fm"):
        for n, s, _ in cfg.param_shapes(prefix):
            if n not in w:
                raise ShapeError(f"missing weight {n!r}")
            if w[n].shape != s:
                raise ShapeError(f"{n!r} has shape {w[n].shape}, expected {s}")

        def fc(name):
            return (w[f"{prefix}.{name}.weight"], w[f"{prefix}.{name}.bias"])

        reduce = ConvParams(w[f"{prefix}.reduce.weight"], w[f"{prefix}.reduce.bias"], apply_relu=True)
        return cls(reduce, fc("fc1"), fc("fc2"), fc("cls"), fc("reg"))


def roi_align(taps, box, out_size=6, samples_per_bin=2, tap_order=ROI_TAPS):
    """Pool ``box`` (image coordinates) from each tap into ``out_size`` bins.

    ``taps`` maps name -> ``(feature_map, stride)``; image coordinates become
    feature coordinates by dividing by the stride. Each bin averages
    ``samples_per_bin**2`` bilinear samples placed at ``(s + 0.5) / S`` of the
    bin. Tap results are concatenated in ``tap_order``.
    """
    b = box.as_array() if isinstance(box, BBox) else np.asarray(box, float).reshape(4)
    n, s = out_size, samples_per_bin
    frac = (np.arange(n)[:, None] + (np.arange(s)[None, :] + 0.5) / s).reshape(-1) / n
    pooled = []
    for name in tap_order:
        if name not in taps:
            raise KeyError(f"missing feature tap {name!r}")
        fmap, stride = taps[name]
        x1, y1, x2, y2 = b / stride
        xs = x1 + (x2 - x1) * frac
        ys = y1 + (y2 - y1) * frac
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        vals = bilinear_sample_many(fmap, gx.ravel(), gy.ravel()).astype(np.float64)
        c = vals.shape[0]
        vals = vals.reshape(c, n, s, n, s).mean(axis=(2, 4))
        pooled.append(vals.astype(np.float32))
    return np.concatenate(pooled, axis=0)


def _softmax_fg(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e[..., 1] / e.sum(axis=-1)


def relation_head_batch(template_roi, proposal_rois, w):
    """Score ``P`` proposals against one template; returns ``(fg (P,), deltas (P, 4))``."""
    t = np.asarray(template_roi, dtype=np.float32)
    props = np.asarray(proposal_rois, dtype=np.float32)
    if props.ndim != 4 or props.shape[1:] != t.shape:
        raise ShapeError(f"proposal RoIs {props.shape} do not match template RoI {t.shape}")
    if 2 * t.shape[0] != w.reduce.in_channels:
        raise ShapeError(
            f"pair feature has {2 * t.shape[0]} channels, head expects {w.reduce.in_channels}"
        )
    hidden = []
    for p in props:
        pair = np.concatenate([t, p], axis=0)
        hidden.append(conv2d(pair, w.reduce).reshape(-1))
    x = np.asarray(hidden, dtype=np.float64)
    for weight, bias in (w.fc1, w.fc2):
        if weight.shape[1] != x.shape[1]:
            raise ShapeError(f"fc layer expects {weight.shape[1]} inputs, got {x.shape[1]}")
        x = np.maximum(x @ weight.astype(np.float64).T + bias, 0.0)
    logits = x @ w.cls[0].astype(np.float64).T + w.cls[1]
    deltas = x @ w.reg[0].astype(np.float64).T + w.reg[1]
    return _softmax_fg(logits), deltas


def relation_head(template_roi, proposal_roi, w):
    fg, deltas = relation_head_batch(template_roi, np.asarray(proposal_roi)[None], w)
    return float(fg[0]), BoxDelta(*(float(v) for v in deltas[0]))


def assign_fm_labels(proposal_boxes, gt, thr=0.5):
    """``(labels bool (N,), targets (N, 4))``; positive iff IoU > ``thr``."""
    boxes = np.asarray(
        [b.as_array() if isinstance(b, BBox) else b for b in proposal_boxes], dtype=np.float64
    ).reshape(-1, 4)
    if boxes.shape[0] == 0:
        return np.zeros(0, dtype=bool), np.zeros((0, 4))
    ious = iou_matrix(boxes, gt)[:, 0]
    labels = ious > thr
    targets = np.zeros((boxes.shape[0], 4))
    if labels.any():
        g = np.repeat(gt.as_array()[None] if isinstance(gt, BBox) else np.asarray(gt, float)[None], labels.sum(), axis=0)
        targets[labels] = encode_deltas(g, boxes[labels])
    return labels, targets


def sample_fm_training(labels, n=48, seed=0):
    """Balanced sample of proposal indices; short classes are backfilled.

    Returns indices sorted ascending; size is ``min(n, len(labels))``.
    """
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        raise ValueError("no proposals to sample from")
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    n_pos = min(len(pos), n // 2)
    n_neg = min(len(neg), n - n_pos)
    n_pos = min(len(pos), n - n_neg)
    chosen = np.concatenate(
        [rng.choice(pos, n_pos, replace=False), rng.choice(neg, n_neg, replace=False)]
    )
    return np.sort(chosen.astype(np.int64))
