"""Coarse matching: correlation heads, anchor labels and proposal selection.

Score map channels are ``(bg_0, fg_0, bg_1, fg_1, ...)``; delta map channels
are ``(dx_0, dy_0, dw_0, dh_0, dx_1, ...)``. Flattened per-anchor arrays use
the same ``(row, col, anchor)`` order as :func:`boxes.generate_anchors`.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .boxes import (
    MAX_LOG_RATIO,
    AnchorGrid,
    BBox,
    clip_boxes,
    decode_deltas,
    encode_deltas,
    intersection_over_first,
    iou_matrix,
    nms,
)
from .kernels import ConvParams, ShapeError, as_feature_map, conv2d, cross_correlate_many

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


@dataclass(frozen=True)
class CmHeadConfig:
    channels: int = 256
    num_anchors: int = 5

    def param_shapes(self, prefix="cm"):
        c, a = self.channels, self.num_anchors
        out = []
        for name, cin, cout in (
            ("cls_lift", c, 2 * a * c),
            ("reg_lift", c, 4 * a * c),
            ("cls_adjust", 2 * a, 2 * a),
            ("reg_adjust", 4 * a, 4 * a),
        ):
            out.append((f"{prefix}.{name}.weight", (cout, cin, 1, 1), cin))
            out.append((f"{prefix}.{name}.bias", (cout,), cin))
        return out


@dataclass(frozen=True)
class CmHeadWeights:
    cls_lift: ConvParams
    reg_lift: ConvParams
    cls_adjust: ConvParams
    reg_adjust: ConvParams
    num_anchors: int

    def __post_init__(self):
        a = self.num_anchors
        c = self.cls_lift.in_channels
        if self.cls_lift.out_channels != 2 * a * c or self.reg_lift.out_channels != 4 * a * c:
            raise ShapeError("lift channel counts must be 2*A*C and 4*A*C")
        if self.cls_adjust.in_channels != 2 * a or self.reg_adjust.in_channels != 4 * a:
            raise ShapeError("adjust layers must take 2*A and 4*A channels")

    @property
    def channels(self):
        return self.cls_lift.in_channels

    @classmethod
    def from_weights(cls, w, cfg=CmHeadConfig(), prefix="cm"):
        layers = {}
        shapes = dict((n, s) for n, s, _ in cfg.param_shapes(prefix))
        for n, s in shapes.items():
            if n not in w:
                raise ShapeError(f"missing weight {n!r}")
            if w[n].shape != s:
                raise ShapeError(f"{n!r} has shape {w[n].shape}, expected {s}")
        for name in ("cls_lift", "reg_lift", "cls_adjust", "reg_adjust"):
            layers[name] = ConvParams(w[f"{prefix}.{name}.weight"], w[f"{prefix}.{name}.bias"])
        return cls(num_anchors=cfg.num_anchors, **layers)


@dataclass(frozen=True)
class CmKernels:
    """Template lifted into per-anchor correlation kernels."""

    cls: np.ndarray  # (2A, C, h, w)
    reg: np.ndarray  # (4A, C, h, w)


@dataclass(frozen=True)
class CmOutput:
    score_map: np.ndarray  # (2A, Hr, Wr)
    delta_map: np.ndarray  # (4A, Hr, Wr)
    num_anchors: int

    @property
    def grid_shape(self):
        return self.score_map.shape[1:]

    def logits(self):
        a = self.num_anchors
        _, h, w = self.score_map.shape
        return self.score_map.reshape(a, 2, h, w).transpose(2, 3, 0, 1).reshape(-1, 2)

    def fg_prob(self):
        """Two-way softmax foreground probability per anchor."""
        z = self.logits().astype(np.float64)
        # logistic of the logit gap, written to stay finite for huge gaps
        return 0.5 * (1.0 + np.tanh(0.5 * (z[:, 1] - z[:, 0])))

    def deltas(self):
        a = self.num_anchors
        _, h, w = self.delta_map.shape
        return self.delta_map.reshape(a, 4, h, w).transpose(2, 3, 0, 1).reshape(-1, 4)


def lift_template(template_feats, w):
    t = as_feature_map(template_feats, "template")
    if t.shape[0] != w.channels:
        raise ShapeError(f"template has {t.shape[0]} channels, head expects {w.channels}")
    c = w.channels
    cls = conv2d(t, w.cls_lift)
    reg = conv2d(t, w.reg_lift)
    return CmKernels(
        cls=cls.reshape(-1, c, *cls.shape[1:]),
        reg=reg.reshape(-1, c, *reg.shape[1:]),
    )


def cm_forward_lifted(kernels, search_feats, w):
    s = as_feature_map(search_feats, "search")
    if s.shape[0] != w.channels:
        raise ShapeError(f"search has {s.shape[0]} channels, head expects {w.channels}")
    score = conv2d(cross_correlate_many(s, kernels.cls), w.cls_adjust)
    delta = conv2d(cross_correlate_many(s, kernels.reg), w.reg_adjust)
    return CmOutput(score, delta, w.num_anchors)


def cm_forward(template_feats, search_feats, w):
    """Lift the template, correlate group-wise with the search map, adjust."""
    return cm_forward_lifted(lift_template(template_feats, w), search_feats, w)


@dataclass
class LabelAssignment:
    labels: np.ndarray  # (N,) in {POSITIVE, NEGATIVE, IGNORE}
    targets: np.ndarray  # (N, 4); rows of non-positive anchors are zero

    @property
    def positive(self):
        return np.flatnonzero(self.labels == POSITIVE)

    @property
    def negative(self):
        return np.flatnonzero(self.labels == NEGATIVE)


def assign_cm_labels(
    anchors,
    target,
    same_category=(),
    ignore_regions=(),
    mode="standard",
    pos_thr=0.6,
    neg_thr=0.3,
):
    """Label anchors by IoU with the target (and, in generalized mode, with
    other same-category objects, which act as additional targets).

    Generalized mode never demotes a standard positive: same-category boxes
    only add positives or move negatives into the ignore band, and ignore
    regions (measured as the fraction of the anchor they cover) only turn
    negatives into ignores.
    """
    if mode not in ("standard", "generalized"):
        raise ValueError(f"unknown label mode {mode!r}")
    a = anchors.anchors if isinstance(anchors, AnchorGrid) else np.asarray(anchors, float)
    sources = [target]
    if mode == "generalized":
        sources += list(same_category)
    src = np.concatenate([np.asarray(b.as_array() if isinstance(b, BBox) else b, float).reshape(1, 4) for b in sources])
    ious = iou_matrix(a, src)
    best = ious.argmax(axis=1)
    best_iou = ious[np.arange(a.shape[0]), best]

    labels = np.full(a.shape[0], IGNORE, dtype=np.int8)
    labels[best_iou < neg_thr] = NEGATIVE
    labels[best_iou > pos_thr] = POSITIVE
    if mode == "generalized" and len(ignore_regions):
        regions = np.concatenate(
            [np.asarray(r.as_array() if isinstance(r, BBox) else r, float).reshape(1, 4) for r in ignore_regions]
        )
        covered = intersection_over_first(a, regions).max(axis=1) > neg_thr
        labels[(labels == NEGATIVE) & covered] = IGNORE

    targets = np.zeros((a.shape[0], 4))
    pos = labels == POSITIVE
    if pos.any():
        targets[pos] = encode_deltas(src[best[pos]], a[pos])
    return LabelAssignment(labels, targets)


@dataclass
class Proposal:
    """Candidate box in search-crop coordinates, carried through both stages."""

    box_cm: BBox
    u_c: float
    anchor_index: int
    reserved: bool = False
    u_f: Optional[float] = None
    box_fm: Optional[BBox] = None
    score: Optional[float] = None
    box: Optional[BBox] = None


def select_proposals(out, anchors, prev_box, k=9, nms_thr=0.5, score_thr=0.05, bounds=(271, 271)):
    """Reserved box plus the top-``k`` NMS survivors (no window/shape penalty).

    The decoded box with the largest IoU against ``prev_box`` is reserved:
    it bypasses the score filter and NMS and comes first. All other boxes
    are score-filtered, NMS'd and truncated to ``k``, so at most ``k + 1``
    proposals are returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(anchors) == 0:
        raise ValueError("empty anchor set")
    scores = out.fg_prob()
    if scores.shape[0] != len(anchors):
        raise ShapeError(f"{scores.shape[0]} scores for {len(anchors)} anchors")
    boxes = clip_boxes(decode_deltas(anchors.anchors, out.deltas(), MAX_LOG_RATIO), *bounds)
    reserved = int(np.argmax(iou_matrix(boxes, prev_box)[:, 0]))

    cand = np.flatnonzero(scores >= score_thr)
    cand = cand[cand != reserved]
    picked = [reserved] + [int(cand[i]) for i in nms(boxes[cand], scores[cand], nms_thr, max_keep=k)]
    return [
        Proposal(BBox.from_array(boxes[i]), float(scores[i]), i, reserved=(n == 0))
        for n, i in enumerate(picked)
    ]
