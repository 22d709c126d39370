"""Toy pass-through model and a synthetic moving-square sequence.

The toy extractor has no learned weights. Each tap is the crop's grey level,
shifted by its median and divided by its largest deviation (so a target on
a uniform background reads ~1 and the background 0 in both template and
search crops), box-filtered over ``2 * radius`` pixels and sampled every
``stride`` pixels at crop coordinates ``k * stride``.

The toy heads are hand-set so the pipeline behaves sensibly on that input:

* CM: the foreground kernel of every anchor is the template itself; logits
  are ``gain * (corr / cells - 0.5)``, with a fixed handicap for non-square
  anchors. Box deltas are zero.
* FM: the 1x1 conv splits ``template - proposal`` into positive and negative
  parts. The first hidden unit averages them (mean absolute difference
  ``d``) and the foreground margin is ``bias - slope * d``. Four more units
  carry the left-minus-right and top-minus-bottom sums of ``proposal -
  template``, which are proportional to the box's offset from the target;
  the regression layer turns them into ``dx, dy`` with a gain measured once
  on a rendered reference square (:func:`calibrate_shift_gain`).
"""

import math

import numpy as np

from .boxes import BBox
from .cm import CmHeadConfig, CmHeadWeights
from .fm import FmHeadConfig, FmHeadWeights
from .tracker import ANCHOR_RATIOS, SPMModel
from .weights import ModelWeights

TOY_TAPS = {"conv2": 4, "conv4": 8, "conv5": 8}


class ToyExtractor:
    def __init__(self, strides=None, radius=16):
        self.strides = dict(strides or TOY_TAPS)
        self.radius = radius

    def output_size(self, tap, size):
        return math.ceil(size / self.strides[tap])

    def normalize(self, image):
        gray = np.asarray(image, dtype=np.float64).mean(axis=0)
        g = gray - np.median(gray)
        scale = np.abs(g).max()
        return g / scale if scale > 1e-9 else g

    def __call__(self, image):
        g = self.normalize(image)
        h, w = g.shape
        r = self.radius
        integral = np.zeros((h + 1, w + 1))
        integral[1:, 1:] = g.cumsum(0).cumsum(1)
        taps = {}
        for name, s in self.strides.items():
            ys = np.arange(self.output_size(name, h)) * s
            xs = np.arange(self.output_size(name, w)) * s
            y0, y1 = np.clip(ys - r, 0, h), np.clip(ys + r, 0, h)
            x0, x1 = np.clip(xs - r, 0, w), np.clip(xs + r, 0, w)
            box = (
                integral[y1][:, x1] - integral[y0][:, x1] - integral[y1][:, x0] + integral[y0][:, x0]
            )
            taps[name] = (box / (2 * r) ** 2)[None].astype(np.float32)
        return taps


def _shift_masks(pool_size):
    """+1 on the left (top) half of the bins, -1 on the right (bottom) half."""
    half = np.where(np.arange(pool_size) < pool_size / 2, 1.0, -1.0)
    return np.tile(half, (pool_size, 1)), np.tile(half[:, None], (1, pool_size))


def calibrate_shift_gain(radius=16, pool_size=6, side=40.0, step=1.0):
    """Response of the masked RoI difference to a 1-px box shift (crop pixels).

    Measured on a rendered reference square: pools the template RoI at the
    true box and at boxes displaced by ``+-step`` along x.
    """
    from .fm import roi_align
    from .tracker import CropWindow, context_side, crop_and_resize

    extractor = ToyExtractor(radius=radius)
    box = BBox.from_center(160.0, 120.0, side, side)
    frame = render_square(box)
    win = CropWindow(box.cx, box.cy, context_side(side, side), 127)
    crop = crop_and_resize(frame, win, frame.mean(axis=(1, 2)))
    taps = extractor(crop)
    taps = {n: (taps[n], extractor.strides[n]) for n in ("conv2", "conv4")}
    cbox = win.to_crop(box)
    t = roi_align(taps, cbox, pool_size).astype(np.float64)
    mask_x, _ = _shift_masks(pool_size)
    resp = []
    for d in (step, -step):
        moved = BBox(cbox.x1 + d, cbox.y1, cbox.x2 + d, cbox.y2)
        p = roi_align(taps, moved, pool_size).astype(np.float64)
        resp.append(float(((p - t) * mask_x).sum()))
    return (resp[0] - resp[1]) / (2 * step)


def toy_head_weights(gain=8.0, ratio_handicap=2.0, fm_slope=20.0, fm_bias=2.0,
                     kernel_size=6, ratios=ANCHOR_RATIOS, radius=16):
    """Weights for the toy heads, in the same naming scheme as real heads."""
    a = len(ratios)
    cm_cfg, fm_cfg = toy_head_configs(a)
    w = ModelWeights()

    cls_lift = np.zeros((2 * a, 1, 1, 1))
    cls_lift[1::2] = 1.0
    cells = kernel_size * kernel_size
    adjust = np.zeros((2 * a, 2 * a, 1, 1))
    adjust_bias = np.zeros(2 * a)
    for k, ratio in enumerate(ratios):
        adjust[2 * k + 1, 2 * k + 1] = gain / cells
        adjust_bias[2 * k + 1] = -0.5 * gain - (0.0 if ratio == 1.0 else ratio_handicap)
    w.add("cm.cls_lift.weight", cls_lift)
    w.add("cm.cls_lift.bias", np.zeros(2 * a))
    w.add("cm.reg_lift.weight", np.zeros((4 * a, 1, 1, 1)))
    w.add("cm.reg_lift.bias", np.zeros(4 * a))
    w.add("cm.cls_adjust.weight", adjust)
    w.add("cm.cls_adjust.bias", adjust_bias)
    w.add("cm.reg_adjust.weight", np.zeros((4 * a, 4 * a, 1, 1)))
    w.add("cm.reg_adjust.bias", np.zeros(4 * a))

    # reduce: channel 2c = relu(t - p), 2c + 1 = relu(p - t) for RoI channel c
    c, n = fm_cfg.roi_channels, fm_cfg.pool_size
    reduce = np.zeros((2 * c, 2 * c, 1, 1))
    for ch in range(c):
        reduce[2 * ch, ch], reduce[2 * ch, c + ch] = 1.0, -1.0
        reduce[2 * ch + 1, ch], reduce[2 * ch + 1, c + ch] = -1.0, 1.0

    # fc1: unit 0 = mean |t - p|; units 1-4 = relu(+-masked sum of (p - t))
    fc1 = np.zeros((fm_cfg.hidden, fm_cfg.reduce_channels, n, n))
    fc1[0] = 1.0 / (c * n * n)
    for unit, mask in ((1, _shift_masks(n)[0]), (3, _shift_masks(n)[1])):
        for ch in range(c):
            fc1[unit, 2 * ch], fc1[unit, 2 * ch + 1] = -mask, mask
        fc1[unit + 1] = -fc1[unit]
    fc2 = np.zeros((fm_cfg.hidden, fm_cfg.hidden))
    fc2[np.arange(5), np.arange(5)] = 1.0
    cls = np.zeros((2, fm_cfg.hidden))
    cls[0, 0] = fm_slope

    # a box displaced by e crop pixels reads kappa * e on the masked sum;
    # undo it relative to the nominal box side
    kappa = calibrate_shift_gain(radius=radius, pool_size=n)
    side = 127 / 2
    reg = np.zeros((4, fm_cfg.hidden))
    reg[0, 1], reg[0, 2] = -1.0 / (kappa * side), 1.0 / (kappa * side)
    reg[1, 3], reg[1, 4] = -1.0 / (kappa * side), 1.0 / (kappa * side)

    w.add("fm.reduce.weight", reduce)
    w.add("fm.reduce.bias", np.zeros(2 * c))
    w.add("fm.fc1.weight", fc1.reshape(fm_cfg.hidden, -1))
    w.add("fm.fc1.bias", np.zeros(fm_cfg.hidden))
    w.add("fm.fc2.weight", fc2)
    w.add("fm.fc2.bias", np.zeros(fm_cfg.hidden))
    w.add("fm.cls.weight", cls)
    w.add("fm.cls.bias", np.array([0.0, fm_bias]))
    w.add("fm.reg.weight", reg)
    w.add("fm.reg.bias", np.zeros(4))
    return w


def toy_head_configs(num_anchors=len(ANCHOR_RATIOS)):
    return (
        CmHeadConfig(channels=1, num_anchors=num_anchors),
        FmHeadConfig(roi_channels=2, reduce_channels=4, hidden=256),
    )


def toy_model(weights=None, radius=16):
    w = weights if weights is not None else toy_head_weights(radius=radius)
    cm_cfg, fm_cfg = toy_head_configs()
    # half the template crop: a square target's apparent size under the context rule
    return SPMModel(
        extractor=ToyExtractor(radius=radius),
        cm=CmHeadWeights.from_weights(w, cm_cfg),
        fm=FmHeadWeights.from_weights(w, fm_cfg),
        anchor_base=127 / 2,
    )


def _coverage(lo, hi, n):
    p = np.arange(n)
    return np.clip(np.minimum(hi, p + 1) - np.maximum(lo, p), 0.0, 1.0)


def render_square(box, size=(320, 240), background=40.0, foreground=220.0):
    """``(3, H, W)`` frame with an anti-aliased (area-coverage) square."""
    w, h = size
    cov = np.outer(_coverage(box.y1, box.y2, h), _coverage(box.x1, box.x2, w))
    frame = background + (foreground - background) * cov
    return np.repeat(frame[None], 3, axis=0).astype(np.float32)


def square_path(n_frames=60, size=(320, 240), side=40.0):
    """Ground-truth boxes of a square on a smooth closed Lissajous path."""
    w, h = size
    t = np.arange(n_frames)
    cx = 0.5 * w + 0.2 * w * np.sin(2 * np.pi * t / n_frames)
    cy = 0.5 * h + 0.18 * h * np.sin(4 * np.pi * t / n_frames + 0.5)
    return [BBox.from_center(float(x), float(y), side, side) for x, y in zip(cx, cy)]


def synthetic_square_sequence(n_frames=60, size=(320, 240), side=40.0,
                              background=40.0, foreground=220.0):
    """``(frames, boxes)`` for a bright square moving over a flat background."""
    boxes = square_path(n_frames, size, side)
    frames = [render_square(b, size, background, foreground) for b in boxes]
    return frames, boxes
