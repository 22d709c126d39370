"""Series-parallel tracker: CM proposals refined and rescored by FM, fused.

Per frame: crop the search region, run the backbone, propose with the
coarse head, score every proposal with the relation head, fuse the two
stages' scores and boxes, apply the cosine window, pick the best.
"""

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boxes import BBox, clip_boxes, decode_deltas, generate_anchors, to_center
from .cm import CmHeadConfig, CmHeadWeights, cm_forward_lifted, lift_template, select_proposals
from .featnet import CANONICAL_BACKBONE, Backbone, central_crop
from .fm import ROI_TAPS, FmHeadConfig, FmHeadWeights, relation_head_batch, roi_align
from .kernels import bilinear_sample_many

ANCHOR_RATIOS = (0.33, 0.5, 1.0, 2.0, 3.0)
CONFIG_ENV = "SPMTRACK_CONFIG"


class DegenerateScoreError(ValueError):
    pass


@dataclass(frozen=True)
class FusionWeights:
    w_cls: float = 0.5
    w_box: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.w_cls <= 1.0 or self.w_box < 0.0:
            raise ValueError(f"invalid fusion weights {self}")


def fuse_score(u_c, u_f, fw=FusionWeights()):
    return (1.0 - fw.w_cls) * u_c + fw.w_cls * u_f


def fuse_box(box_c, box_f, u_c, u_f, fw=FusionWeights()):
    """Score-weighted average of the two stages' boxes, in center form."""
    denom = fw.w_box * u_f + u_c
    if not denom > 0.0:
        raise DegenerateScoreError(f"u_c + W_box * u_f = {denom} must be positive")
    a = u_c / denom
    b = fw.w_box * u_f / denom
    c = [a * p + b * q for p, q in zip(box_c.center_form, box_f.center_form)]
    return BBox.from_center(*c)


def cosine_window(h, w):
    """Outer product of Hann windows; a length-1 window is ``[1]``."""
    return np.outer(np.hanning(h), np.hanning(w))


def apply_window_penalty(scores, centers, window, influence, offset, stride):
    """Blend each score with the window value at its nearest response cell.

    Cell ``(i, j)`` sits at ``offset + (j + 0.5) * stride`` (see AnchorGrid).
    """
    scores = np.asarray(scores, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    gh, gw = window.shape
    j = np.clip(np.round((centers[:, 0] - offset) / stride - 0.5), 0, gw - 1).astype(int)
    i = np.clip(np.round((centers[:, 1] - offset) / stride - 0.5), 0, gh - 1).astype(int)
    return (1.0 - influence) * scores + influence * window[i, j]


def context_side(w, h):
    """Side of the square template context region around a ``w x h`` target."""
    p = 0.5 * (w + h)
    return math.sqrt((w + p) * (h + p))


@dataclass(frozen=True)
class CropWindow:
    """Square image region ``side`` wide centred on ``(cx, cy)``, resampled to ``out_size``."""

    cx: float
    cy: float
    side: float
    out_size: int

    @property
    def scale(self):
        return self.out_size / self.side

    @property
    def origin(self):
        return self.cx - 0.5 * self.side, self.cy - 0.5 * self.side

    def to_crop(self, box):
        x0, y0 = self.origin
        s = self.scale
        return BBox((box.x1 - x0) * s, (box.y1 - y0) * s, (box.x2 - x0) * s, (box.y2 - y0) * s)

    def to_image(self, box):
        x0, y0 = self.origin
        s = 1.0 / self.scale
        return BBox(box.x1 * s + x0, box.y1 * s + y0, box.x2 * s + x0, box.y2 * s + y0)


def crop_and_resize(image, window, fill):
    """Bilinear resample of ``window`` from a ``(C, H, W)`` image.

    Pixel ``p`` covers ``[p, p + 1)``; out-of-frame samples take ``fill``
    (one value per channel).
    """
    fill = np.asarray(fill, dtype=np.float64).reshape(-1, 1, 1)
    n = window.out_size
    x0, y0 = window.origin
    step = window.side / n
    centers = (np.arange(n) + 0.5) * step - 0.5
    gy, gx = np.meshgrid(y0 + centers, x0 + centers, indexing="ij")
    shifted = np.asarray(image, dtype=np.float64) - fill
    vals = bilinear_sample_many(shifted, gx.ravel(), gy.ravel()).astype(np.float64)
    out = vals.reshape(-1, n, n) + fill
    return out.astype(np.float32)


@dataclass(frozen=True)
class TrackerConfig:
    k: int = 9
    w_cls: float = 0.5
    w_box: float = 2.0
    window_influence: float = 0.42
    size_lr: float = 0.3
    nms_thr: float = 0.5
    score_thr: float = 0.05
    template_size: int = 127
    search_size: int = 271
    samples_per_bin: int = 2
    max_log_ratio: float = math.log(1000.0 / 16.0)
    min_size: float = 4.0

    @property
    def fusion(self):
        return FusionWeights(self.w_cls, self.w_box)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def default(cls):
        """Defaults, overridden by the JSON file named in ``$SPMTRACK_CONFIG``."""
        path = os.environ.get(CONFIG_ENV)
        return cls.from_file(path) if path else cls()


@dataclass
class SPMModel:
    """Extractor plus both matching heads and the anchor layout.

    ``extractor(image)`` returns tap name -> feature map and exposes
    ``strides`` (tap -> stride) and ``output_size(tap, input_size)``.
    """

    extractor: object
    cm: CmHeadWeights
    fm: FmHeadWeights
    cm_tap: str = "conv5"
    roi_taps: tuple = ROI_TAPS
    kernel_size: int = 6
    anchor_base: float = 64.0
    ratios: tuple = ANCHOR_RATIOS

    @classmethod
    def from_weights(cls, w, backbone_cfg=CANONICAL_BACKBONE, cm_cfg=CmHeadConfig(), fm_cfg=FmHeadConfig()):
        return cls(
            extractor=Backbone(w, backbone_cfg),
            cm=CmHeadWeights.from_weights(w, cm_cfg),
            fm=FmHeadWeights.from_weights(w, fm_cfg),
        )

    @property
    def anchor_stride(self):
        return self.extractor.strides[self.cm_tap]


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TemplateCache:
    taps: dict
    kernel_feats: np.ndarray
    kernels: object
    roi: np.ndarray


@dataclass(frozen=True)
class TrackerState:
    template: TemplateCache
    box: BBox
    window: np.ndarray
    anchors: object
    config: TrackerConfig
    image_size: tuple  # (width, height)
    frame: int = 0


@dataclass
class FrameResult:
    box: BBox
    score: float
    state: TrackerState
    proposals: list = field(default_factory=list)
    search_window: Optional[CropWindow] = None


def update_state(state, box, rate):
    """Move to ``box``'s centre; blend the size with rate ``rate``."""
    w = (1.0 - rate) * state.box.w + rate * box.w
    h = (1.0 - rate) * state.box.h + rate * box.h
    return dataclasses.replace(state, box=BBox.from_center(box.cx, box.cy, w, h))


def _frame_mean(image):
    return np.asarray(image, dtype=np.float64).mean(axis=(1, 2))


class Tracker:
    def __init__(self, model, config=None):
        self.model = model
        self.config = config or TrackerConfig()

    def search_window(self, box):
        cfg = self.config
        side = context_side(box.w, box.h) * cfg.search_size / cfg.template_size
        return CropWindow(box.cx, box.cy, side, cfg.search_size)

    def template_window(self, box):
        return CropWindow(box.cx, box.cy, context_side(box.w, box.h), self.config.template_size)

    def init(self, image, box):
        if not box.is_valid():
            raise ValueError(f"degenerate initial box {box}")
        m, cfg = self.model, self.config
        image = np.asarray(image, dtype=np.float32)
        win = self.template_window(box)
        z = crop_and_resize(image, win, _frame_mean(image))
        taps = m.extractor(z)
        kernel_feats = central_crop(taps[m.cm_tap], m.kernel_size)
        kernels = lift_template(kernel_feats, m.cm)
        roi = roi_align(
            {t: (taps[t], m.extractor.strides[t]) for t in m.roi_taps},
            win.to_crop(box), m.kernel_size, cfg.samples_per_bin, m.roi_taps,
        )
        grid = m.extractor.output_size(m.cm_tap, cfg.search_size) - m.kernel_size + 1
        stride = m.anchor_stride
        anchors = generate_anchors(
            grid, grid, stride, m.anchor_base, m.ratios,
            offset=0.5 * cfg.search_size - 0.5 * grid * stride,
        )
        cache = TemplateCache(
            taps={k: _frozen(v) for k, v in taps.items()},
            kernel_feats=_frozen(kernel_feats),
            kernels=type(kernels)(_frozen(kernels.cls), _frozen(kernels.reg)),
            roi=_frozen(roi),
        )
        h, w = image.shape[1:]
        return TrackerState(cache, box, cosine_window(grid, grid), anchors, cfg, (w, h))

    def propose(self, state, image, center_box=None):
        """CM stage on a search crop around ``center_box`` (default: state box)."""
        m, cfg = self.model, self.config
        image = np.asarray(image, dtype=np.float32)
        ref = center_box or state.box
        win = self.search_window(ref)
        x = crop_and_resize(image, win, _frame_mean(image))
        taps = m.extractor(x)
        out = cm_forward_lifted(state.template.kernels, taps[m.cm_tap], m.cm)
        return taps, win, out

    def track(self, state, image):
        if not isinstance(state, TrackerState):
            raise TypeError("tracker state is not initialised; call init() first")
        m, cfg = self.model, self.config
        taps, win, out = self.propose(state, image)
        size = cfg.search_size
        proposals = select_proposals(
            out, state.anchors, win.to_crop(state.box), cfg.k, cfg.nms_thr, cfg.score_thr, (size, size)
        )
        search_taps = {t: (taps[t], m.extractor.strides[t]) for t in m.roi_taps}
        rois = np.stack(
            [roi_align(search_taps, p.box_cm, m.kernel_size, cfg.samples_per_bin, m.roi_taps) for p in proposals]
        )
        fg, deltas = relation_head_batch(state.template.roi, rois, m.fm)
        deltas = deltas.copy()
        deltas[:, 2:] = np.clip(deltas[:, 2:], -cfg.max_log_ratio, cfg.max_log_ratio)
        cm_boxes = np.stack([p.box_cm.as_array() for p in proposals])
        fm_boxes = clip_boxes(decode_deltas(cm_boxes, deltas), size, size)
        fw = cfg.fusion
        for p, u_f, fb in zip(proposals, fg, fm_boxes):
            p.u_f = float(u_f)
            p.box_fm = BBox.from_array(fb)
            p.score = fuse_score(p.u_c, p.u_f, fw)
            p.box = fuse_box(p.box_cm, p.box_fm, p.u_c, p.u_f, fw)

        scores = np.array([p.score for p in proposals])
        centers = to_center(np.stack([p.box.as_array() for p in proposals]))[:, :2]
        grid = state.anchors
        penalized = apply_window_penalty(
            scores, centers, state.window, cfg.window_influence, grid.offset, grid.stride
        )
        best = proposals[int(np.argmax(penalized))]

        new = update_state(state, win.to_image(best.box), cfg.size_lr)
        new = dataclasses.replace(new, box=self._bounded(new.box, state.image_size), frame=state.frame + 1)
        return FrameResult(new.box, best.score, new, proposals, win)

    def _bounded(self, box, image_size):
        w, h = image_size
        cx = min(max(box.cx, 0.0), float(w))
        cy = min(max(box.cy, 0.0), float(h))
        bw = min(max(box.w, self.config.min_size), float(w))
        bh = min(max(box.h, self.config.min_size), float(h))
        return BBox.from_center(cx, cy, bw, bh)
