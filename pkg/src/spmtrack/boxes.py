"""Box geometry in continuous pixel coordinates.

Boxes are corner form ``(x1, y1, x2, y2)`` with ``x2 > x1``, ``y2 > y1``;
width is ``x2 - x1`` (no +1). Array functions take ``(N, 4)`` arrays.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)

    @classmethod
    def from_xywh(cls, x, y, w, h):
        """Top-left + size (OTB ground-truth convention)."""
        return cls(x, y, x + w, y + h)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=np.float64).reshape(4)
        return cls(*(float(v) for v in a))

    @property
    def w(self):
        return self.x2 - self.x1

    @property
    def h(self):
        return self.y2 - self.y1

    @property
    def cx(self):
        return 0.5 * (self.x1 + self.x2)

    @property
    def cy(self):
        return 0.5 * (self.y1 + self.y2)

    @property
    def center_form(self):
        return (self.cx, self.cy, self.w, self.h)

    def to_xywh(self):
        return (self.x1, self.y1, self.w, self.h)

    def as_array(self):
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def is_valid(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        return all(math.isfinite(v) for v in vals) and self.w > 0 and self.h > 0


class BoxDelta(NamedTuple):
    dx: float
    dy: float
    dw: float
    dh: float


def _arr(boxes):
    if isinstance(boxes, BBox):
        return boxes.as_array()[None]
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)


def to_center(boxes):
    b = _arr(boxes)
    w = b[:, 2] - b[:, 0]
    h = b[:, 3] - b[:, 1]
    return np.stack([b[:, 0] + 0.5 * w, b[:, 1] + 0.5 * h, w, h], axis=1)


def from_center(c):
    c = np.asarray(c, dtype=np.float64).reshape(-1, 4)
    hw, hh = 0.5 * c[:, 2], 0.5 * c[:, 3]
    return np.stack([c[:, 0] - hw, c[:, 1] - hh, c[:, 0] + hw, c[:, 1] + hh], axis=1)


def iou_matrix(a, b):
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    a, b = _arr(a), _arr(b)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou(a, b):
    return float(iou_matrix(a, b)[0, 0])


def intersection_over_first(a, b):
    """Fraction of each box in ``a`` covered by each box in ``b``."""
    a, b = _arr(a), _arr(b)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    return inter / area_a[:, None]


@dataclass(frozen=True)
class AnchorGrid:
    """Anchors ordered by (row, col, ratio); ``anchors`` is ``(H*W*A, 4)``.

    Anchor ``(i, j, a)`` is centred at
    ``(offset + (j + 0.5) * stride, offset + (i + 0.5) * stride)``.
    """

    anchors: np.ndarray
    grid_h: int
    grid_w: int
    stride: float
    ratios: tuple
    base_size: float
    offset: float = 0.0

    @property
    def num_anchors(self):
        return len(self.ratios)

    def __len__(self):
        return self.anchors.shape[0]

    def cell_of(self, index):
        """``(row, col, ratio_index)`` of a flat anchor index."""
        a = len(self.ratios)
        cell, k = divmod(int(index), a)
        return cell // self.grid_w, cell % self.grid_w, k


def generate_anchors(grid_h, grid_w, stride, base_size, ratios, offset=0.0):
    if grid_h < 1 or grid_w < 1 or stride <= 0 or base_size <= 0 or not ratios:
        raise ValueError("anchor grid dimensions, stride and base size must be positive")
    ratios = tuple(float(r) for r in ratios)
    r = np.asarray(ratios)
    ws = base_size * np.sqrt(r)
    hs = base_size / np.sqrt(r)
    cy = offset + (np.arange(grid_h) + 0.5) * stride
    cx = offset + (np.arange(grid_w) + 0.5) * stride
    gy, gx, gw = np.meshgrid(cy, cx, ws, indexing="ij")
    _, _, gh = np.meshgrid(cy, cx, hs, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel(), gw.ravel(), gh.ravel()], axis=1)
    return AnchorGrid(from_center(centers), grid_h, grid_w, stride, ratios, base_size, offset)


def encode_deltas(gt, anchors):
    g, a = to_center(gt), to_center(anchors)
    return np.stack(
        [
            (g[:, 0] - a[:, 0]) / a[:, 2],
            (g[:, 1] - a[:, 1]) / a[:, 3],
            np.log(g[:, 2] / a[:, 2]),
            np.log(g[:, 3] / a[:, 3]),
        ],
        axis=1,
    )


MAX_LOG_RATIO = math.log(1000.0 / 16.0)


def decode_deltas(anchors, deltas, max_log_ratio=None):
    """Inverse of :func:`encode_deltas`.

    With ``max_log_ratio`` set, ``dw, dh`` are clamped from above first
    (keeps raw network outputs from overflowing ``exp``).
    """
    a = to_center(anchors)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    if max_log_ratio is not None:
        d = d.copy()
        d[:, 2:] = np.minimum(d[:, 2:], max_log_ratio)
    c = np.stack(
        [
            a[:, 0] + d[:, 0] * a[:, 2],
            a[:, 1] + d[:, 1] * a[:, 3],
            a[:, 2] * np.exp(d[:, 2]),
            a[:, 3] * np.exp(d[:, 3]),
        ],
        axis=1,
    )
    return from_center(c)


def encode_delta(gt, anchor):
    return BoxDelta(*(float(v) for v in encode_deltas(gt, anchor)[0]))


def decode_delta(anchor, d):
    return BBox.from_array(decode_deltas(anchor, np.asarray(d, dtype=np.float64))[0])


def nms(boxes, scores, iou_threshold, max_keep=None):
    """Greedy NMS; returns kept indices in descending score order.

    Equal scores are ranked by lower index. A box is discarded when its IoU
    with an already kept box is strictly greater than ``iou_threshold``.
    Stopping after ``max_keep`` boxes yields a prefix of the full result.
    """
    b = _arr(boxes) if len(boxes) else np.zeros((0, 4))
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if b.shape[0] != s.shape[0]:
        raise ValueError(f"{b.shape[0]} boxes but {s.shape[0]} scores")
    order = np.argsort(-s, kind="stable")
    areas = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        if max_keep is not None and len(keep) >= max_keep:
            break
        rest = order[1:]
        ix1 = np.maximum(b[i, 0], b[rest, 0])
        iy1 = np.maximum(b[i, 1], b[rest, 1])
        ix2 = np.minimum(b[i, 2], b[rest, 2])
        iy2 = np.minimum(b[i, 3], b[rest, 3])
        inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)
        union = areas[i] + areas[rest] - inter
        ov = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        order = rest[ov <= iou_threshold]
    return keep


def clip_boxes(boxes, width, height):
    """Clamp to ``[0, W] x [0, H]``; sides collapsed below 1 px become 1 px."""
    b = _arr(boxes).copy()
    b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0, width)
    b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0, height)
    for lo, hi, limit in ((0, 2, width), (1, 3, height)):
        thin = b[:, hi] - b[:, lo] < 1.0
        b[thin, lo] = np.minimum(b[thin, lo], limit - 1.0)
        b[thin, hi] = b[thin, lo] + 1.0
    return b


def clip_box(b, width, height):
    return BBox.from_array(clip_boxes(b, width, height)[0])
