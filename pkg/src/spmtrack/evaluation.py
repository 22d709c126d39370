"""One-pass evaluation metrics and the proposal-recall protocol."""

from dataclasses import dataclass

import numpy as np

from .boxes import BBox, iou_matrix, to_center
from .cm import select_proposals

SUCCESS_THRESHOLDS = np.round(np.arange(101) * 0.01, 2)
PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
RECALL_THRESHOLDS = np.round(0.5 + 0.05 * np.arange(5), 2)


def _as_corners(boxes):
    return np.asarray(
        [b.as_array() if isinstance(b, BBox) else b for b in boxes], dtype=np.float64
    ).reshape(-1, 4)


def _aligned(results, gt):
    r, g = _as_corners(results), _as_corners(gt)
    if r.shape != g.shape:
        raise ValueError(f"{len(r)} result boxes vs {len(g)} ground-truth boxes")
    return r, g


def frame_ious(results, gt):
    r, g = _aligned(results, gt)
    return np.array([iou_matrix(a, b)[0, 0] for a, b in zip(r, g)])


def center_errors(results, gt):
    r, g = _aligned(results, gt)
    d = to_center(r)[:, :2] - to_center(g)[:, :2]
    return np.hypot(d[:, 0], d[:, 1])


def success_curve(results, gt, thresholds=SUCCESS_THRESHOLDS):
    """``(thresholds, success, auc)``; success(t) counts frames with IoU > t.

    A perfect overlap (IoU == 1) counts at every threshold, including t = 1,
    so exact tracking scores AUC 1. The AUC is the mean of the sampled
    success values.
    """
    ious = frame_ious(results, gt)
    t = np.asarray(thresholds, dtype=np.float64)
    success = ((ious[None, :] > t[:, None]) | (ious[None, :] >= 1.0)).mean(axis=1)
    return t, success, float(success.mean())


def precision_curve(results, gt, max_error=50):
    """``(thresholds, precision, precision@20)``; error <= e counts as hit."""
    err = center_errors(results, gt)
    t = np.arange(int(max_error) + 1, dtype=np.float64)
    precision = (err[None, :] <= t[:, None]).mean(axis=1)
    return t, precision, float((err <= 20.0).mean())


@dataclass
class RecallTable:
    ks: tuple
    thresholds: np.ndarray
    recall: np.ndarray  # (len(ks), len(thresholds))

    @property
    def mean_recall(self):
        return self.recall.mean(axis=1)

    def rows(self):
        for k, row, mean in zip(self.ks, self.recall, self.mean_recall):
            for t, v in zip(self.thresholds, row):
                yield k, f"{t:.2f}", float(v)
            yield k, "mean", float(mean)


def best_overlaps(tracker, frames, boxes, ks):
    """Per frame (from frame 1) and per K, the best proposal IoU with truth.

    The template comes from frame 0; the search region of frame t is cut
    around the true box of frame t-1, which is also the reservation anchor.
    """
    state = tracker.init(frames[0], boxes[0])
    cfg = tracker.config
    size = cfg.search_size
    out = np.zeros((len(frames) - 1, len(ks)))
    for t in range(1, len(frames)):
        prev = boxes[t - 1]
        _, win, cm_out = tracker.propose(state, frames[t], center_box=prev)
        for n, k in enumerate(ks):
            props = select_proposals(
                cm_out, state.anchors, win.to_crop(prev), k, cfg.nms_thr, cfg.score_thr, (size, size)
            )
            img_boxes = _as_corners([win.to_image(p.box_cm) for p in props])
            out[t - 1, n] = iou_matrix(img_boxes, boxes[t]).max()
    return out


def recall_analysis(tracker, frames, boxes, ks=(1, 3, 5, 7, 9), thresholds=RECALL_THRESHOLDS):
    if len(frames) < 2:
        raise ValueError("recall analysis needs at least two frames")
    ks = tuple(int(k) for k in ks)
    best = best_overlaps(tracker, frames, boxes, ks)
    t = np.asarray(thresholds, dtype=np.float64)
    recall = (best.T[:, :, None] > t[None, None, :]).mean(axis=1)
    return RecallTable(ks, t, recall)
