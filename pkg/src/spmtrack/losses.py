"""Training objective: two-way cross-entropy, smooth L1 and their weighted sum.

These are pure float64 functions returning ``(loss, gradient)``; losses are
means over contributing samples.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    cm_cls: float = 1.0
    cm_b: float = 2.0
    fm_cls: float = 1.0
    fm_b: float = 1.0


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy over ``(N, 2)`` logits with 0/1 labels."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("cross_entropy needs a non-empty (N, C) logit array")
    if y.shape[0] != z.shape[0]:
        raise ValueError(f"{z.shape[0]} logit rows but {y.shape[0]} labels")
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_norm[:, None]
    loss = -log_p[np.arange(n), y].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), y] -= 1.0
    return float(loss), grad / n


def smooth_l1(pred, target):
    """Mean over samples of the per-sample sum of smooth-L1 over 4 coords.

    No samples gives ``(0.0, empty gradient)``.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    t = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
    n = p.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(p)
    x = p - t
    ax = np.abs(x)
    small = ax < 1.0
    per = np.where(small, 0.5 * x * x, ax - 0.5)
    grad = np.where(small, x, np.sign(x)) / n
    return float(per.sum() / n), grad


def total_loss(cm_cls, cm_b, fm_cls, fm_b, lw=LossWeights()):
    return lw.cm_cls * cm_cls + lw.cm_b * cm_b + lw.fm_cls * fm_cls + lw.fm_b * fm_b


@dataclass
class LossReport:
    cm_cls: float
    cm_b: float
    fm_cls: float
    fm_b: float
    total: float
    grads: dict


def spm_loss(cm_logits, cm_labels, cm_deltas, cm_targets,
             fm_logits, fm_labels, fm_deltas, fm_targets, lw=LossWeights()):
    """All four terms from per-sample head outputs and label assignments.

    CM labels use 1 / 0 / -1 (ignored rows get zero gradient). Regression
    terms only count positive rows. Gradients have the input shapes.
    """
    cm_labels = np.asarray(cm_labels).reshape(-1)
    fm_labels = np.asarray(fm_labels).astype(np.int64).reshape(-1)
    cm_logits = np.asarray(cm_logits, dtype=np.float64)
    fm_logits = np.asarray(fm_logits, dtype=np.float64)
    cm_deltas = np.asarray(cm_deltas, dtype=np.float64)
    fm_deltas = np.asarray(fm_deltas, dtype=np.float64)
    used = cm_labels >= 0
    pos_cm = cm_labels == 1
    pos_fm = fm_labels == 1

    grads = {
        "cm_logits": np.zeros_like(cm_logits),
        "cm_deltas": np.zeros_like(cm_deltas),
        "fm_logits": np.zeros_like(fm_logits),
        "fm_deltas": np.zeros_like(fm_deltas),
    }
    l_cm_cls, g = cross_entropy(cm_logits[used], cm_labels[used])
    grads["cm_logits"][used] = lw.cm_cls * g
    l_cm_b, g = smooth_l1(cm_deltas[pos_cm], np.asarray(cm_targets)[pos_cm])
    grads["cm_deltas"][pos_cm] = lw.cm_b * g
    l_fm_cls, g = cross_entropy(fm_logits, fm_labels)
    grads["fm_logits"] = lw.fm_cls * g
    l_fm_b, g = smooth_l1(fm_deltas[pos_fm], np.asarray(fm_targets)[pos_fm])
    grads["fm_deltas"][pos_fm] = lw.fm_b * g
    total = total_loss(l_cm_cls, l_cm_b, l_fm_cls, l_fm_b, lw)
    return LossReport(l_cm_cls, l_cm_b, l_fm_cls, l_fm_b, total, grads)
