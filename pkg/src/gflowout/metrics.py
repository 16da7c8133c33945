"""Accuracy, AUROC, AUPR and total-variation distance."""

from fractions import Fraction

import numpy as np


def accuracy(predictions, labels):
    """Fraction of correct predictions.

    ``predictions`` is either a vector of class indices or a score matrix;
    for scores, ``np.argmax`` breaks ties toward the lowest class index.
    """
    pred = np.asarray(predictions)
    labels = np.asarray(labels)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    if pred.shape[0] != labels.shape[0]:
        raise ValueError("predictions and labels differ in length")
    if labels.shape[0] == 0:
        raise ValueError("empty input")
    return float(np.mean(pred == labels))


def _split(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels)
    if s.shape != l.shape or s.ndim != 1:
        raise ValueError("scores and labels must be vectors of equal length")
    if not np.all((l == 0) | (l == 1)):
        raise ValueError("labels must be binary")
    return s[l == 1], s[l == 0]


def auroc_fraction(scores, labels):
    """Mann-Whitney AUROC as an exact rational: P(s+ > s-) + P(s+ == s-) / 2."""
    pos, neg = _split(scores, labels)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUROC needs both classes")
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    twice = int(np.sum(2 * below + (upto - below)))
    return Fraction(twice, 2 * pos.size * neg.size)


def auroc(scores, labels):
    return float(auroc_fraction(scores, labels))


def aupr(scores, labels):
    """Step-wise area under the precision-recall curve (average precision).

    Thresholds sweep the distinct scores in descending order; tied scores
    enter together.  AUPR = sum_k (R_k - R_{k-1}) P_k.
    """
    pos, _ = _split(scores, labels)
    if pos.size == 0:
        raise ValueError("AUPR needs at least one positive")
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels).astype(np.int64)
    order = np.argsort(-s, kind="mergesort")
    s, l = s[order], l[order]
    tp = np.cumsum(l)
    fp = np.cumsum(1 - l)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / pos.size
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def tv_distance(p, q, tol=1e-6):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions have different support sizes")
    for d in (p, q):
        if np.any(d < 0) or abs(d.sum() - 1.0) > tol:
            raise ValueError("input is not a normalized distribution")
    return float(0.5 * np.abs(p - q).sum())
