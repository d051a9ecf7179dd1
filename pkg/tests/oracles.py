"""Independent brute-force oracles used to freeze expected test values.

These deliberately avoid the library's own code paths: plain Python loops,
sets, and flood fill.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np


def iou_by_sets(true: np.ndarray, pred: np.ndarray):
    """Per-class IoU via explicit pixel-coordinate sets; absent classes skipped."""
    classes = sorted(set(true.ravel().tolist()) | set(pred.ravel().tolist()))
    ious = {}
    for c in classes:
        t = {(y, x) for y in range(true.shape[0]) for x in range(true.shape[1])
             if true[y, x] == c}
        p = {(y, x) for y in range(pred.shape[0]) for x in range(pred.shape[1])
             if pred[y, x] == c}
        union = t | p
        if union:
            ious[c] = len(t & p) / len(union)
    mean = sum(ious.values()) / len(ious) if ious else float("nan")
    return ious, mean


def pixel_accuracy_oracle(true: np.ndarray, pred: np.ndarray) -> float:
    return float((true == pred).sum() / true.size)


def confusion_oracle(true: np.ndarray, pred: np.ndarray, C: int) -> np.ndarray:
    counts = np.zeros((C, C), dtype=np.int64)
    for y in range(true.shape[0]):
        for x in range(true.shape[1]):
            counts[true[y, x], pred[y, x]] += 1
    return counts


def flood_fill_components(mask: np.ndarray):
    """4-connected components of a boolean mask via BFS.

    Returns a list of (area, bbox_height, bbox_width).
    """
    H, W = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y0 in range(H):
        for x0 in range(W):
            if not mask[y0, x0] or seen[y0, x0]:
                continue
            queue = deque([(y0, x0)])
            seen[y0, x0] = True
            ys, xs = [], []
            while queue:
                y, x = queue.popleft()
                ys.append(y)
                xs.append(x)
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < H and 0 <= nx < W and mask[ny, nx] \
                            and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            comps.append((len(ys), max(ys) - min(ys) + 1,
                          max(xs) - min(xs) + 1))
    return comps


def _softmax_row(logits):
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    z = sum(exps)
    return [e / z for e in exps]


def ce_oracle(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean -log softmax probability of the true class (python floats)."""
    total, n = 0.0, 0
    for y in range(labels.shape[0]):
        for x in range(labels.shape[1]):
            probs = _softmax_row([float(v) for v in logits[:, y, x]])
            total += -math.log(probs[int(labels[y, x])])
            n += 1
    return total / n


def wce_oracle(logits: np.ndarray, labels: np.ndarray, weights) -> float:
    """Weighted per-pixel CE normalized by the sum of applied weights."""
    total, wsum = 0.0, 0.0
    for y in range(labels.shape[0]):
        for x in range(labels.shape[1]):
            c = int(labels[y, x])
            probs = _softmax_row([float(v) for v in logits[:, y, x]])
            total += -math.log(probs[c]) * weights[c]
            wsum += weights[c]
    return total / wsum


def soft_miou_oracle(probs: np.ndarray, labels: np.ndarray,
                     eps: float = 1e-6) -> float:
    C = probs.shape[0]
    ratios = []
    for c in range(C):
        inter = psum = ysum = 0.0
        for y in range(labels.shape[0]):
            for x in range(labels.shape[1]):
                p = float(probs[c, y, x])
                t = 1.0 if labels[y, x] == c else 0.0
                inter += p * t
                psum += p
                ysum += t
        if psum > 0 or ysum > 0:
            ratios.append((inter + eps) / (psum + ysum - inter + eps))
    return 1.0 - sum(ratios) / len(ratios)


def soft_dice_oracle(probs: np.ndarray, labels: np.ndarray,
                     eps: float = 1e-6) -> float:
    C = probs.shape[0]
    ratios = []
    for c in range(C):
        inter = psum = ysum = 0.0
        for y in range(labels.shape[0]):
            for x in range(labels.shape[1]):
                p = float(probs[c, y, x])
                t = 1.0 if labels[y, x] == c else 0.0
                inter += p * t
                psum += p
                ysum += t
        if psum > 0 or ysum > 0:
            ratios.append((2.0 * inter + eps) / (psum + ysum + eps))
    return 1.0 - sum(ratios) / len(ratios)
